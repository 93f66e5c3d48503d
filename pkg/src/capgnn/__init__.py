"""GCN training with alternating adversarial weight/feature perturbation.

Submodules are imported explicitly (``capgnn.train``, ``capgnn.graph``, ...)
so that the CLI can cap BLAS thread counts before numpy is loaded.
"""

__version__ = "0.1.0"
