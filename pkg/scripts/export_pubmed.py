#!/usr/bin/env python3
"""Convert the classic Pubmed citation-network release to a dataset directory.

Input is the widely mirrored pickled release (eight files named
``ind.pubmed.x / .y / .tx / .ty / .allx / .ally / .graph / .test.index``).
Output is the plain-text layout this package trains from (meta.json,
edges.tsv, features.csv, labels.txt, split.json). The exported split is
a seeded 60/20/20 per-class split; the full-supervised experiments
re-split per seed anyway.

Usage:
    python scripts/export_pubmed.py --raw_dir /path/to/raw --out_dir data/pubmed
"""

import argparse
import pickle
import sys
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from capgnn.graph import make_dataset, random_split, save_dataset
from capgnn.linalg import CsrMatrix, make_rng

EXPECTED_NODES = 19717
EXPECTED_EDGES = 44338  # published count; mirrors differ slightly by dedup rules


def _load_pickle(path: Path):
    with path.open("rb") as f:
        return pickle.load(f, encoding="latin1")


def load_raw(raw_dir: Path):
    parts = {}
    for name in ("x", "y", "tx", "ty", "allx", "ally", "graph"):
        path = raw_dir / f"ind.pubmed.{name}"
        if not path.is_file():
            sys.exit(f"missing {path}")
        parts[name] = _load_pickle(path)
    test_idx = np.loadtxt(raw_dir / "ind.pubmed.test.index", dtype=np.int64)
    return parts, test_idx


def assemble(parts, test_idx):
    """Stack labeled/unlabeled/test blocks and put test rows back in order."""
    features = sp.vstack([parts["allx"], parts["tx"]]).tolil()
    labels_1hot = np.vstack([parts["ally"], parts["ty"]])
    order = np.sort(test_idx)
    features[test_idx, :] = features[order, :]
    labels_1hot[test_idx, :] = labels_1hot[order, :]
    x = np.asarray(features.todense(), dtype=np.float64)
    labels = labels_1hot.argmax(axis=1).astype(np.int64)
    return x, labels


def edges_from_graph(graph: dict, n: int):
    pairs = set()
    skipped_self = 0
    for u, neighbors in graph.items():
        for v in neighbors:
            if u == v:
                skipped_self += 1
                continue
            pairs.add((min(int(u), int(v)), max(int(u), int(v))))
    if skipped_self:
        print(f"dropped {skipped_self} self-loop entries")
    us = np.fromiter((p[0] for p in sorted(pairs)), dtype=np.int64)
    vs = np.fromiter((p[1] for p in sorted(pairs)), dtype=np.int64)
    return us, vs


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--raw_dir", required=True)
    parser.add_argument("--out_dir", default="data/pubmed")
    parser.add_argument("--split_seed", type=int, default=0)
    args = parser.parse_args()

    parts, test_idx = load_raw(Path(args.raw_dir))
    x, labels = assemble(parts, test_idx)
    n, d = x.shape
    num_classes = int(labels.max()) + 1
    print(f"nodes={n} features={d} classes={num_classes}")
    if n != EXPECTED_NODES:
        sys.exit(f"expected {EXPECTED_NODES} nodes, got {n}")

    us, vs = edges_from_graph(parts["graph"], n)
    print(f"undirected edges: {len(us)}")
    if len(us) != EXPECTED_EDGES:
        print(
            f"warning: edge count differs from the published {EXPECTED_EDGES} "
            "(mirrors vary in duplicate/self-loop handling)"
        )
    adjacency = CsrMatrix.from_coo(
        n, n,
        np.concatenate([us, vs]), np.concatenate([vs, us]),
        np.ones(2 * len(us)),
    )
    train, val, test = random_split(labels, (0.6, 0.2, 0.2), make_rng(args.split_seed))
    ds = make_dataset(adjacency, x, labels, num_classes, train, val, test)
    save_dataset(ds, args.out_dir)
    print(f"wrote {args.out_dir}")


if __name__ == "__main__":
    main()
