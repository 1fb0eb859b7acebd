#!/usr/bin/env python3
"""Convert Planetoid files (ind.<name>.{x,y,tx,ty,allx,ally,graph,test.index})
into the geoformer dataset directory layout, keeping the public split:
the first len(y) nodes train, the next 500 validate, test.index tests."""

import argparse
import json
import pickle
import sys
from pathlib import Path

import numpy as np
import scipy.sparse as sp


def load_part(raw: Path, name: str, part: str):
    with open(raw / f"ind.{name}.{part}", "rb") as f:
        return pickle.load(f, encoding="latin1")


def export(raw: Path, name: str, out: Path, normalize: bool) -> None:
    x, y, tx, ty, allx, ally, graph = (load_part(raw, name, p) for p in ("x", "y", "tx", "ty", "allx", "ally", "graph"))
    test_index = [int(line) for line in (raw / f"ind.{name}.test.index").read_text().split()]
    test_sorted = np.sort(test_index)

    # Citeseer has test ids with no features; pad them with zero rows.
    lo, hi = test_sorted.min(), test_sorted.max()
    if hi - lo + 1 != len(test_sorted):
        tx_full = sp.lil_matrix((hi - lo + 1, tx.shape[1]))
        tx_full[test_sorted - lo, :] = tx
        tx = tx_full
        ty_full = np.zeros((hi - lo + 1, y.shape[1]))
        ty_full[test_sorted - lo, :] = ty
        ty = ty_full

    features = sp.vstack((allx, tx)).tolil()
    features[test_index, :] = features[test_sorted, :]
    onehot = np.vstack((ally, ty))
    onehot[test_index, :] = onehot[test_sorted, :]

    features = sp.csr_matrix(features, dtype=np.float64)
    if normalize:
        sums = np.asarray(features.sum(axis=1)).ravel()
        sums[sums == 0] = 1.0
        features = sp.diags(1.0 / sums) @ features
    dense = features.toarray()

    n = dense.shape[0]
    has_label = onehot.sum(axis=1) > 0
    labels = np.where(has_label, onehot.argmax(axis=1), 0)

    edges = set()
    for u, nbrs in graph.items():
        for v in nbrs:
            if u != v and u < n and v < n:
                edges.add((min(u, v), max(u, v)))

    train = list(range(y.shape[0]))
    val = list(range(y.shape[0], y.shape[0] + 500))
    test = [int(t) for t in test_sorted if has_label[t]]

    out.mkdir(parents=True, exist_ok=True)
    (out / "meta.json").write_text(
        json.dumps({"num_nodes": n, "num_features": dense.shape[1], "num_classes": onehot.shape[1]}) + "\n")
    with open(out / "edges.tsv", "w") as f:
        for u, v in sorted(edges):
            f.write(f"{u}\t{v}\n")
    with open(out / "features.csv", "w") as f:
        for row in dense:
            f.write(",".join(repr(float(v)) if v else "0" for v in row) + "\n")
    with open(out / "labels.tsv", "w") as f:
        f.writelines(f"{int(c)}\n" for c in labels)
    (out / "splits.json").write_text(json.dumps({"train": train, "val": val, "test": test}) + "\n")
    print(f"{name}: {n} nodes, {len(edges)} edges, {dense.shape[1]} features, {onehot.shape[1]} classes; "
          f"split {len(train)}/{len(val)}/{len(test)} -> {out}")


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("raw", type=Path, help="directory holding the ind.<name>.* files")
    ap.add_argument("out", type=Path, help="output dataset directory")
    ap.add_argument("--name", default="cora")
    ap.add_argument("--raw-features", action="store_true", help="skip row normalization of features")
    args = ap.parse_args()
    export(args.raw, args.name, args.out, not args.raw_features)
    return 0


if __name__ == "__main__":
    sys.exit(main())
