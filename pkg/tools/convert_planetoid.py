#!/usr/bin/env python3
"""Convert Planetoid / LINQS citation data into the graphfuse canonical format.

Two source layouts are understood:

* Planetoid pickles (``ind.<name>.{x,y,tx,ty,allx,ally,graph,test.index}``),
  as distributed with the original GCN code. The fixed Planetoid split is
  written to ``split.json``.
* The raw LINQS Cora release (``cora.content`` + ``cora.cites``). No split
  ships with it, so none is written and the loader generates a seeded one.

Usage::

    python tools/convert_planetoid.py SRC_DIR NAME OUT_DIR
"""

import argparse
import pickle
import sys
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from graphfuse.datasets import Dataset, write_dataset
from graphfuse.graph import Graph


def _load_pickle(path):
    with open(path, "rb") as fh:
        return pickle.load(fh, encoding="latin1")


def convert_planetoid(src: Path, name: str) -> Dataset:
    obj = {key: _load_pickle(src / f"ind.{name}.{key}")
           for key in ("x", "y", "tx", "ty", "allx", "ally", "graph")}
    test_index = np.loadtxt(src / f"ind.{name}.test.index", dtype=np.int64)
    test_sorted = np.sort(test_index)
    n = len(obj["graph"])

    allx = sp.csr_matrix(obj["allx"])
    tx = sp.csr_matrix(obj["tx"])
    ally = np.asarray(obj["ally"])
    ty = np.asarray(obj["ty"])
    c = ally.shape[1]

    # Row r of tx/ty belongs to node test_index[r]. Citeseer has isolated
    # test-range nodes with no row at all; those stay all-zero.
    features = sp.lil_matrix((n, allx.shape[1]))
    features[: allx.shape[0]] = allx
    features[test_index] = tx
    onehot = np.zeros((n, c))
    onehot[: ally.shape[0]] = ally
    onehot[test_index] = ty
    # unlabelled rows get class 0; they are never in any split
    labels = onehot.argmax(axis=1)

    edges = [(u, v) for u, vs in obj["graph"].items() for v in vs if u != v]
    graph = Graph.from_edges(n, edges)
    n_train = np.asarray(obj["y"]).shape[0]
    splits = {
        "train": np.arange(n_train),
        "val": np.arange(n_train, n_train + 500),
        "test": test_sorted,
    }
    meta = {"source": f"planetoid ind.{name}.*"}
    return Dataset(name, sp.csr_matrix(features), labels, {"view1": graph}, splits, c, meta)


def convert_linqs_cora(src: Path) -> Dataset:
    ids, rows, classes = [], [], []
    with open(src / "cora.content") as fh:
        for line in fh:
            parts = line.split()
            ids.append(parts[0])
            rows.append(np.array(parts[1:-1], dtype=np.float64))
            classes.append(parts[-1])
    index = {pid: i for i, pid in enumerate(ids)}
    names = sorted(set(classes))
    labels = np.array([names.index(cl) for cl in classes])
    raw_records = 0
    edges = []
    with open(src / "cora.cites") as fh:
        for line in fh:
            cited, citing = line.split()
            raw_records += 1
            edges.append((index[cited], index[citing]))
    features = sp.csr_matrix(np.vstack(rows))
    graph = Graph.from_edges(len(ids), edges)
    meta = {"source": "linqs cora.content/cora.cites", "raw_edge_records": raw_records,
            "classes": names}
    return Dataset("cora", features, labels, {"view1": graph}, {}, len(names), meta)


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("src", type=Path)
    parser.add_argument("name", choices=["cora", "citeseer", "pubmed"])
    parser.add_argument("out", type=Path)
    args = parser.parse_args(argv)
    if (args.src / "cora.content").exists():
        ds = convert_linqs_cora(args.src)
    else:
        ds = convert_planetoid(args.src, args.name)
    write_dataset(ds, args.out)
    print(f"{ds.name}: n={ds.n} d={ds.d} c={ds.c} edges={ds.graphs['view1'].num_edges} -> {args.out}")


if __name__ == "__main__":
    sys.exit(main())
