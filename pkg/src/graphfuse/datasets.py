"""Canonical on-disk dataset format.

A dataset directory holds five text files::

    meta.json      {"format": 1, "name": ..., "n": ..., "d": ..., "c": ...}
    edges.tsv      "u<TAB>v" per undirected citation edge, 0-indexed, u < v
    features.tsv   "node<TAB>dim<TAB>value" sparse triplets
    labels.tsv     "node<TAB>class"
    split.json     {"train": [...], "val": [...], "test": [...]}

``split.json`` is optional; without it a seeded split with 20 training
nodes per class, 500 validation and 1000 test nodes is generated.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .graph import Graph, cosine_similarity_graph

log = logging.getLogger(__name__)

FORMAT_VERSION = 1
REQUIRED_FILES = ("meta.json", "edges.tsv", "features.tsv", "labels.tsv")

# (nodes, feature dim, classes) from the published dataset statistics
TABLE1 = {
    "cora": (2708, 1433, 7),
    "citeseer": (3327, 3703, 6),
    "pubmed": (19717, 500, 3),
}


class DatasetError(ValueError):
    pass


@dataclass(eq=False)
class Dataset:
    name: str
    features: sp.csr_matrix
    labels: np.ndarray
    graphs: dict
    splits: dict
    num_classes: int
    meta: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def d(self) -> int:
        return self.features.shape[1]

    @property
    def c(self) -> int:
        return self.num_classes

    def validate(self):
        if self.labels.shape != (self.n,):
            raise DatasetError(f"expected {self.n} labels, got {self.labels.shape}")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.c):
            raise DatasetError("label out of range")
        for name, g in self.graphs.items():
            if g.n != self.n:
                raise DatasetError(f"graph {name!r} has {g.n} nodes, expected {self.n}")
        seen = {}
        for key in ("train", "val", "test"):
            idx = np.asarray(self.splits.get(key, []), dtype=np.int64)
            if idx.size and (idx.min() < 0 or idx.max() >= self.n):
                raise DatasetError(f"split {key!r} has an out-of-range node")
            for other, prev in seen.items():
                if np.intersect1d(prev, idx).size:
                    raise DatasetError(f"splits {other!r} and {key!r} overlap")
            seen[key] = idx
        return self


def _parse_tsv(path: Path, ncols: int, kinds):
    rows = []
    with path.open() as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != ncols:
                raise DatasetError(f"{path.name}:{lineno}: expected {ncols} fields, got {len(parts)}")
            try:
                rows.append(tuple(kind(p) for kind, p in zip(kinds, parts)) + (lineno,))
            except ValueError:
                raise DatasetError(f"{path.name}:{lineno}: malformed line {line!r}") from None
    return rows


def _check_range(path, lineno, value, bound, what):
    if not 0 <= value < bound:
        raise DatasetError(f"{path.name}:{lineno}: {what} {value} out of range [0, {bound})")


def load_dataset(path, split_seed: int = 0) -> Dataset:
    """Read and validate a dataset directory.

    Duplicate edges collapse to one; self-loops are dropped with a warning.
    """
    root = Path(path)
    for name in REQUIRED_FILES:
        if not (root / name).is_file():
            raise DatasetError(f"missing file: {root / name}")
    meta = json.loads((root / "meta.json").read_text())
    if meta.get("format", FORMAT_VERSION) != FORMAT_VERSION:
        raise DatasetError(f"unsupported format version {meta.get('format')}")
    try:
        n, d, c = int(meta["n"]), int(meta["d"]), int(meta["c"])
    except KeyError as exc:
        raise DatasetError(f"meta.json lacks {exc}") from None

    edge_path = root / "edges.tsv"
    edges = []
    self_loops = 0
    for u, v, lineno in _parse_tsv(edge_path, 2, (int, int)):
        _check_range(edge_path, lineno, u, n, "node")
        _check_range(edge_path, lineno, v, n, "node")
        if u == v:
            self_loops += 1
            continue
        edges.append((u, v))
    if self_loops:
        log.warning("%s: dropped %d self-loops", root.name, self_loops)
    view1 = Graph.from_edges(n, edges)

    feat_path = root / "features.tsv"
    rows = _parse_tsv(feat_path, 3, (int, int, float))
    for i, j, _, lineno in rows:
        _check_range(feat_path, lineno, i, n, "node")
        _check_range(feat_path, lineno, j, d, "feature dim")
    if rows:
        ri, ci, val, _ = map(np.asarray, zip(*rows))
    else:
        ri = ci = np.empty(0, dtype=np.int64)
        val = np.empty(0)
    features = sp.csr_matrix((val.astype(np.float64), (ri, ci)), shape=(n, d))
    features.sum_duplicates()
    features.sort_indices()

    lab_path = root / "labels.tsv"
    labels = np.full(n, -1, dtype=np.int64)
    for node, cls, lineno in _parse_tsv(lab_path, 2, (int, int)):
        _check_range(lab_path, lineno, node, n, "node")
        _check_range(lab_path, lineno, cls, c, "class")
        labels[node] = cls
    if np.any(labels < 0):
        raise DatasetError(f"{lab_path.name}: {int(np.sum(labels < 0))} nodes have no label")

    ds = Dataset(meta.get("name", root.name), features, labels, {"view1": view1}, {}, c, meta)
    split_path = root / "split.json"
    if split_path.is_file():
        raw = json.loads(split_path.read_text())
        ds.splits = {key: np.asarray(raw[key], dtype=np.int64) for key in ("train", "val", "test")}
    else:
        ds.splits = standard_split(ds, seed=split_seed)
    return ds.validate()


def write_dataset(ds: Dataset, path) -> Path:
    """Write ``ds`` in canonical form (view1 edges only)."""
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    meta = dict(ds.meta)
    meta.update(format=FORMAT_VERSION, name=ds.name, n=ds.n, d=ds.d, c=ds.c)
    (root / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    with (root / "edges.tsv").open("w") as fh:
        for u, v in ds.graphs["view1"].edges():
            fh.write(f"{u}\t{v}\n")
    feats = sp.csr_matrix(ds.features)
    feats.sort_indices()
    with (root / "features.tsv").open("w") as fh:
        for i in range(feats.shape[0]):
            lo, hi = feats.indptr[i], feats.indptr[i + 1]
            for j, x in zip(feats.indices[lo:hi], feats.data[lo:hi]):
                fh.write(f"{i}\t{j}\t{float(x)!r}\n")
    with (root / "labels.tsv").open("w") as fh:
        for i, y in enumerate(ds.labels):
            fh.write(f"{i}\t{int(y)}\n")
    if ds.splits:
        split = {key: [int(i) for i in ds.splits[key]] for key in ("train", "val", "test")}
        (root / "split.json").write_text(json.dumps(split) + "\n")
    return root


def standard_split(ds: Dataset, seed: int = 0, per_class: int = 20, n_val: int = 500,
                   n_test: int = 1000) -> dict:
    """The fixed split of ``ds`` if it has one, else a seeded 20-per-class split.

    Validation and test sizes shrink to what is left on small datasets.
    """
    if ds.splits:
        return ds.splits
    rng = np.random.default_rng(seed)
    order = rng.permutation(ds.n)
    train = []
    for cls in range(ds.c):
        members = order[ds.labels[order] == cls]
        train.extend(members[:per_class].tolist())
    train = np.sort(np.asarray(train, dtype=np.int64))
    rest = order[~np.isin(order, train)]
    val = np.sort(rest[:n_val])
    test = np.sort(rest[n_val:n_val + n_test])
    return {"train": train, "val": val, "test": test}


def materialize_view2(ds: Dataset, threshold: float = 0.8, inclusive: bool = True) -> Dataset:
    """Return ``ds`` with a ``view2`` cosine-similarity graph added (no-op if present)."""
    if "view2" in ds.graphs:
        return ds
    view2 = cosine_similarity_graph(ds.features, threshold=threshold, inclusive=inclusive)
    log.info("%s: view2 has %d edges", ds.name, view2.num_edges)
    return replace(ds, graphs={**ds.graphs, "view2": view2})


def datasets_equal(a: Dataset, b: Dataset) -> bool:
    if (a.name, a.n, a.d, a.c) != (b.name, b.n, b.d, b.c):
        return False
    if (a.features != b.features).nnz or not np.array_equal(a.labels, b.labels):
        return False
    if set(a.graphs) != set(b.graphs) or any(a.graphs[k] != b.graphs[k] for k in a.graphs):
        return False
    return all(np.array_equal(a.splits[k], b.splits[k]) for k in ("train", "val", "test"))
