"""Experiment orchestration: baselines, fusion variants, robustness sweeps.

A run expands into one cell per ``(fraction, seed)``; each cell trains a
GCN on the graph its method produces and yields one :class:`ResultRecord`.
Fusion results are cached per perturbed citation view so that seeds share
the expensive eigen-solves whenever the graph is unchanged.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .datasets import Dataset, load_dataset, materialize_view2
from .fusion import (
    FusionConfig,
    propagation_fusion,
    structure_fusion,
    structure_propagation_fusion,
)
from .gcn import TrainConfig, block_diagonal_views, train
from .graph import remove_test_structure, renormalize
from .spectral import spectral_embedding

log = logging.getLogger(__name__)

METHODS = ("gcn_view1", "gcn_view2", "gcn_multiview", "sf", "pf", "spf")
MULTI_VIEW_METHODS = ("gcn_multiview", "sf", "pf", "spf")
FUSION_METHODS = ("sf", "spf")
TIMING_FIELDS = ("wall_clock",)


class ConfigError(ValueError):
    pass


@dataclass
class RunSpec:
    dataset: str
    method: str
    fusion: FusionConfig | None = None
    train: TrainConfig = field(default_factory=TrainConfig)
    seeds: list = field(default_factory=lambda: list(range(10)))
    robustness_fractions: list | None = None
    out: str | None = None
    views: tuple = ("view1", "view2")
    view2_threshold: float = 0.8
    view2_inclusive: bool = True

    def validate(self):
        if self.method not in METHODS:
            raise ConfigError(f"unknown method {self.method!r}; choose from {', '.join(METHODS)}")
        if not self.seeds:
            raise ConfigError("seeds must be nonempty")
        if self.robustness_fractions is not None:
            fr = list(self.robustness_fractions)
            if any(not 0.0 <= f <= 1.0 for f in fr):
                raise ConfigError("robustness fractions must lie in [0, 1]")
            if fr != sorted(fr):
                raise ConfigError("robustness fractions must be ascending")
        if self.method in MULTI_VIEW_METHODS and len(self.views) < 2:
            raise ConfigError(f"method {self.method!r} needs at least two views")
        if self.method == "gcn_view2" and "view2" not in self.views:
            raise ConfigError("gcn_view2 needs view2")
        return self

    @classmethod
    def from_dict(cls, raw: dict) -> RunSpec:
        raw = dict(raw)
        unknown = set(raw) - {f.name for f in fields(cls)}
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        if "dataset" not in raw or "method" not in raw:
            raise ConfigError("config needs 'dataset' and 'method'")
        try:
            if raw.get("fusion") is not None and not isinstance(raw["fusion"], FusionConfig):
                raw["fusion"] = FusionConfig(**raw["fusion"])
            if "train" in raw and not isinstance(raw["train"], TrainConfig):
                raw["train"] = TrainConfig(**raw["train"])
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from None
        if "views" in raw:
            raw["views"] = tuple(raw["views"])
        return cls(**raw)


@dataclass
class ResultRecord:
    method: str
    dataset: str
    seed: int
    fraction: float | None
    test_accuracy: float
    beta: list | None
    alpha: float | None
    loss_mode: str | None
    fusion_losses: list | None
    best_epoch: int
    wall_clock: float

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


def _fusion_config(spec: RunSpec, ds: Dataset) -> FusionConfig:
    cfg = spec.fusion or FusionConfig()
    return cfg if cfg.k is not None else replace(cfg, k=ds.c)


class FusionCache:
    """Memo of per-view embeddings and fusion results across cells and runs."""

    def __init__(self):
        self._store = {}

    def get(self, key, compute):
        if key not in self._store:
            self._store[key] = compute()
        return self._store[key]


def _cell_views(spec, ds, fraction, seed):
    view1 = ds.graphs["view1"]
    if fraction:
        view1 = remove_test_structure(view1, ds.splits["test"], fraction, seed)
    graphs = {"view1": view1, **{k: v for k, v in ds.graphs.items() if k != "view1"}}
    return [graphs[name] for name in spec.views]


def _perturbation_key(fraction, seed):
    return (fraction, seed) if fraction else (0.0, None)


def _fused(spec, ds, cfg, graphs, fraction, seed, cache: FusionCache):
    pkey = _perturbation_key(fraction, seed)
    base = (spec.dataset, tuple(spec.views), spec.view2_threshold, spec.view2_inclusive)

    def view_embedding(i):
        # only view1 is ever perturbed
        vkey = pkey if spec.views[i] == "view1" else None
        return cache.get(("embed", base, spec.views[i], vkey, cfg.k, cfg.dense_cutoff),
                         lambda: spectral_embedding(graphs[i], cfg.k, dense_cutoff=cfg.dense_cutoff))

    def compute_sf():
        embeddings = [view_embedding(i) for i in range(len(graphs))]
        return structure_fusion(graphs, cfg, view_embeddings=embeddings)

    return cache.get(("sf", base, pkey, cfg), compute_sf)


def _train_cell(args):
    a, x, labels, splits, tcfg, c = args
    return train(a, x, labels, splits, tcfg, num_classes=c)[1]


def _cell_inputs(spec, ds, cfg, fraction, seed, cache):
    graphs = _cell_views(spec, ds, fraction, seed)
    fusion = None
    if spec.method == "gcn_view1":
        a = renormalize(graphs[spec.views.index("view1")])
        x, labels, splits = ds.features, ds.labels, ds.splits
    elif spec.method == "gcn_view2":
        a = renormalize(graphs[spec.views.index("view2")])
        x, labels, splits = ds.features, ds.labels, ds.splits
    elif spec.method == "gcn_multiview":
        a, x, labels, splits = block_diagonal_views(graphs, ds.features, ds.labels, ds.splits)
    elif spec.method == "pf":
        a = renormalize(propagation_fusion(graphs, cfg))
        x, labels, splits = ds.features, ds.labels, ds.splits
    else:
        fusion = _fused(spec, ds, cfg, graphs, fraction, seed, cache)
        if spec.method == "spf":
            fusion = structure_propagation_fusion(graphs, cfg, sf=fusion)
        a = renormalize(fusion.W)
        x, labels, splits = ds.features, ds.labels, ds.splits
    return (a, x, labels, splits), fusion


def _workers() -> int:
    try:
        return max(1, int(os.environ.get("GRAPHFUSE_THREADS", "1")))
    except ValueError:
        return 1


def load_run_dataset(spec: RunSpec, cache: FusionCache | None = None) -> Dataset:
    def load():
        ds = load_dataset(spec.dataset)
        if "view2" in spec.views:
            ds = materialize_view2(ds, spec.view2_threshold, spec.view2_inclusive)
        return ds

    if cache is None:
        return load()
    return cache.get(("dataset", spec.dataset, spec.view2_threshold, spec.view2_inclusive,
                      "view2" in spec.views), load)


def run(spec: RunSpec, cache: FusionCache | None = None) -> list[ResultRecord]:
    """Execute every ``(fraction, seed)`` cell of ``spec`` and return its records.

    Records are also appended to ``spec.out`` as JSON lines when set.
    """
    spec.validate()
    cache = cache if cache is not None else FusionCache()
    ds = load_run_dataset(spec, cache)
    missing = [v for v in spec.views if v not in ds.graphs]
    if missing:
        raise ConfigError(f"dataset has no graph named {missing}")
    cfg = _fusion_config(spec, ds)
    fractions = spec.robustness_fractions if spec.robustness_fractions is not None else [None]

    cells = []
    for fraction in fractions:
        for seed in spec.seeds:
            start = time.perf_counter()
            inputs, fusion = _cell_inputs(spec, ds, cfg, fraction, seed, cache)
            tcfg = replace(spec.train, seed=int(seed))
            cells.append((fraction, int(seed), fusion, inputs + (tcfg, ds.c),
                          time.perf_counter() - start))

    workers = min(_workers(), len(cells))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            reports = list(pool.map(_train_cell, [cell[3] for cell in cells]))
    else:
        reports = [_train_cell(cell[3]) for cell in cells]

    records = []
    for (fraction, seed, fusion, _, prep), rep in zip(cells, reports):
        if not np.isfinite(rep.train_loss[-1]):
            raise FloatingPointError(f"non-finite loss for seed {seed}")
        records.append(ResultRecord(
            method=spec.method,
            dataset=ds.name,
            seed=seed,
            fraction=None if fraction is None else float(fraction),
            test_accuracy=rep.test_accuracy,
            beta=None if fusion is None else [float(b) for b in fusion.weights.beta],
            alpha=None if fusion is None else float(fusion.alpha),
            loss_mode=cfg.loss_mode,
            fusion_losses=None if fusion is None else [asdict(r) for r in fusion.loss_trace],
            best_epoch=rep.best_epoch,
            wall_clock=prep + rep.seconds,
        ))
    if spec.out:
        write_records(records, spec.out)
    return records


def write_records(records, path, append: bool = True):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("a" if append else "w") as fh:
        for rec in records:
            fh.write(rec.to_json() + "\n")


def read_records(path) -> list[dict]:
    with Path(path).open() as fh:
        return [json.loads(line) for line in fh if line.strip()]


def strip_timing(line: str) -> str:
    """A JSON-lines record with wall-clock fields removed, for rerun comparisons."""
    rec = json.loads(line)
    for key in TIMING_FIELDS:
        rec.pop(key, None)
    return json.dumps(rec, sort_keys=True)


class ReportError(ValueError):
    pass


@dataclass
class SummaryRow:
    dataset: str
    method: str
    loss_mode: str | None
    fraction: float | None
    count: int
    mean: float
    std: float


def summarize(records) -> list[SummaryRow]:
    """Mean and population standard deviation of test accuracy per group."""
    if not records:
        raise ReportError("no records")
    groups = {}
    for rec in records:
        key = (rec["dataset"], rec["method"], rec.get("loss_mode"), rec.get("fraction"))
        groups.setdefault(key, []).append(rec["test_accuracy"])
    rows = []
    for key in sorted(groups, key=lambda k: tuple("" if v is None else str(v) for v in k)):
        acc = np.asarray(groups[key], dtype=np.float64)
        rows.append(SummaryRow(*key, acc.size, float(acc.mean()), float(acc.std())))
    return rows


def format_table(rows) -> str:
    header = ["dataset", "method", "loss_mode", "fraction", "n", "mean", "std"]
    body = [[r.dataset, r.method, r.loss_mode or "-", "-" if r.fraction is None else f"{r.fraction:g}",
             str(r.count), f"{100 * r.mean:.2f}", f"{100 * r.std:.2f}"] for r in rows]
    widths = [max(len(h), *(len(b[i]) for b in body)) for i, h in enumerate(header)]
    lines = ["  ".join(h.ljust(w) for h, w in zip(header, widths))]
    lines.append("  ".join("-" * w for w in widths))
    lines.extend("  ".join(c.ljust(w) for c, w in zip(b, widths)) for b in body)
    return "\n".join(lines)


def to_csv(rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["dataset", "method", "loss_mode", "fraction", "n", "mean", "std"])
    for r in rows:
        writer.writerow([r.dataset, r.method, r.loss_mode or "", "" if r.fraction is None else r.fraction,
                         r.count, repr(r.mean), repr(r.std)])
    return buf.getvalue()


def report(path, csv_path=None) -> tuple[str, list[SummaryRow]]:
    """Summarize a JSON-lines results file; optionally also write a CSV."""
    path = Path(path)
    if not path.is_file():
        raise ReportError(f"no such file: {path}")
    rows = summarize(read_records(path))
    if csv_path:
        Path(csv_path).write_text(to_csv(rows))
    return format_table(rows), rows
