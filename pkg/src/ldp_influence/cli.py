"""End-to-end sweep: load, train, estimate every (group, epsilon), optionally retrain, report.

Usage::

    ldp-influence --config sweep.json --output-dir out --format both

Exit status: 0 success, 2 configuration error, 3 data error, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import platform
import sys
import time
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from . import model as M
from .dataset import (
    DataParseError, Schema, SchemaError, SelectionRule, encode, load_csv, make_synthetic,
    select_group, split, subsample_test,
)
from .ihvp import IhvpConfig, IhvpError
from .model import TrainConfig
from .oracle import SweepReport, SweepRow, aggregate, run_sweep_comparison
from .randomize import PerturbationPlan

log = logging.getLogger("ldp_influence")

REPORT_SCHEMA_VERSION = 1
CSV_COLUMNS = (
    "schema_version", "group_size", "fraction", "epsilon", "estimated_delta",
    "estimated_abs", "actual_signed", "actual_abs", "repeats", "calibrated_delta",
)


class ConfigError(ValueError):
    pass


class StageError(RuntimeError):
    """An error raised inside one pipeline stage, tagged with the stage name."""

    def __init__(self, stage: str, exc: BaseException):
        super().__init__(f"{stage}: {exc}")
        self.stage = stage
        self.cause = exc


def grid(count: int, lo: float, hi: float, spacing: str = "linear") -> list[float]:
    if count < 1:
        raise ConfigError("grid count must be >= 1")
    if spacing == "linear":
        return [float(v) for v in np.linspace(lo, hi, count)]
    if spacing == "log":
        if lo <= 0:
            raise ConfigError("log spacing needs a positive lower bound")
        return [float(v) for v in np.geomspace(lo, hi, count)]
    raise ConfigError(f"unknown spacing {spacing!r}")


def _grid_values(spec, name: str) -> list[float]:
    if isinstance(spec, (list, tuple)):
        return [float(v) for v in spec]
    if isinstance(spec, dict):
        if "values" in spec:
            return [float(v) for v in spec["values"]]
        try:
            return grid(int(spec["count"]), float(spec["min"]), float(spec["max"]),
                        spec.get("spacing", "linear"))
        except KeyError as e:
            raise ConfigError(f"{name}: missing {e}") from None
    raise ConfigError(f"{name}: expected a list or a grid description")


def _build(cls, d: dict, name: str):
    d = dict(d or {})
    known = {f.name for f in fields(cls)}
    extra = set(d) - known
    if extra:
        raise ConfigError(f"{name}: unknown field(s) {sorted(extra)}")
    try:
        return cls(**d)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"{name}: {e}") from None


@dataclass
class SweepConfig:
    """Everything a sweep needs; mirrors the JSON config document."""

    dataset: dict
    epsilons: list[float]
    group_attribute: str
    group_value: str
    fractions: list[float]
    group_seed: int = 0
    mode: str = "labels"
    features: list[str] = field(default_factory=list)
    correction: str = "none"
    scaling: str = "exact"
    train: TrainConfig = field(default_factory=TrainConfig)
    ihvp: IhvpConfig = field(default_factory=IhvpConfig)
    oracle: str = "off"
    repeats: int = 10
    seed: int = 0
    test_fraction: float = 0.2
    test_sample: int | None = None
    bias: bool = True
    binarize: bool = False
    threads: int = 1
    output_dir: str = "ldp_influence_out"
    format: str = "both"

    def __post_init__(self):
        if not self.epsilons or any(not e > 0 for e in self.epsilons):
            raise ConfigError("epsilon grid must be nonempty with positive values")
        if not self.fractions or any(not 0 < k <= 1 for k in self.fractions):
            raise ConfigError("group fractions must be nonempty and in (0, 1]")
        if self.mode not in ("features", "labels", "both"):
            raise ConfigError(f"unknown mode {self.mode!r}")
        if self.mode != "labels" and not self.features:
            raise ConfigError(f"mode {self.mode!r} needs a list of features to randomize")
        if self.correction not in ("none", "flc"):
            raise ConfigError(f"unknown correction {self.correction!r}")
        if self.correction == "flc" and self.mode != "labels":
            raise ConfigError("forward loss correction is only defined for label randomization")
        if self.scaling not in ("exact", "paper"):
            raise ConfigError(f"unknown scaling {self.scaling!r}")
        if self.format not in ("json", "csv", "both"):
            raise ConfigError(f"unknown format {self.format!r}")
        if self.repeats < 1 or self.threads < 1:
            raise ConfigError("repeats and threads must be >= 1")
        self.oracle_subset()

    def oracle_subset(self) -> list[float] | None:
        """Epsilons to retrain: all (``on``), none (``off``) or ``n`` evenly spaced ones."""
        if self.oracle == "off":
            return []
        if self.oracle == "on":
            return None
        if self.oracle.startswith("subsample:"):
            try:
                n = int(self.oracle.split(":", 1)[1])
            except ValueError:
                raise ConfigError(f"bad oracle spec {self.oracle!r}") from None
            if n < 2:
                raise ConfigError("oracle subsample needs at least 2 epsilons to fit a line")
            idx = np.unique(np.round(np.linspace(0, len(self.epsilons) - 1, n)).astype(int))
            return [self.epsilons[i] for i in idx]
        raise ConfigError(f"unknown oracle mode {self.oracle!r}")

    @classmethod
    def from_dict(cls, d: dict) -> "SweepConfig":
        d = dict(d)
        try:
            groups = d.pop("groups")
            eps = _grid_values(d.pop("epsilons", {"count": 30, "min": 0.001, "max": 10}), "epsilons")
            if "fractions" in groups:
                fracs = _grid_values(groups["fractions"], "groups.fractions")
            else:
                fracs = grid(10, 0.01, 0.30)
            kwargs = dict(
                dataset=d.pop("dataset"), epsilons=eps, fractions=fracs,
                group_attribute=groups["attribute"], group_value=str(groups["value"]),
                group_seed=int(groups.get("seed", 0)),
            )
        except KeyError as e:
            raise ConfigError(f"missing config field {e}") from None
        kwargs["train"] = _build(TrainConfig, d.pop("train", {}), "train")
        kwargs["ihvp"] = _build(IhvpConfig, d.pop("ihvp", {}), "ihvp")
        known = {f.name for f in fields(cls)}
        extra = set(d) - known
        if extra:
            raise ConfigError(f"unknown config field(s) {sorted(extra)}")
        kwargs.update(d)
        try:
            return cls(**kwargs)
        except TypeError as e:
            raise ConfigError(str(e)) from None

    @classmethod
    def load(cls, path) -> "SweepConfig":
        try:
            with open(path) as fh:
                return cls.from_dict(json.load(fh))
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigError(f"cannot read config {path}: {e}") from None

    def to_dict(self) -> dict:
        d = asdict(self)
        d["train"] = asdict(self.train)
        d["ihvp"] = asdict(self.ihvp)
        return d


def _stage(name):
    def wrap(fn):
        def inner(*a, **k):
            try:
                return fn(*a, **k)
            except (StageError, ConfigError):
                raise
            except Exception as e:
                raise StageError(name, e) from e
        return inner
    return wrap


@_stage("dataset")
def _load(cfg: SweepConfig):
    src = cfg.dataset
    if "synthetic" in src:
        syn = dict(src["synthetic"])
        ds = make_synthetic(
            n=int(syn.get("n", 2000)), cardinalities=tuple(syn.get("cardinalities", (2,) * 5)),
            n_classes=int(syn.get("n_classes", 2)), strength=float(syn.get("strength", 1.5)),
            noise=float(syn.get("noise", 1.0)), seed=int(syn.get("seed", cfg.seed)),
        )
        return split(ds, cfg.test_fraction, cfg.seed)
    schema = Schema.load(src["schema"]) if isinstance(src.get("schema"), str) else Schema.from_dict(src["schema"])
    if "train_csv" in src:
        return load_csv(src["train_csv"], schema), load_csv(src["test_csv"], schema)
    return split(load_csv(src["csv"], schema), cfg.test_fraction, cfg.seed)


@_stage("model")
def _train(cfg: SweepConfig, data):
    return M.train(data, cfg.train)


@_stage("dataset")
def _groups(cfg: SweepConfig, train, test):
    groups = [select_group(train, SelectionRule(cfg.group_attribute, cfg.group_value, k, cfg.group_seed),
                           test=test) for k in cfg.fractions]
    if cfg.test_sample is not None:
        groups = [subsample_test(g, cfg.test_sample, cfg.seed) for g in groups]
    return groups


@_stage("randomize")
def _plan(cfg: SweepConfig, train):
    label = train.attributes[train.label_attribute].name
    names = {"labels": [label], "features": list(cfg.features),
             "both": list(cfg.features) + [label]}[cfg.mode]
    return PerturbationPlan.for_dataset(train, names, cfg.epsilons[0])


@_stage("influence")
def _sweep(cfg: SweepConfig, etr, ete, params, groups, plan):
    return run_sweep_comparison(
        etr, ete, params, groups, cfg.epsilons, plan, correction=cfg.correction, cfg=cfg.train,
        ihvp_cfg=cfg.ihvp, repeats=cfg.repeats, seed=cfg.seed, scaling=cfg.scaling,
        oracle_epsilons=cfg.oracle_subset(), threads=cfg.threads,
    )


def run(cfg: SweepConfig) -> SweepReport:
    """Run the whole pipeline; deterministic for a fixed config when the oracle is off."""
    t0 = time.perf_counter()
    train, test = _load(cfg)
    etr = encode(train, bias=cfg.bias, binarize=cfg.binarize)
    ete = encode(test, bias=cfg.bias, binarize=cfg.binarize)
    t1 = time.perf_counter()
    params = _train(cfg, etr)
    t_train = time.perf_counter() - t1
    groups = _groups(cfg, train, test)
    plan = _plan(cfg, train)
    report = _sweep(cfg, etr, ete, params, groups, plan)
    report.timings = {"train": t_train, **report.timings, "total": time.perf_counter() - t0}
    # where the report is written does not affect its content
    report.config = {k: v for k, v in cfg.to_dict().items() if k != "output_dir"}
    return report


# ---------------------------------------------------------------------------
# report I/O

def _versions() -> dict:
    return {"ldp_influence": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
            "python": platform.python_version()}


_ROW_TIMINGS = ("estimate_seconds", "retrain_seconds")


def report_to_dict(report: SweepReport) -> dict:
    """JSON-ready report without wall-clock fields (those live in :func:`timings_to_dict`)."""
    rows = [{k: v for k, v in asdict(r).items() if k not in _ROW_TIMINGS} for r in report.rows]
    return {
        "schema_version": REPORT_SCHEMA_VERSION,
        "versions": _versions(),
        "config": report.config,
        "rows": rows,
        "aggregates": report.aggregates,
        "fit": report.fit,
    }


def timings_to_dict(report: SweepReport) -> dict:
    per_row = [{k: getattr(r, k) for k in _ROW_TIMINGS} for r in report.rows]
    return {**report.timings, "rows": per_row}


def report_from_dict(d: dict, timings: dict | None = None) -> SweepReport:
    timings = dict(timings or {})
    per_row = timings.pop("rows", None) or [{"estimate_seconds": 0.0}] * len(d["rows"])
    rows = [SweepRow(**r, **t) for r, t in zip(d["rows"], per_row)]
    return SweepReport(rows, d["aggregates"], timings, d.get("fit"), d.get("config", {}))


def _csv_value(v):
    return "" if v is None else repr(v) if isinstance(v, float) else str(v)


def report_csv(report: SweepReport) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for r in report.rows:
        w.writerow([_csv_value(v) for v in (
            REPORT_SCHEMA_VERSION, r.group_size, r.fraction, r.epsilon, r.estimated_delta,
            abs(r.estimated_delta), r.actual_signed, r.actual_abs, r.repeats,
            r.calibrated_delta,
        )])
    return buf.getvalue()


def aggregates_csv(report: SweepReport) -> str:
    cols = ["group_size", "fraction", "n_epsilons"]
    if any("mae" in a for a in report.aggregates):
        cols += ["mae", "rho"]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(cols)
    for a in report.aggregates:
        w.writerow([_csv_value(a.get(c)) for c in cols])
    return buf.getvalue()


def emit_report(report: SweepReport, output_dir, fmt: str = "both") -> list[Path]:
    """Write the report; timings go to a separate file so reports stay byte-stable.

    Recomputes the aggregates from the rows first and refuses to write an
    inconsistent report.
    """
    check = aggregate(report.rows)
    for a, b in zip(check, report.aggregates):
        for key in ("mae", "rho"):
            if (key in a) != (key in b) or (key in a and abs(a[key] - b[key]) > 1e-12):
                raise ValueError(f"report aggregates disagree with rows for group size {a['group_size']}")
    out = Path(output_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    if fmt in ("json", "both"):
        p = out / "report.json"
        p.write_text(json.dumps(report_to_dict(report), indent=2, sort_keys=True) + "\n")
        written.append(p)
    if fmt in ("csv", "both"):
        for name, text in (("report.csv", report_csv(report)), ("aggregates.csv", aggregates_csv(report))):
            p = out / name
            p.write_text(text)
            written.append(p)
    p = out / "timings.json"
    p.write_text(json.dumps(timings_to_dict(report), indent=2, sort_keys=True) + "\n")
    written.append(p)
    if report.baseline is not None:
        p = out / "baseline_model.json"
        meta = {k: v for k, v in report.baseline.metadata.items() if k != "train_seconds"}
        replace(report.baseline, metadata=meta).save(p)
        written.append(p)
    return written


def load_report(output_dir) -> SweepReport:
    out = Path(output_dir)
    timings = None
    if (out / "timings.json").exists():
        timings = json.loads((out / "timings.json").read_text())
    return report_from_dict(json.loads((out / "report.json").read_text()), timings)


# ---------------------------------------------------------------------------

def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ldp-influence", description=__doc__.split("\n")[0])
    p.add_argument("--config", required=True, help="JSON sweep configuration")
    p.add_argument("--output-dir")
    p.add_argument("--format", choices=("json", "csv", "both"))
    p.add_argument("--threads", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--oracle", help="off | on | subsample:<n>")
    p.add_argument("--ihvp", choices=("explicit", "cg", "stochastic"))
    p.add_argument("--mode", choices=("features", "labels", "both"))
    p.add_argument("--correction", choices=("none", "flc"))
    p.add_argument("--scaling", choices=("paper", "exact"))
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def config_from_args(args) -> SweepConfig:
    cfg = SweepConfig.load(args.config)
    overrides = {k: getattr(args, k) for k in
                 ("output_dir", "format", "threads", "seed", "oracle", "mode", "correction", "scaling")
                 if getattr(args, k) is not None}
    if args.ihvp is not None:
        overrides["ihvp"] = replace(cfg.ihvp, method=args.ihvp)
    if not overrides:
        return cfg
    try:
        return replace(cfg, **overrides)
    except (TypeError, ValueError) as e:
        raise ConfigError(str(e)) from None


def _exit_code(exc: BaseException) -> int:
    cause = exc.cause if isinstance(exc, StageError) else exc
    if isinstance(cause, ConfigError):
        return 2
    if isinstance(cause, (IhvpError, np.linalg.LinAlgError, ArithmeticError)):
        return 4
    if isinstance(cause, (SchemaError, DataParseError, OSError, KeyError, ValueError)):
        return 3
    return 4


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = config_from_args(args)
        report = run(cfg)
        paths = emit_report(report, cfg.output_dir, cfg.format)
    except ConfigError as e:
        print(f"config: {e}", file=sys.stderr)
        return 2
    except StageError as e:
        print(str(e), file=sys.stderr)
        return _exit_code(e)
    except OSError as e:
        print(f"output: {e}", file=sys.stderr)
        return 3
    for p in paths:
        log.info("wrote %s", p)
    for a in report.aggregates:
        line = f"k={a['fraction']:.4f} |S|={a['group_size']}"
        if "mae" in a:
            line += f" MAE={a['mae']:.5f}"
        if "rho" in a:
            line += f" rho={a['rho']:.3f}"
        print(line)
    return 0


if __name__ == "__main__":
    sys.exit(main())
