"""Command-line driver: analyze, simulate, contour, report.

One config file holds one complete analysis: where the data lives, the
confounding-function priors per ordered arm pair, engine settings, and
output paths. The format is TOML; `sample_configs/` in the repository root
holds ready-made specifications.

Exit codes: 0 success, 1 usage or config error, 2 data error, 3 numeric
failure. Outputs are deterministic for a fixed config and seed: JSON is
key-sorted with full-precision floats, CSVs use repr() formatting, and no
file carries a timestamp.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np

try:
    import tomllib as tomli
except ImportError:
    import tomli

from . import simlab
from .confounding import (
    ConfoundingSpec,
    PointMass,
    ScalarPrior,
    Stratified,
    TruncNormal,
    Uniform,
)
from .dataset import DataSchema, ObservationalDataset, load_csv
from .engine import EngineConfig, GpsModelConfig, run_sensitivity
from .errors import DataError, NumericError
from .sumtrees import SumOfTreesConfig

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3

_NATURAL = "confounding values live in the natural bounds [-1, 1]"


class ConfigError(Exception):
    """Problem detectable from the config text alone (before data loads)."""


# ---------------------------------------------------------------------------
# config parsing


def _require(table: Mapping[str, Any], key: str, where: str) -> Any:
    if key not in table:
        raise ConfigError(f"{where}: missing required key {key!r}")
    return table[key]


def _as_float(value: Any, key: str, where: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{where}: {key} must be a number, got {value!r}")
    return float(value)


def _check_bounds(lo: float, hi: float, where: str) -> None:
    if not (-1.0 <= lo <= hi <= 1.0):
        raise ConfigError(
            f"{where}: bounds ({lo:g}, {hi:g}) are invalid; {_NATURAL}"
        )


def _parse_scalar_prior(row: Mapping[str, Any], where: str) -> dict[str, Any]:
    dist = row.get("dist", "point")
    if dist == "point":
        value = _as_float(_require(row, "value", where), "value", where)
        _check_bounds(value, value, where)
        return {"dist": "point", "value": value}
    if dist == "uniform":
        lo = _as_float(_require(row, "lo", where), "lo", where)
        hi = _as_float(_require(row, "hi", where), "hi", where)
        _check_bounds(lo, hi, where)
        return {"dist": "uniform", "lo": lo, "hi": hi}
    if dist == "truncnormal":
        center = _as_float(_require(row, "center", where), "center", where)
        spread = _as_float(_require(row, "spread", where), "spread", where)
        lo = _as_float(row.get("lo", -1.0), "lo", where)
        hi = _as_float(row.get("hi", 1.0), "hi", where)
        _check_bounds(lo, hi, where)
        if spread <= 0:
            raise ConfigError(f"{where}: spread must be positive")
        return {"dist": "truncnormal", "center": center, "spread": spread,
                "lo": lo, "hi": hi}
    raise ConfigError(
        f"{where}: unknown dist {dist!r}; choose point, uniform, truncnormal,"
        " or stratified"
    )


def _parse_prior_row(row: Mapping[str, Any], index: int) -> dict[str, Any]:
    where = f"priors.c[{index}]"
    pair = _require(row, "pair", where)
    if (
        not isinstance(pair, Sequence)
        or len(pair) != 2
        or any(isinstance(v, bool) or not isinstance(v, int) for v in pair)
    ):
        raise ConfigError(f"{where}: pair must be two integer treatment labels")
    if pair[0] == pair[1]:
        raise ConfigError(f"{where}: pair labels must differ")
    if row.get("dist") == "stratified":
        column = _require(row, "column", where)
        if not isinstance(column, str):
            raise ConfigError(f"{where}: column must be a covariate name")
        rows = _require(row, "table", where)
        if not isinstance(rows, Sequence) or not rows:
            raise ConfigError(f"{where}: table must be a non-empty array of rows")
        table = []
        for i, cell in enumerate(rows):
            cw = f"{where}.table[{i}]"
            x = _as_float(_require(cell, "x", cw), "x", cw)
            table.append({"x": x, **_parse_scalar_prior(cell, cw)})
        parsed: dict[str, Any] = {"dist": "stratified", "column": column,
                                  "table": table}
    else:
        parsed = _parse_scalar_prior(row, where)
    return {"pair": [int(pair[0]), int(pair[1])], **parsed}


@dataclasses.dataclass(frozen=True)
class AnalysisConfig:
    """Parsed analysis configuration, still in treatment-label space."""

    data_path: str
    treatment_col: str
    outcome_col: str
    covariate_cols: tuple[str, ...] | None
    kinds: Mapping[str, str]
    priors: tuple[Mapping[str, Any], ...]
    m1: int
    m2: int
    estimand: str
    reference_arm: int | None
    gps_model: str
    gps_strat_columns: tuple[str, ...]
    gps_prior_weight: float
    gps_ridge: float
    trees_overrides: Mapping[str, Any]
    seed: int
    jobs: int
    summary_path: str
    samples_path: str | None
    print_table: bool
    contour: Mapping[str, Any] | None

    def normalized(self) -> dict[str, Any]:
        """Canonical dict form; two configs are equivalent iff these match."""
        out = dataclasses.asdict(self)
        out["covariate_cols"] = (
            None if self.covariate_cols is None else list(self.covariate_cols)
        )
        out["kinds"] = dict(sorted(self.kinds.items()))
        out["priors"] = sorted(
            (dict(p) for p in self.priors), key=lambda p: p["pair"]
        )
        out["gps_strat_columns"] = list(self.gps_strat_columns)
        out["trees_overrides"] = dict(sorted(self.trees_overrides.items()))
        out["contour"] = None if self.contour is None else dict(self.contour)
        return out


_TREE_KEYS = frozenset(
    f.name for f in dataclasses.fields(SumOfTreesConfig) if f.name != "seed"
)


def parse_config(text: str) -> AnalysisConfig:
    try:
        raw = tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        raise ConfigError(f"not valid TOML: {exc}") from None

    data = _require(raw, "data", "config")
    path = _require(data, "path", "data")
    kinds = data.get("kinds", {})
    if not isinstance(kinds, Mapping):
        raise ConfigError("data.kinds must be a table of column -> kind")
    covs = data.get("covariates")
    if covs is not None and (
        not isinstance(covs, Sequence) or any(not isinstance(c, str) for c in covs)
    ):
        raise ConfigError("data.covariates must be an array of column names")

    prior_rows = raw.get("priors", {}).get("c", [])
    if not isinstance(prior_rows, Sequence):
        raise ConfigError("priors.c must be an array of tables")
    priors = tuple(_parse_prior_row(r, i) for i, r in enumerate(prior_rows))
    seen = set()
    for p in priors:
        key = tuple(p["pair"])
        if key in seen:
            raise ConfigError(f"duplicate prior for pair {list(key)}")
        seen.add(key)

    eng = raw.get("engine", {})
    estimand = eng.get("estimand", "CATE")
    if estimand not in ("CATE", "CATT"):
        raise ConfigError("engine.estimand must be CATE or CATT")
    gps = eng.get("gps", {})
    gps_model = gps.get("model", "multilogit")
    if gps_model not in ("multilogit", "stratified"):
        raise ConfigError("engine.gps.model must be multilogit or stratified")

    trees = raw.get("trees", {})
    unknown = set(trees) - _TREE_KEYS
    if unknown:
        raise ConfigError(f"unknown trees settings: {sorted(unknown)}")

    out = raw.get("output", {})
    contour = raw.get("contour")
    if contour is not None:
        for key in ("pair", "jk", "kj"):
            _require(contour, key, "contour")

    return AnalysisConfig(
        data_path=str(path),
        treatment_col=str(data.get("treatment", "a")),
        outcome_col=str(data.get("outcome", "y")),
        covariate_cols=None if covs is None else tuple(covs),
        kinds={str(k): str(v) for k, v in kinds.items()},
        priors=priors,
        m1=int(eng.get("m1", 10)),
        m2=int(eng.get("m2", 10)),
        estimand=estimand,
        reference_arm=(
            None if "reference_arm" not in eng else int(eng["reference_arm"])
        ),
        gps_model=gps_model,
        gps_strat_columns=tuple(str(c) for c in gps.get("strat_columns", ())),
        gps_prior_weight=float(gps.get("prior_weight", 1.0)),
        gps_ridge=float(gps.get("ridge", 1.0)),
        trees_overrides={k: trees[k] for k in sorted(trees)},
        seed=int(eng.get("seed", 0)),
        jobs=int(eng.get("jobs", 1)),
        summary_path=str(out.get("summary", "summary.json")),
        samples_path=(None if "samples" not in out else str(out["samples"])),
        print_table=bool(out.get("table", True)),
        contour=None if contour is None else dict(contour),
    )


def _toml_value(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (int, float)):
        return repr(value)
    if isinstance(value, str):
        return json.dumps(value)
    if isinstance(value, (list, tuple)):
        return "[" + ", ".join(_toml_value(v) for v in value) + "]"
    raise TypeError(f"cannot serialize {value!r}")


def serialize_config(cfg: AnalysisConfig) -> str:
    """Emit TOML that parses back to an equivalent config."""
    lines = ["[data]", f"path = {_toml_value(cfg.data_path)}",
             f"treatment = {_toml_value(cfg.treatment_col)}",
             f"outcome = {_toml_value(cfg.outcome_col)}"]
    if cfg.covariate_cols is not None:
        lines.append(f"covariates = {_toml_value(list(cfg.covariate_cols))}")
    if cfg.kinds:
        lines.append("[data.kinds]")
        for k, v in sorted(cfg.kinds.items()):
            lines.append(f"{k} = {_toml_value(v)}")
    for p in cfg.priors:
        lines += ["", "[[priors.c]]", f"pair = {_toml_value(p['pair'])}",
                  f"dist = {_toml_value(p['dist'])}"]
        if p["dist"] == "stratified":
            lines.append(f"column = {_toml_value(p['column'])}")
            for cell in p["table"]:
                lines.append("[[priors.c.table]]")
                for k, v in cell.items():
                    lines.append(f"{k} = {_toml_value(v)}")
        else:
            for k, v in p.items():
                if k not in ("pair", "dist"):
                    lines.append(f"{k} = {_toml_value(v)}")
    lines += ["", "[engine]", f"m1 = {cfg.m1}", f"m2 = {cfg.m2}",
              f"estimand = {_toml_value(cfg.estimand)}",
              f"seed = {cfg.seed}", f"jobs = {cfg.jobs}"]
    if cfg.reference_arm is not None:
        lines.append(f"reference_arm = {cfg.reference_arm}")
    lines += ["", "[engine.gps]", f"model = {_toml_value(cfg.gps_model)}",
              f"prior_weight = {_toml_value(cfg.gps_prior_weight)}",
              f"ridge = {_toml_value(cfg.gps_ridge)}"]
    if cfg.gps_strat_columns:
        lines.append(
            f"strat_columns = {_toml_value(list(cfg.gps_strat_columns))}"
        )
    if cfg.trees_overrides:
        lines += ["", "[trees]"]
        for k, v in sorted(cfg.trees_overrides.items()):
            lines.append(f"{k} = {_toml_value(v)}")
    lines += ["", "[output]",
              f"summary = {_toml_value(cfg.summary_path)}",
              f"table = {_toml_value(cfg.print_table)}"]
    if cfg.samples_path is not None:
        lines.append(f"samples = {_toml_value(cfg.samples_path)}")
    if cfg.contour is not None:
        lines += ["", "[contour]"]
        for k, v in cfg.contour.items():
            lines.append(f"{k} = {_toml_value(v)}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# binding a config to loaded data


def _load_data(cfg: AnalysisConfig, config_dir: Path) -> ObservationalDataset:
    path = Path(cfg.data_path)
    if not path.is_absolute():
        path = config_dir / path
    if not path.exists():
        raise DataError(f"data file not found: {path}")
    if cfg.covariate_cols is None:
        import pandas as pd

        header = pd.read_csv(path, nrows=0).columns
        covs = tuple(
            c for c in header if c not in (cfg.treatment_col, cfg.outcome_col)
        )
    else:
        covs = cfg.covariate_cols
    schema = DataSchema(
        outcome=cfg.outcome_col,
        treatment=cfg.treatment_col,
        covariates=covs,
        kinds=dict(cfg.kinds),
    )
    return load_csv(path, schema)


def _arm_index(label: int, ds: ObservationalDataset) -> int:
    if label not in ds.treatment_levels:
        raise DataError(
            f"treatment label {label} not present in the data; "
            f"labels found: {list(ds.treatment_levels)}"
        )
    return ds.treatment_levels.index(label) + 1


def _column_index(name: str, ds: ObservationalDataset) -> int:
    if name not in ds.covariate_names:
        raise DataError(
            f"covariate {name!r} not present in the data; "
            f"columns found: {list(ds.covariate_names)}"
        )
    return ds.covariate_names.index(name)


def _scalar_from_parsed(p: Mapping[str, Any]) -> ScalarPrior:
    if p["dist"] == "point":
        return PointMass(p["value"])
    if p["dist"] == "uniform":
        return Uniform(p["lo"], p["hi"])
    return TruncNormal(p["center"], p["spread"], p["lo"], p["hi"])


def bind_spec(
    priors: Sequence[Mapping[str, Any]], ds: ObservationalDataset
) -> ConfoundingSpec:
    """Map label-space prior rows onto the dataset's recoded arms."""
    entries: dict[tuple[int, int], Any] = {}
    for p in priors:
        j = _arm_index(p["pair"][0], ds)
        k = _arm_index(p["pair"][1], ds)
        if p["dist"] == "stratified":
            col = _column_index(p["column"], ds)
            table = {
                cell["x"]: _scalar_from_parsed(cell) for cell in p["table"]
            }
            entries[(j, k)] = Stratified(col, table)
        else:
            entries[(j, k)] = _scalar_from_parsed(p)
    return ConfoundingSpec(entries)


def build_engine_config(
    cfg: AnalysisConfig,
    ds: ObservationalDataset,
    seed: int | None,
    jobs: int | None,
    profile: str,
) -> EngineConfig:
    base = SumOfTreesConfig.fast() if profile == "fast" else SumOfTreesConfig()
    if cfg.trees_overrides:
        base = dataclasses.replace(base, **dict(cfg.trees_overrides))
    gps = GpsModelConfig(
        model=cfg.gps_model,
        strat_columns=tuple(
            _column_index(c, ds) for c in cfg.gps_strat_columns
        ),
        prior_weight=cfg.gps_prior_weight,
        ridge=cfg.gps_ridge,
    )
    kwargs: dict[str, Any] = {}
    if cfg.reference_arm is not None:
        kwargs["reference_arm"] = _arm_index(cfg.reference_arm, ds)
    return EngineConfig(
        m1=cfg.m1,
        m2=cfg.m2,
        estimand=cfg.estimand,
        gps=gps,
        trees=base,
        seed=cfg.seed if seed is None else seed,
        jobs=cfg.jobs if jobs is None else jobs,
        **kwargs,
    )


# ---------------------------------------------------------------------------
# output helpers


def _label_of(arm: int, ds: ObservationalDataset) -> int:
    return ds.treatment_levels[arm - 1]


def _summary_payload(res, eng: EngineConfig, ds: ObservationalDataset) -> dict:
    effects = {}
    arms = range(1, ds.treatment_count + 1)
    for j in arms:
        for k in arms:
            if j < k:
                e = res.effect(j, k)
                effects[f"{_label_of(j, ds)}v{_label_of(k, ds)}"] = {
                    "mean": e.mean,
                    "lower95": e.lower95,
                    "upper95": e.upper95,
                }
    return {
        "estimand": eng.estimand,
        "m1": eng.m1,
        "m2": eng.m2,
        "seed": eng.seed,
        "treatment_levels": list(ds.treatment_levels),
        "effects": effects,
    }


def _write_json(payload: dict, path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _effect_table(payload: dict) -> str:
    lines = [f"{'pair':<10}{'estimate':>10}   95% interval",
             "-" * 38]
    for name, e in payload["effects"].items():
        j, k = name.split("v")
        lines.append(
            f"{j + ' vs ' + k:<10}{e['mean']:>10.2f}   "
            f"({e['lower95']:.2f}, {e['upper95']:.2f})"
        )
    return "\n".join(lines)


def _write_samples(res, ds: ObservationalDataset, path: Path) -> None:
    arms = range(1, ds.treatment_count + 1)
    names, cols = [], []
    for j in arms:
        for k in arms:
            if j < k:
                names.append(f"{_label_of(j, ds)}v{_label_of(k, ds)}")
                cols.append(res.effect(j, k).samples)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="\n") as fh:
        fh.write(",".join(names) + "\n")
        for row in np.column_stack(cols):
            fh.write(",".join(repr(float(v)) for v in row) + "\n")


# ---------------------------------------------------------------------------
# commands


def cmd_analyze(args: argparse.Namespace) -> int:
    config_path = Path(args.config)
    cfg = parse_config(config_path.read_text())
    ds = _load_data(cfg, config_path.parent)
    spec = bind_spec(cfg.priors, ds)
    eng = build_engine_config(cfg, ds, args.seed, args.jobs, args.profile)
    res = run_sensitivity(ds, spec, eng)
    payload = _summary_payload(res, eng, ds)
    out_dir = Path(args.out_dir)
    _write_json(payload, out_dir / cfg.summary_path)
    if cfg.samples_path is not None:
        _write_samples(res, ds, out_dir / cfg.samples_path)
    if cfg.print_table:
        print(_effect_table(payload))
    return EXIT_OK


def cmd_simulate(args: argparse.Namespace) -> int:
    strategies = tuple(s.strip() for s in args.strategies.split(",") if s.strip())
    for s in strategies:
        if s not in simlab.STRATEGY_NAMES:
            raise ConfigError(
                f"unknown strategy {s!r}; choose from {simlab.STRATEGY_NAMES}"
            )
    if not strategies:
        raise ConfigError("no strategies given")
    trees = (
        SumOfTreesConfig.fast() if args.profile == "fast" else SumOfTreesConfig()
    )

    def progress(done: int, total: int) -> None:
        print(f"replication {done}/{total}", file=sys.stderr, flush=True)

    study = simlab.run_replications(
        args.scenario,
        strategies,
        args.reps,
        n=args.n,
        overlap=args.overlap,
        ratio=args.ratio,
        m1=args.m1,
        m2=args.m2,
        trees=trees,
        h=args.h,
        direction=args.direction,
        seed=0 if args.seed is None else args.seed,
        jobs=1 if args.jobs is None else args.jobs,
        progress=progress,
    )
    out = Path(args.out_dir) / args.out
    out.parent.mkdir(parents=True, exist_ok=True)
    header = "scenario,strategy,pair,truth,reps,AAB,RMSE,coverage"
    rows = []
    for r in study.metric_rows():
        rows.append(
            ",".join(
                [r["scenario"], r["strategy"], r["pair"], repr(r["truth"]),
                 str(r["reps"]), repr(r["AAB"]), repr(r["RMSE"]),
                 repr(r["coverage"])]
            )
        )
    out.write_text(header + "\n" + "\n".join(rows) + "\n")
    print(f"wrote {out}")
    return EXIT_OK


def cmd_contour(args: argparse.Namespace) -> int:
    config_path = Path(args.config)
    cfg = parse_config(config_path.read_text())
    if cfg.contour is None:
        raise ConfigError("config has no [contour] section")
    ds = _load_data(cfg, config_path.parent)
    raw_pair = cfg.contour["pair"]
    pair = (_arm_index(int(raw_pair[0]), ds), _arm_index(int(raw_pair[1]), ds))
    swept = {tuple(p["pair"]) for p in cfg.priors} & {
        (int(raw_pair[0]), int(raw_pair[1])),
        (int(raw_pair[1]), int(raw_pair[0])),
    }
    spec = bind_spec(
        [p for p in cfg.priors if tuple(p["pair"]) not in swept], ds
    )
    jk, kj = cfg.contour["jk"], cfg.contour["kj"]
    grid = simlab.ContourGrid(
        jk=(float(jk[0]), float(jk[1]), float(jk[2])),
        kj=(float(kj[0]), float(kj[1]), float(kj[2])),
    )
    eng = build_engine_config(cfg, ds, args.seed, args.jobs, args.profile)

    def progress(done: int, total: int) -> None:
        print(f"cell {done}/{total}", file=sys.stderr, flush=True)

    result = simlab.contour_grid(ds, pair, grid, spec, eng, progress=progress)
    out = Path(args.out_dir) / str(cfg.contour.get("out", "contour.csv"))
    out.parent.mkdir(parents=True, exist_ok=True)
    lines = ["c_jk,c_kj,estimate"]
    for c_jk, c_kj, est in result.rows():
        lines.append(f"{c_jk!r},{c_kj!r},{est!r}")
    out.write_text("\n".join(lines) + "\n")
    print(f"wrote {out}")
    return EXIT_OK


def cmd_report(args: argparse.Namespace) -> int:
    config_path = Path(args.config)
    cfg = parse_config(config_path.read_text())
    ds = _load_data(cfg, config_path.parent)
    spec = bind_spec(cfg.priors, ds)
    eng = build_engine_config(cfg, ds, args.seed, args.jobs, args.profile)
    res = run_sensitivity(ds, spec, eng)
    payload = _summary_payload(res, eng, ds)

    prior_lines = []
    for p in cfg.priors:
        j, k = p["pair"]
        if p["dist"] == "point":
            desc = f"point mass at {p['value']:g}"
        elif p["dist"] == "uniform":
            desc = f"uniform on ({p['lo']:g}, {p['hi']:g})"
        elif p["dist"] == "truncnormal":
            desc = (f"truncated normal({p['center']:g}, {p['spread']:g}) "
                    f"on ({p['lo']:g}, {p['hi']:g})")
        else:
            desc = f"stratified on {p['column']} ({len(p['table'])} strata)"
        prior_lines.append(f"  c({j},{k}): {desc}")
    if not prior_lines:
        prior_lines = ["  none (ignorability assumed for every pair)"]

    counts = ", ".join(
        f"{_label_of(j + 1, ds)}: {int(c)}" for j, c in enumerate(ds.arm_counts())
    )
    text = "\n".join(
        [
            "Sensitivity analysis report",
            "===========================",
            f"data: {cfg.data_path} (n={ds.n}, arms {counts})",
            f"engine: estimand={eng.estimand} M1={eng.m1} M2={eng.m2} "
            f"seed={eng.seed}",
            "priors:",
            *prior_lines,
            "",
            _effect_table(payload),
            "",
            "Intervals pool posterior draws over GPS fits and prior draws;",
            "they widen as the priors above admit more confounding.",
        ]
    ) + "\n"
    out = Path(args.out_dir) / args.out
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(text)
    print(text, end="")
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> None:  # usage problems exit 1, not 2
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _add_global_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, default=None,
                   help="override the config seed")
    p.add_argument("--jobs", type=int, default=None,
                   help="worker threads for engine fits")
    p.add_argument("--out-dir", default=".", help="directory for outputs")
    p.add_argument("--profile", choices=("fast", "paper"), default="fast",
                   help="sum-of-trees preset when [trees] is absent")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="mtsens", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    pa = sub.add_parser("analyze", help="run one sensitivity analysis")
    pa.add_argument("config", help="TOML config path")
    _add_global_flags(pa)
    pa.set_defaults(func=cmd_analyze)

    ps = sub.add_parser("simulate", help="replicate a synthetic scenario")
    ps.add_argument("scenario", choices=simlab.SCENARIOS)
    ps.add_argument("--reps", type=int, default=100)
    ps.add_argument("--strategies", default="I",
                    help="comma-separated strategy names")
    ps.add_argument("--n", type=int, default=1500)
    ps.add_argument("--overlap", choices=tuple(simlab.OVERLAP_GAMMAS),
                    default="strong")
    ps.add_argument("--ratio", choices=tuple(simlab.RATIO_ALPHAS),
                    default="1:1:1")
    ps.add_argument("--m1", type=int, default=10)
    ps.add_argument("--m2", type=int, default=10)
    ps.add_argument("--h", type=float, default=1.0)
    ps.add_argument("--direction", choices=("up", "down"), default="down")
    ps.add_argument("--out", default="metrics.csv")
    _add_global_flags(ps)
    ps.set_defaults(func=cmd_simulate)

    pc = sub.add_parser("contour", help="sweep one pair over a c-value grid")
    pc.add_argument("config", help="TOML config path with a [contour] section")
    _add_global_flags(pc)
    pc.set_defaults(func=cmd_contour)

    pr = sub.add_parser("report", help="analyze and write a text report")
    pr.add_argument("config", help="TOML config path")
    pr.add_argument("--out", default="report.txt")
    _add_global_flags(pr)
    pr.set_defaults(func=cmd_report)

    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
