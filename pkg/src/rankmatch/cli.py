"""``rankmatch`` command line: estimate, simulate, diagnose.

Exit codes: 0 success, 2 input or config error, 3 estimator configuration
error, 4 failed simulation rep.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import tomli

from . import __version__
from .basis import BasisSpec, parse_basis
from .errors import ConfigurationError, InputError, RankMatchError
from .estimator import Dataset, estimate_ate
from .simulation import (
    DgpSpec,
    EstimatorConfig,
    MRule,
    check_density_ratio,
    efficiency_bound,
    gram_study,
    run_monte_carlo,
    rate_sweep_series,
)

EXIT_OK, EXIT_INPUT, EXIT_ESTIMATOR, EXIT_REP_FAILED = 0, 2, 3, 4

SIM_NOTES = ("Coverage is only exhibited under DGPs satisfying overlap and smoothness; "
             "the M-rate window of the asymptotic theory is not validated from data.")


class CliError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


# ---------------------------------------------------------------- formatting

def _fmt_float(x: float) -> str:
    if not math.isfinite(x):
        return "null"
    return format(x, ".17g")


def dumps(obj, indent: int = 2, _level: int = 0) -> str:
    """JSON with insertion-ordered keys and 17-significant-digit floats."""
    pad = " " * (indent * (_level + 1))
    end = " " * (indent * _level)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{json.dumps(str(k))}: {dumps(v, indent, _level + 1)}" for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        items = [f"{pad}{dumps(v, indent, _level + 1)}" for v in obj]
        return "[\n" + ",\n".join(items) + "\n" + end + "]"
    if isinstance(obj, (bool, np.bool_)):
        return "true" if obj else "false"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return _fmt_float(float(obj))
    if obj is None:
        return "null"
    return json.dumps(str(obj))


def _csv_cell(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (float, np.floating)):
        return _fmt_float(float(v)).replace("null", "nan")
    return str(v)


def write_csv(path: Path, header, rows) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_csv_cell(v) for v in row])
    path.write_text(buf.getvalue())


def _emit(text: str, out: str | None) -> None:
    if out:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        Path(out).write_text(text + "\n")
    else:
        sys.stdout.write(text + "\n")


# ---------------------------------------------------------------- estimate

@dataclass(frozen=True)
class EstimateConfig:
    input: str
    treatment: str
    outcome: str
    covariates: tuple[str, ...]
    m: int | str = "auto"
    basis: str = "none"
    level: float = 0.95
    out: str | None = None
    per_unit: str | None = None
    backend: str = "kdtree"

    def __post_init__(self):
        names = [self.treatment, self.outcome, *self.covariates]
        if len(set(names)) != len(names):
            raise CliError(EXIT_INPUT, "treatment, outcome and covariate columns must be distinct")
        if not self.covariates:
            raise CliError(EXIT_INPUT, "at least one covariate column is required")
        if self.m != "auto" and (not isinstance(self.m, int) or self.m < 1):
            raise CliError(EXIT_INPUT, f"--matches must be a positive integer or 'auto', got {self.m!r}")


def auto_matches(n: int, n_treated: int, n_control: int) -> int:
    """ceil(n^0.75 / log n) clamped to [1, smaller group]; a heuristic choice of M."""
    m = math.ceil(n ** 0.75 / math.log(n)) if n > 1 else 1
    return max(1, min(m, n_treated, n_control))


def read_dataset(cfg: EstimateConfig) -> Dataset:
    try:
        text = Path(cfg.input).read_text()
    except OSError as exc:
        raise CliError(EXIT_INPUT, f"cannot read {cfg.input}: {exc.strerror}") from exc
    reader = csv.reader(io.StringIO(text))
    try:
        header = [h.strip() for h in next(reader)]
    except StopIteration:
        raise CliError(EXIT_INPUT, "input CSV is empty; a header row is required") from None
    cols = [cfg.treatment, cfg.outcome, *cfg.covariates]
    missing = [c for c in cols if c not in header]
    if missing:
        raise CliError(EXIT_INPUT, f"missing column(s): {', '.join(missing)}")
    pos = [header.index(c) for c in cols]
    values = []
    for line_no, row in enumerate(reader, start=2):
        if not row:
            continue
        parsed = []
        for c, p in zip(cols, pos):
            cell = row[p].strip() if p < len(row) else ""
            if cell == "":
                raise CliError(EXIT_INPUT, f"row {line_no}, column {c!r}: empty cell")
            try:
                v = float(cell)
            except ValueError:
                raise CliError(EXIT_INPUT, f"row {line_no}, column {c!r}: non-numeric value {cell!r}") from None
            if not math.isfinite(v):
                raise CliError(EXIT_INPUT, f"row {line_no}, column {c!r}: non-finite value {cell!r}")
            parsed.append(v)
        if parsed[0] not in (0.0, 1.0):
            raise CliError(EXIT_INPUT, f"row {line_no}, column {cfg.treatment!r}: treatment must be 0 or 1, got {row[pos[0]].strip()!r}")
        values.append(parsed)
    if len(values) < 2:
        raise CliError(EXIT_INPUT, "need at least two data rows")
    arr = np.asarray(values)
    try:
        return Dataset(arr[:, 2:], arr[:, 0].astype(bool), arr[:, 1])
    except ConfigurationError as exc:
        raise CliError(EXIT_ESTIMATOR, str(exc)) from exc
    except InputError as exc:
        raise CliError(EXIT_INPUT, str(exc)) from exc


def cmd_estimate(cfg: EstimateConfig) -> int:
    data = read_dataset(cfg)
    d = data.covariates.shape[1]
    try:
        spec = parse_basis(cfg.basis, d)
    except ConfigurationError as exc:
        raise CliError(EXIT_INPUT, str(exc)) from exc
    m = auto_matches(data.n, data.n_treated, data.n_control) if cfg.m == "auto" else int(cfg.m)
    try:
        rep = estimate_ate(data, m, spec, cfg.level, cfg.backend)
    except RankMatchError as exc:
        raise CliError(EXIT_ESTIMATOR, str(exc)) from exc
    report = {
        "tau_hat": rep.tau_hat,
        "tau_reg": rep.tau_reg,
        "sigma2_hat": rep.sigma2_hat,
        "ci_lower": rep.ci[0],
        "ci_upper": rep.ci[1],
        "level": rep.level,
        "n": rep.n,
        "m": rep.m_used,
        "basis": "none" if spec is None else spec.label(),
        "n_treated": data.n_treated,
        "n_control": data.n_control,
        "adjusted": rep.adjusted,
    }
    _emit(dumps(report), cfg.out)
    if cfg.per_unit:
        pu = rep.per_unit
        rows = zip(range(data.n), data.treated, data.outcomes, pu.y0_hat, pu.y1_hat, pu.mu0,
                   pu.mu1, pu.residual, pu.k_counts, pu.influence)
        write_csv(Path(cfg.per_unit), ["unit", "treated", "outcome", "y0_hat", "y1_hat", "mu0",
                                       "mu1", "residual", "k", "influence"], rows)
    return EXIT_OK


# ---------------------------------------------------------------- configs

def load_toml(path: str) -> dict:
    try:
        with open(path, "rb") as fh:
            return tomli.load(fh)
    except OSError as exc:
        raise CliError(EXIT_INPUT, f"cannot read {path}: {exc.strerror}") from exc
    except tomli.TOMLDecodeError as exc:
        raise CliError(EXIT_INPUT, f"invalid TOML in {path}: {exc}") from exc


def _dgp(cfg: dict) -> DgpSpec:
    if "dgp" not in cfg:
        raise CliError(EXIT_INPUT, "config needs a [dgp] table")
    try:
        return DgpSpec.from_dict(cfg["dgp"])
    except ConfigurationError as exc:
        raise CliError(EXIT_INPUT, str(exc)) from exc


@dataclass(frozen=True)
class SimulateConfig:
    scenario: str
    dgp: DgpSpec
    estimator: EstimatorConfig
    n: int
    reps: int
    seed: int
    out_dir: str
    efficiency_n_mc: int = 200_000

    @classmethod
    def from_toml(cls, path: str, reps=None, seed=None, out_dir=None) -> "SimulateConfig":
        cfg = load_toml(path)
        dgp = _dgp(cfg)
        est = cfg.get("estimator", {})
        try:
            basis = parse_basis(str(est.get("basis", "none")), dgp.d)
            estimator = EstimatorConfig(MRule.parse(est.get("m", "auto")), basis,
                                        float(est.get("level", 0.95)), str(est.get("backend", "brute")))
            out = cls(
                scenario=str(cfg.get("scenario", Path(path).stem)),
                dgp=dgp,
                estimator=estimator,
                n=int(cfg["n"]),
                reps=int(reps if reps is not None else cfg.get("reps", 100)),
                seed=int(seed if seed is not None else cfg.get("seed", 0)),
                out_dir=str(out_dir or cfg.get("output", {}).get("dir", ".")),
                efficiency_n_mc=int(cfg.get("efficiency_n_mc", 200_000)),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise CliError(EXIT_INPUT, f"invalid simulation config: {exc!r}") from exc
        if out.reps < 1 or out.n < 2:
            raise CliError(EXIT_INPUT, "need reps >= 1 and n >= 2")
        if not 0 < out.estimator.level < 1:
            raise CliError(EXIT_INPUT, "level must lie in (0, 1)")
        return out


def cmd_simulate(config: str, reps=None, seed=None, out_dir=None) -> int:
    cfg = SimulateConfig.from_toml(config, reps, seed, out_dir)
    report = run_monte_carlo(cfg.dgp, cfg.estimator, cfg.n, cfg.reps, cfg.seed)
    bound = efficiency_bound(cfg.dgp, cfg.efficiency_n_mc, cfg.seed)
    summary = {
        "scenario": cfg.scenario,
        "version": f"v{__version__}",
        "spec_hash": cfg.dgp.digest(),
        "seed": cfg.seed,
        "m_rule": cfg.estimator.m_rule.label(),
        "basis": "none" if cfg.estimator.adjustment is None else cfg.estimator.adjustment.label(),
        "level": cfg.estimator.level,
        **report.summary(),
        "efficiency_bound": bound.value,
        "efficiency_bound_se": bound.std_error,
        "notes": SIM_NOTES,
    }
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / f"{cfg.scenario}_summary.json").write_text(dumps(summary) + "\n")
    write_csv(out / f"{cfg.scenario}_reps.csv",
              ["rep", "tau_hat", "sigma2_hat", "ci_lower", "ci_upper", "covered", "m", "n_treated", "error"],
              [(r.rep, r.tau_hat, r.sigma2_hat, r.ci_lower, r.ci_upper, r.covered, r.m, r.n_treated, r.error)
               for r in report.records])
    if report.failures:
        first = report.failures[0]
        sys.stderr.write(f"error: rep {first.rep} failed: {first.error}\n")
        return EXIT_REP_FAILED
    return EXIT_OK


# ---------------------------------------------------------------- diagnose

def _section(cfg: dict, name: str) -> dict:
    if name not in cfg:
        raise CliError(EXIT_INPUT, f"config needs a [{name}] table")
    return cfg[name]


def cmd_diagnose(kind: str, config: str, out: str | None, csv_out: str | None = None) -> int:
    cfg = load_toml(config)
    dgp = _dgp(cfg)
    try:
        if kind == "gram":
            sec = _section(cfg, "gram")
            spec = parse_basis(str(sec["basis"]), dgp.d)
            if spec is None:
                raise ConfigurationError("gram diagnostics need a basis")
            result = gram_study(dgp, spec, int(sec["n"]), int(sec.get("seed", 0)),
                                str(sec.get("points", "ranks")))
            header = list(result)
            rows = [list(result.values())]
            report = {"kind": "gram", "spec_hash": dgp.digest(), **result}
        elif kind == "ratio":
            sec = _section(cfg, "ratio")
            res = check_density_ratio(dgp, [int(v) for v in sec["n_grid"]], MRule.parse(sec.get("m", "power:0.7")),
                                      int(sec.get("reps", 20)), int(sec.get("seed", 0)))
            header = ["n", "m", "median_mse", "mean_mse", "mean_ratio"]
            rows = [[r.n, r.m, r.median_mse, r.mean_mse, r.mean_ratio] for r in res]
            report = {"kind": "ratio", "spec_hash": dgp.digest(), "m_rule": MRule.parse(sec.get("m", "power:0.7")).label(),
                      "reps": int(sec.get("reps", 20)), "seed": int(sec.get("seed", 0)),
                      "rows": [dict(zip(header, r)) for r in rows]}
        elif kind == "rates":
            sec = _section(cfg, "rates")
            bases = [parse_basis(str(b), dgp.d) for b in sec["bases"]]
            if any(b is None for b in bases):
                raise ConfigurationError("rate sweeps need explicit bases")
            res = rate_sweep_series(dgp, bases, [int(v) for v in sec["n_grid"]], int(sec.get("seed", 0)),
                                    int(sec.get("reps", 20)), int(sec.get("n_oracle", 100_000)),
                                    int(sec.get("n_mc", 20_000)))
            header = ["basis", "K", "n", "median_l2", "mean_l2", "median_r_n", "median_b_n",
                      "lipschitz_bound", "median_lambda_min", "surrogate_error", "n_oracle"]
            rows = [[getattr(r, h) for h in header] for r in res]
            report = {"kind": "rates", "spec_hash": dgp.digest(), "reps": int(sec.get("reps", 20)),
                      "seed": int(sec.get("seed", 0)), "rows": [dict(zip(header, r)) for r in rows]}
        else:
            raise CliError(EXIT_INPUT, f"unknown diagnostic {kind!r}")
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, RankMatchError):
            raise CliError(EXIT_INPUT, str(exc)) from exc
        raise CliError(EXIT_INPUT, f"invalid {kind} config: {exc!r}") from exc
    _emit(dumps(report), out)
    if csv_out:
        write_csv(Path(csv_out), header, rows)
    return EXIT_OK


# ---------------------------------------------------------------- entry point

def _matches_arg(text: str):
    if text == "auto":
        return "auto"
    try:
        return int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer or 'auto', got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rankmatch", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"rankmatch {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    est = sub.add_parser("estimate", help="estimate the ATE from a CSV file")
    est.add_argument("--input", required=True)
    est.add_argument("--treatment", required=True)
    est.add_argument("--outcome", required=True)
    est.add_argument("--covariates", required=True, help="comma-separated column names")
    est.add_argument("--matches", type=_matches_arg, default="auto")
    est.add_argument("--basis", default="none", help="none | power:G | legendre:G | pp:G,KNOTS")
    est.add_argument("--level", type=float, default=0.95)
    est.add_argument("--backend", choices=["brute", "kdtree"], default="kdtree")
    est.add_argument("--out")
    est.add_argument("--per-unit")

    sim = sub.add_parser("simulate", help="run a Monte Carlo scenario from a TOML config")
    sim.add_argument("--config", required=True)
    sim.add_argument("--reps", type=int)
    sim.add_argument("--seed", type=int)
    sim.add_argument("--out-dir")

    diag = sub.add_parser("diagnose", help="Gram, density-ratio and series-rate diagnostics")
    diag.add_argument("kind", choices=["gram", "ratio", "rates"])
    diag.add_argument("--config", required=True)
    diag.add_argument("--out")
    diag.add_argument("--csv")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "estimate":
            cfg = EstimateConfig(args.input, args.treatment, args.outcome,
                                 tuple(c.strip() for c in args.covariates.split(",") if c.strip()),
                                 args.matches, args.basis, args.level, args.out, args.per_unit,
                                 args.backend)
            return cmd_estimate(cfg)
        if args.command == "simulate":
            return cmd_simulate(args.config, args.reps, args.seed, args.out_dir)
        return cmd_diagnose(args.kind, args.config, args.out, args.csv)
    except CliError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
