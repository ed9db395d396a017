"""Command line runner: ``enlarge-sim <experiment> --config FILE``.

The config is a TOML file.  Top-level keys: ``horizon``, ``n_steps``,
``n_paths``, ``seed`` and ``workers``; tables ``[model]`` (``beta``,
``sigma2``, ``nu`` as ``[[size, rate], ...]``), ``[hazard]`` (``kind`` =
``constant`` | ``staircase`` | ``mixed`` with ``rate``, ``kappa``,
``s_max``) and one optional table per experiment for its own settings.

Every run writes ``summary.txt`` (one PASS/FAIL line per gate),
``manifest.txt`` (config hash, seed, versions, timestamp) and CSV tables.
Exit status: 0 all gates pass, 1 a gate fails, 2 bad config, 3 too few
paths for the requested statistics.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import platform
import sys
from dataclasses import dataclass, field
from datetime import datetime, timezone
from importlib import metadata
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import kernels
from .diagnostics import (azema_crosscheck, bracket_check, co_jump_audit, enlargement_identities,
                          martingale_increment_test, orthogonality_check, post_default_levy_check)
from .errors import ConfigurationError, EnlargeSimError, StatisticalPowerError
from .features import bounded_function, payoff
from .levy_sim import LevyModel, simulate_batch, verify_levy_characterization
from .multiplicity import multiplicity_experiment, time_change_example
from .random_time import AbsolutelyContinuous, HazardSpec, SingularContinuous, draw_random_times
from .representation import compare_representations, explicit_representation, regression_representation

EXPERIMENTS = ("verify-levy", "verify-enlargement", "represent", "multiplicity", "time-change")
EXIT_OK, EXIT_GATE, EXIT_CONFIG, EXIT_POWER = 0, 1, 2, 3

DEFAULT_THRESHOLDS = {"W_T": 0.02, "M_T": 0.02, "H_T": 0.10, "clipped_L_survival": 0.10}


@dataclass
class ExperimentConfig:
    """Validated run settings; ``sections`` keeps the per-experiment tables."""

    experiment: str
    model: LevyModel
    hazard: HazardSpec | None
    horizon: float
    n_steps: int
    n_paths: int
    seed: int
    workers: int
    sections: dict = field(default_factory=dict)
    sha256: str = ""

    def section(self, name: str) -> dict:
        return dict(self.sections.get(name, {}))


def _require(table: dict, key: str, where: str, kind: type | tuple = (int, float)):
    if key not in table:
        raise ConfigurationError(f"{where}.{key}: missing")
    value = table[key]
    if not isinstance(value, kind) or isinstance(value, bool):
        raise ConfigurationError(f"{where}.{key}: expected {kind}, got {value!r}")
    return value


def _model(table: dict) -> LevyModel:
    nu = table.get("nu", [])
    try:
        pairs = tuple((float(x), float(r)) for x, r in nu)
    except (TypeError, ValueError):
        raise ConfigurationError(f"model.nu: expected [[size, rate], ...], got {nu!r}") from None
    try:
        return LevyModel(float(table.get("beta", 0.0)), float(table.get("sigma2", 1.0)), pairs)
    except EnlargeSimError as exc:
        raise ConfigurationError(f"model: {exc}") from None


def _hazard(table: dict) -> HazardSpec:
    kind = table.get("kind")
    try:
        if kind == "constant":
            return HazardSpec.constant(_require(table, "rate", "hazard"))
        if kind == "staircase":
            return HazardSpec.staircase(_require(table, "kappa", "hazard"), float(table.get("s_max", 1.0)))
        if kind == "mixed":
            return HazardSpec.mixed((AbsolutelyContinuous(float(_require(table, "rate", "hazard"))),
                                     SingularContinuous(float(_require(table, "kappa", "hazard")),
                                                        float(table.get("s_max", 1.0)))))
    except EnlargeSimError as exc:
        raise ConfigurationError(f"hazard: {exc}") from None
    raise ConfigurationError(f"hazard.kind: expected constant, staircase or mixed, got {kind!r}")


def _payoff(item):
    if isinstance(item, str):
        return payoff(item)
    if isinstance(item, dict) and "name" in item:
        params = {k: v for k, v in item.items() if k != "name"}
        return payoff(item["name"], **params)
    raise ConfigurationError(f"payoff entry {item!r}: expected a name or a table with 'name'")


def load_config(path: str | Path, experiment: str, seed: int | None = None,
                paths: int | None = None) -> ExperimentConfig:
    """Parse and validate a TOML config; ``seed`` and ``paths`` override the file."""
    raw = Path(path).read_bytes()
    try:
        data = tomllib.loads(raw.decode("utf-8"))
    except (tomllib.TOMLDecodeError, UnicodeDecodeError) as exc:
        raise ConfigurationError(f"{path}: {exc}") from None
    if experiment not in EXPERIMENTS:
        raise ConfigurationError(f"unknown experiment {experiment!r}; choose from {EXPERIMENTS}")
    declared = data.get("experiment")
    if declared is not None and declared != experiment:
        raise ConfigurationError(f"experiment: config declares {declared!r} but {experiment!r} was requested")
    needs_hazard = experiment in ("verify-enlargement", "represent", "multiplicity")
    if needs_hazard and "hazard" not in data:
        raise ConfigurationError(f"hazard: missing table [hazard] (required by {experiment})")
    model = _model(data.get("model", {}))
    hazard = _hazard(data["hazard"]) if "hazard" in data else None
    horizon = float(data.get("horizon", 1.0))
    n_steps = int(data.get("n_steps", 1024))
    n_paths = int(paths if paths is not None else data.get("n_paths", 100_000))
    root = int(seed if seed is not None else data.get("seed", 0))
    workers = int(data.get("workers", 1))
    if horizon <= 0 or n_steps < 1 or n_paths < 1 or workers < 1:
        raise ConfigurationError("horizon, n_steps, n_paths and workers must be positive")
    sections = {k: v for k, v in data.items() if isinstance(v, dict) and k not in ("model", "hazard")}
    cfg = ExperimentConfig(experiment, model, hazard, horizon, n_steps, n_paths, root, workers, sections,
                           hashlib.sha256(raw).hexdigest())
    return cfg


# --------------------------------------------------------------------------
# output
# --------------------------------------------------------------------------

def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return "%.17g" % float(v)
    return str(v)


class Output:
    """Single writer for the artifacts of one run."""

    def __init__(self, directory: Path, cfg: ExperimentConfig):
        self.dir = directory
        self.cfg = cfg
        self.dir.mkdir(parents=True, exist_ok=True)
        self.gates: list[tuple[str, bool, str]] = []

    def table(self, name: str, header: Sequence[str], rows) -> None:
        with open(self.dir / name, "w", newline="") as fh:
            fh.write(f"# config_sha256={self.cfg.sha256} seed={self.cfg.seed}\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for r in rows:
                w.writerow([_fmt(v) for v in r])

    def gate(self, name: str, passed: bool, detail: str) -> None:
        self.gates.append((name, bool(passed), detail))

    def finish(self) -> bool:
        ok = all(p for _, p, _ in self.gates)
        with open(self.dir / "summary.txt", "w") as fh:
            fh.write(f"experiment: {self.cfg.experiment}\n")
            fh.write("gates are 4-SE z-tests per cell unless stated; no multiple-testing correction\n")
            for name, passed, detail in self.gates:
                fh.write(f"{'PASS' if passed else 'FAIL'} {name}: {detail}\n")
            fh.write(f"overall: {'PASS' if ok else 'FAIL'}\n")
        self.manifest()
        return ok

    def manifest(self) -> None:
        versions = {"python": platform.python_version(), "numpy": np.__version__}
        for pkg in ("numba", "enlarge-sim"):
            try:
                versions[pkg] = metadata.version(pkg)
            except metadata.PackageNotFoundError:
                versions[pkg] = "not installed"
        with open(self.dir / "manifest.txt", "w") as fh:
            fh.write(f"config_sha256: {self.cfg.sha256}\n")
            fh.write(f"experiment: {self.cfg.experiment}\n")
            fh.write(f"seed: {self.cfg.seed}\n")
            fh.write(f"n_paths: {self.cfg.n_paths}\n")
            fh.write(f"kernel_backend: {kernels.BACKEND}\n")
            for k, v in versions.items():
                fh.write(f"version.{k}: {v}\n")
            fh.write(f"timestamp: {datetime.now(timezone.utc).isoformat()}\n")


# --------------------------------------------------------------------------
# experiments
# --------------------------------------------------------------------------

def _batch(cfg: ExperimentConfig):
    return simulate_batch(cfg.model, cfg.horizon, cfg.n_steps, cfg.n_paths, cfg.seed, cfg.workers)


def run_verify_levy(cfg: ExperimentConfig, out: Output, negative_control: bool) -> None:
    sec = cfg.section("verify_levy")
    u = sec.get("u", [-2.0, -1.0, -0.5, 0.5, 1.0, 2.0])
    t = sec.get("t", [0.25, 0.5, 1.0])
    model = cfg.model
    if negative_control:
        # a drift shifted by one must be detected
        model = LevyModel(model.beta + 1.0, model.sigma2, model.nu)
    rep = verify_levy_characterization(_batch(cfg), model, u, t)
    out.table("characteristic.csv", ["u", "t", "empirical_re", "empirical_im", "theory_re", "theory_im",
                                     "z_re", "z_im"], rep.rows())
    if negative_control:
        out.gate("shifted-drift model rejected", not rep.passed, f"max|z| = {rep.max_abs_z:.3f} (must exceed 4)")
    else:
        out.gate("characteristic function", rep.passed, f"max|z| = {rep.max_abs_z:.3f} <= 4")


def run_verify_enlargement(cfg: ExperimentConfig, out: Output, negative_control: bool) -> None:
    sec = cfg.section("verify_enlargement")
    batch = _batch(cfg)
    sc = draw_random_times(cfg.hazard, batch)
    ident = enlargement_identities(sc)
    out.table("identities.csv", ["identity", "max_rel_error"], sorted(ident.errors.items()))
    out.gate("pathwise identities", ident.passed,
             f"max rel error {max(ident.errors.values()):.3g} <= 1e-10, A decreasing and positive")
    az = azema_crosscheck(cfg.hazard, cfg.model, int(sec.get("azema_outer", 20)),
                          int(sec.get("azema_inner", 10_000)), cfg.horizon, cfg.n_steps,
                          sec.get("azema_times", [0.0, 0.25 * cfg.horizon, 0.5 * cfg.horizon, cfg.horizon]),
                          cfg.seed)
    out.table("azema.csv", ["outer_path", "t", "nested_mc", "exp_minus_gamma", "z"], az.rows())
    out.gate("nested Monte Carlo Azema check", az.passed, f"max|z| = {az.max_abs_z:.3f} <= 4")
    br = bracket_check(sc)
    out.table("brackets.csv", ["max_abs_qv_error", "mean_m_T_sq", "mean_lambda_T", "z"],
              [(br.max_abs_qv_error, br.mean_m2, br.mean_lambda, br.z)])
    out.gate("[M,M]_T = H_T and E[M_T^2] = E[Lambda_T]", br.passed,
             f"qv error {br.max_abs_qv_error:.3g}, z = {br.z:.3f}")
    times = sec.get("test_times", list(np.linspace(0.0, cfg.horizon, 5)))
    processes = ["M"]
    if cfg.model.sigma2 > 0:
        processes.append("W")
    processes += [f"X{i + 1}" for i in range(len(cfg.model.nu))]
    processes += [f"{p}Z[{u!r}]" for u in sec.get("z_u", [0.5, 1.0]) for p in ("Re", "Im")]
    rows = []
    for name in processes:
        rep = martingale_increment_test(name, sc, times)
        rows.extend(rep.rows())
        out.gate(f"martingale test {name}", rep.passed, f"max|z| = {rep.max_abs_z:.3f} <= 4")
    neg = martingale_increment_test("H", sc, times)
    rows.extend(neg.rows())
    out.gate("negative control: uncompensated H rejected", neg.max_abs_z > 10.0,
             f"max|z| = {neg.max_abs_z:.3f} > 10")
    out.table("martingale_tests.csv", ["process", "t0", "t1", "test_function", "mean", "z"], rows)
    orth = orthogonality_check(sc)
    out.table("orthogonality.csv", ["a", "b", "mean_product", "z"], orth.rows())
    out.gate("pairwise orthogonality", orth.passed, f"max|z| = {orth.max_abs_z:.3f} <= 4")
    cj = co_jump_audit(sc)
    out.table("co_jumps.csv", ["n_defaults", "n_jumps", "co_jumps", "min_distance"],
              [(cj.n_defaults, cj.n_jumps, cj.co_jumps, cj.min_distance)])
    out.gate("avoidance audit", cj.passed, f"{cj.co_jumps} co-jumps among {cj.n_defaults} defaults")
    t_post = float(sec.get("post_default_t", 0.5 * cfg.horizon))
    try:
        post = post_default_levy_check(sc, sec.get("z_u", [0.5, 1.0]), t_post)
        out.gate("L stays Levy after default", post.passed, f"max|z| = {post.max_abs_z:.3f} <= 4 "
                 f"on {post.n_conditioned} scenarios")
    except StatisticalPowerError as exc:
        out.gate("L stays Levy after default", False, str(exc))


def run_represent(cfg: ExperimentConfig, out: Output, negative_control: bool) -> None:
    sec = cfg.section("represent")
    s = float(sec.get("s", 0.5 * cfg.horizon))
    level = float(sec.get("level", 2.0))
    panel_spec = sec.get("panel", ["W_T", "M_T", "H_T", {"name": "clipped_L_survival", "level": level, "s": s}])
    thresholds = {**DEFAULT_THRESHOLDS, **sec.get("thresholds", {})}
    sc = draw_random_times(cfg.hazard, _batch(cfg))
    rows = []
    reps = {}
    for item in panel_spec:
        p = _payoff(item)
        rep = regression_representation(p, sc)
        reps[p.name] = rep
        limit = float(thresholds.get(p.name, 0.10))
        rows.append((p.label, "regression", rep.residual_rel, rep.residual_se, limit))
        out.gate(f"regression {p.label}", rep.residual_rel <= limit,
                 f"residual_rel {rep.residual_rel:.4f} <= {limit}")
        out.table(f"integrands_{p.name}.csv", ["cell", "t", "integrator", "feature", "coefficient"],
                  rep.coefficient_rows())
    g = bounded_function(sec.get("g", "clip"), level=level)
    exp_rep = explicit_representation(g, s, sc)
    limit = float(sec.get("explicit_threshold", 0.05))
    rows.append((exp_rep.label, "explicit", exp_rep.residual_rel, exp_rep.residual_se, limit))
    out.gate("explicit construction", exp_rep.residual_rel <= limit,
             f"residual_rel {exp_rep.residual_rel:.4f} <= {limit}")
    out.table("residuals.csv", ["payoff", "method", "residual_rel", "residual_se", "threshold"], rows)
    if "clipped_L_survival" in reps:
        agree = compare_representations(exp_rep, reps["clipped_L_survival"])
        out.table("agreement.csv", ["distance_rel", "distance_se", "allowance"],
                  [(agree.distance_rel, agree.distance_se, agree.allowance)])
        out.gate("explicit vs regression", agree.passed,
                 f"L2 distance {agree.distance_rel:.4f} <= {agree.allowance:.4f}")


def _multiplicity_tables(out: Output, report) -> None:
    out.table("multiplicity.csv", ["payoff", "r_pair", "r_free", "r_splice", "r_single", "gap", "se_pair", "se_free"],
              [(r.payoff, r.r_pair, r.r_free, r.r_splice, r.r_single, r.gap, r.se_pair, r.se_free)
               for r in report.rows])
    sr = report.singularity
    out.table("singularity.csv", ["hazard_kind", "D", "hazard_mass_on_d", "clock_mass_on_d", "lebesgue_on_d",
                                  "max_tau_distance", "verdict", "n_paths", "n_cells"],
              [(report.hazard_kind, report.d_description, sr.hazard_mass_on_d, sr.clock_mass_on_d,
                sr.lebesgue_on_d, sr.max_tau_distance, report.verdict, report.n_paths, report.n_cells)])


def _verdict_gate(out: Output, report, negative_control: bool) -> None:
    out.gate("pair no worse than single", report.ordering_holds, "r_pair <= r_single + 4 SE on every payoff")
    if negative_control:
        out.gate("single driver fails (negative control)", report.verdict == "multiplicity-two",
                 f"verdict {report.verdict}, max gap {report.max_gap:.4f} >= {report.gap}")
    else:
        out.gate("multiplicity-one consistent", report.verdict == "multiplicity-one",
                 f"verdict {report.verdict}, max gap {report.max_gap:.4f} <= {report.tol}")


def run_multiplicity(cfg: ExperimentConfig, out: Output, negative_control: bool) -> None:
    sec = cfg.section("multiplicity")
    panel = [_payoff(p) for p in sec["panel"]] if "panel" in sec else None
    report = multiplicity_experiment(cfg.hazard, cfg.n_paths, cfg.seed, cfg.horizon, cfg.model.sigma2,
                                     int(sec.get("level", 12)), cfg.n_steps, panel,
                                     tol=float(sec.get("tol", 0.05)), gap=float(sec.get("gap", 0.10)))
    _multiplicity_tables(out, report)
    _verdict_gate(out, report, negative_control)


def run_time_change(cfg: ExperimentConfig, out: Output, negative_control: bool) -> None:
    sec = cfg.section("time_change")
    panel = [_payoff(p) for p in sec["panel"]] if "panel" in sec else None
    rate = float(sec.get("rate", cfg.hazard.components[0].rate if cfg.hazard is not None else 1.0))
    rep = time_change_example(cfg.n_paths, cfg.seed, rate, cfg.horizon, int(sec.get("level", 14)),
                              int(sec.get("qv_steps", 2 ** 12)), int(sec.get("qv_paths", 10_000)), panel,
                              tol=float(sec.get("tol", 0.05)), gap=float(sec.get("gap", 0.10)))
    out.table("time_change_qv.csv", ["qv_mean", "qv_se", "qv_target", "qv_steps", "rel_error"],
              [(rep.qv_mean, rep.qv_se, rep.qv_target, rep.qv_steps, rep.qv_rel_error)])
    out.gate("[X,X]_T matches C(T)", rep.qv_rel_error <= 0.05, f"relative error {rep.qv_rel_error:.4f} <= 0.05")
    _multiplicity_tables(out, rep.multiplicity)
    _verdict_gate(out, rep.multiplicity, negative_control)


RUNNERS: dict[str, Callable] = {
    "verify-levy": run_verify_levy,
    "verify-enlargement": run_verify_enlargement,
    "represent": run_represent,
    "multiplicity": run_multiplicity,
    "time-change": run_time_change,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="enlarge-sim", description=__doc__.splitlines()[0])
    p.add_argument("experiment", choices=EXPERIMENTS)
    p.add_argument("--config", required=True, help="TOML config file")
    p.add_argument("--seed", type=int, help="root seed (overrides the config)")
    p.add_argument("--paths", type=int, help="number of paths (overrides the config)")
    p.add_argument("--out", default="out", help="output directory (default: ./out)")
    p.add_argument("--negative-control", action="store_true",
                   help="invert the gate: pass only if the tested property is rejected")
    return p


def run(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, args.experiment, args.seed, args.paths)
    except (ConfigurationError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out = Output(Path(args.out), cfg)
    try:
        RUNNERS[cfg.experiment](cfg, out, args.negative_control)
    except StatisticalPowerError as exc:
        print(f"statistical power error: {exc}", file=sys.stderr)
        return EXIT_POWER
    except ConfigurationError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    ok = out.finish()
    for name, passed, detail in out.gates:
        print(f"{'PASS' if passed else 'FAIL'} {name}: {detail}")
    return EXIT_OK if ok else EXIT_GATE


def main(argv: Sequence[str] | None = None) -> None:
    sys.exit(run(argv))


if __name__ == "__main__":
    main()
