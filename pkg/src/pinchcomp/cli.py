"""Experiment runner: convergence traces, power/threshold sweeps, evaluation.

Configuration is a TOML file with [geometry], [gml] and [experiment]
sections; every key has a Table-I-style default so an empty config is a
valid desk-scale experiment.  All randomness is seed-derived, outputs are
deterministic CSV/JSON (sorted rows, 12 significant digits).

Exit codes: 0 success, 2 configuration error, 3 numerical abort.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import dataclass, field, replace

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib

from . import baselines, gml
from .geometry import (build_geometry, dbm_to_watt, PinchingState,
                       SystemGeometry, with_power_dbm, with_rate_threshold,
                       spacing_violations, range_violations)
from .channel import effective_channel_matrix
from .rate import BeamformingState, sum_rate, power_check


class ConfigError(ValueError):
    pass


GEOMETRY_DEFAULTS = dict(
    n_waveguides=2,
    n_pas=4,
    span=80.0,
    height_bs1=10.0,
    height_bs2=15.0,
    wavelength=0.01,
    n_eff=1.4,
    noise_density_dbm_hz=-173.0,
    bandwidth_hz=1e6,
    power_dbm=18.0,
    rate_threshold=0.2,
    n_users=2,
    ula_alpha=3.9,
)

GML_DEFAULTS = dict(
    inner_iterations=10,
    outer_iterations=200,
    epochs=50,
    zeta1=1e-4,
    zeta2=1e-2,
    lr_w=1e-3,
    lr_p=1.6e-3,
    penalty_mode="hinge",
    truncation=0,
    hidden_dim=210,
    ppn_strict_dims=False,
)

EXPERIMENT_DEFAULTS = dict(
    power_grid_dbm=[12.0, 15.0, 18.0, 21.0, 24.0, 27.0, 30.0],
    threshold_grid=[0.2, 0.4, 0.6, 0.8, 1.0, 1.2, 1.4],
    sweep_seeds=list(range(10)),
    seed=0,
    oracle_restarts=16,
    oracle_steps=400,
    baseline_restarts=4,
    baseline_steps=300,
    qos_weight=10.0,
)

# iteration budgets per scale; sweeps use lighter trainings than the
# convergence study, which follows the published trajectory length
SCALES = {
    "ci": dict(gml=dict(inner_iterations=3, outer_iterations=20, epochs=5),
               convergence=dict(outer_iterations=20, epochs=1),
               experiment=dict(sweep_seeds=[0, 1], oracle_restarts=4,
                               oracle_steps=120, baseline_restarts=2,
                               baseline_steps=60,
                               power_grid_dbm=[15.0, 18.0],
                               threshold_grid=[0.2, 0.8])),
    "desk": dict(gml=dict(inner_iterations=10, outer_iterations=40, epochs=8),
                 convergence=dict(outer_iterations=100, epochs=25),
                 experiment=dict()),
    "paper": dict(gml=dict(inner_iterations=10, outer_iterations=200, epochs=50),
                  convergence=dict(outer_iterations=200, epochs=50),
                  experiment=dict()),
}


@dataclass
class ExperimentConfig:
    geometry: dict = field(default_factory=dict)
    gml: dict = field(default_factory=dict)
    experiment: dict = field(default_factory=dict)
    scale: str = "desk"

    def geometry_for(self, seed: int) -> SystemGeometry:
        g = self.geometry
        try:
            return build_geometry(
                n_waveguides=int(g["n_waveguides"]),
                n_pas=int(g["n_pas"]),
                span=float(g["span"]),
                heights=(float(g["height_bs1"]), float(g["height_bs2"])),
                users=np.asarray(g["users"], dtype=float) if "users" in g else None,
                n_users=int(g["n_users"]),
                seed=seed,
                wavelength=float(g["wavelength"]),
                n_eff=float(g["n_eff"]),
                min_spacing=(float(g["min_spacing"]) if "min_spacing" in g else None),
                eta=(float(g["eta"]) if "eta" in g else None),
                delta_eq=(float(g["delta_eq"]) if "delta_eq" in g else None),
                noise_density_dbm_hz=float(g["noise_density_dbm_hz"]),
                bandwidth_hz=float(g["bandwidth_hz"]),
                power_dbm=float(g["power_dbm"]),
                rate_threshold=float(g["rate_threshold"]),
            )
        except (ValueError, KeyError, TypeError) as exc:
            raise ConfigError(f"invalid geometry configuration: {exc}") from exc

    def gml_config(self, seed: int, **overrides) -> gml.GmlConfig:
        vals = dict(self.gml)
        vals.update(overrides)
        try:
            return gml.GmlConfig(
                inner_iterations=int(vals["inner_iterations"]),
                outer_iterations=int(vals["outer_iterations"]),
                epochs=int(vals["epochs"]),
                zeta1=float(vals["zeta1"]),
                zeta2=float(vals["zeta2"]),
                lr_w=float(vals["lr_w"]),
                lr_p=float(vals["lr_p"]),
                penalty_mode=str(vals["penalty_mode"]),
                truncation=int(vals["truncation"]),
                seed=seed,
                hidden_dim=int(vals["hidden_dim"]),
                ppn_strict_dims=bool(vals["ppn_strict_dims"]),
            )
        except (ValueError, KeyError, TypeError) as exc:
            raise ConfigError(f"invalid gml configuration: {exc}") from exc

    def convergence_gml_config(self, seed: int) -> gml.GmlConfig:
        conv = SCALES[self.scale].get("convergence", {})
        return self.gml_config(seed, **conv)

    def echo(self) -> dict:
        return {"geometry": dict(self.geometry), "gml": dict(self.gml),
                "experiment": dict(self.experiment), "scale": self.scale}


def _coerce(text: str):
    low = text.strip()
    if low.lower() in ("true", "false"):
        return low.lower() == "true"
    try:
        return int(low)
    except ValueError:
        pass
    try:
        return float(low)
    except ValueError:
        pass
    if "," in low:
        return [_coerce(part) for part in low.split(",")]
    return low


def load_config(path: str | None, scale: str, sets: list[str]) -> ExperimentConfig:
    doc = {}
    if path is not None:
        try:
            with open(path, "rb") as fh:
                doc = tomllib.load(fh)
        except FileNotFoundError as exc:
            raise ConfigError(f"config file not found: {path}") from exc
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"config file is not valid TOML: {exc}") from exc

    scale = doc.get("scale", scale)
    if scale not in SCALES:
        raise ConfigError(f"unknown scale {scale!r}; choose from {sorted(SCALES)}")
    geometry = dict(GEOMETRY_DEFAULTS)
    geometry.update(doc.get("geometry", {}))
    gml_vals = dict(GML_DEFAULTS)
    gml_vals.update(SCALES[scale].get("gml", {}))
    gml_vals.update(doc.get("gml", {}))
    experiment = dict(EXPERIMENT_DEFAULTS)
    experiment.update(SCALES[scale].get("experiment", {}))
    experiment.update(doc.get("experiment", {}))

    cfg = ExperimentConfig(geometry, gml_vals, experiment, scale)
    for item in sets:
        if "=" not in item:
            raise ConfigError(f"--set expects section.key=value, got {item!r}")
        key, value = item.split("=", 1)
        parts = key.strip().split(".")
        if len(parts) != 2 or parts[0] not in ("geometry", "gml", "experiment"):
            raise ConfigError(
                f"--set key must be geometry.*, gml.* or experiment.*, got {key!r}")
        getattr(cfg, parts[0])[parts[1]] = _coerce(value)
    return cfg


def _fmt(value) -> str:
    if isinstance(value, float):
        return f"{value:.12g}"
    return str(value)


def write_csv(path, header: list[str], rows: list[tuple]):
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(_fmt(v) for v in row))
    text = "\n".join(lines) + "\n"
    if path in (None, "-"):
        sys.stdout.write(text)
    else:
        with open(path, "w", newline="") as fh:
            fh.write(text)


# -- subcommands ----------------------------------------------------------------

def run_convergence(config: ExperimentConfig, seed: int, out_path):
    """Per-outer-iteration trace of one training run plus the reference row."""
    geom = config.geometry_for(seed)
    gcfg = config.convergence_gml_config(seed)
    result = gml.train(geom, gcfg)
    exp = config.experiment
    oracle = baselines.pga_oracle(
        geom, restarts=int(exp["oracle_restarts"]), steps=int(exp["oracle_steps"]),
        seed=seed)
    header = ["outer_iteration", "sum_rate", "rate_loss", "threshold_loss",
              "spacing_loss", "range_loss", "best_so_far"]
    rows = [(pt.outer, pt.sum_rate, pt.rate_loss, pt.threshold_loss,
             pt.spacing_loss, pt.range_loss, pt.best_so_far)
            for pt in result.trace]
    rows.append(("oracle", oracle.sum_rate, -oracle.sum_rate, 0.0, 0.0, 0.0,
                 oracle.sum_rate))
    write_csv(out_path, header, rows)
    return result, oracle


SWEEP_SCHEMES = ("equidistant", "gml", "ula", "wdma")


def _gml_best_rate(result: gml.TrainResult, r_th: float):
    cand = gml.select_candidate(result, r_th)
    if cand is None:
        return None
    return cand


def run_power_sweep(config: ExperimentConfig, out_path):
    """Average sum rate per scheme over the power grid and the seed list.

    Projected-gradient schemes are warm-started along the grid and previous
    solutions stay admissible at larger budgets, so per-seed curves are
    non-decreasing by construction.
    """
    exp = config.experiment
    grid = [float(p) for p in exp["power_grid_dbm"]]
    if sorted(grid) != grid or not grid:
        raise ConfigError("power grid must be non-empty and ascending")
    seeds = [int(s) for s in exp["sweep_seeds"]]
    qw = float(exp["qos_weight"])
    acc = {(p, s): {} for p in grid for s in SWEEP_SCHEMES}

    for seed in seeds:
        base_geom = config.geometry_for(seed)
        prev = {}
        for p_dbm in grid:
            geom = with_power_dbm(base_geom, p_dbm)

            res = gml.train(geom, config.gml_config(seed))
            rate = res.best_sum_rate
            if "gml" in prev:
                # a lower-budget solution stays feasible at a higher budget
                rate = max(rate, prev["gml"])
            prev["gml"] = rate
            acc[(p_dbm, "gml")][seed] = rate

            eq = baselines.equidistant_baseline(
                geom, restarts=int(exp["baseline_restarts"]),
                steps=int(exp["baseline_steps"]), qos_weight=qw, seed=seed,
                w_warm=prev.get("eq_w"))
            eq_rate = max(eq.sum_rate, prev.get("equidistant", -np.inf))
            prev["equidistant"] = eq_rate
            prev["eq_w"] = eq.w
            acc[(p_dbm, "equidistant")][seed] = eq_rate

            ula = baselines.fixed_ula_optimize(
                geom, steps=int(exp["baseline_steps"]),
                restarts=int(exp["baseline_restarts"]), qos_weight=qw,
                seed=seed, alpha=float(config.geometry["ula_alpha"]))
            ula_rate = max(ula.sum_rate, prev.get("ula", -np.inf))
            prev["ula"] = ula_rate
            acc[(p_dbm, "ula")][seed] = ula_rate

            wd = baselines.wdma_baseline(geom)
            wd_rate = max(wd.sum_rate, prev.get("wdma", -np.inf))
            prev["wdma"] = wd_rate
            acc[(p_dbm, "wdma")][seed] = wd_rate

    header = ["power_dbm", "scheme", "sum_rate"]
    rows = []
    for p_dbm in grid:
        for scheme in sorted(SWEEP_SCHEMES):
            mean = float(np.mean([acc[(p_dbm, scheme)][s] for s in seeds]))
            rows.append((p_dbm, scheme, mean))
    write_csv(out_path, header, rows)
    return acc


def run_threshold_sweep(config: ExperimentConfig, out_path):
    """Average sum rate and infeasible fraction per scheme over QoS thresholds.

    The meta-learned run is trained once per seed; each threshold re-selects
    the best stored candidate satisfying it, which makes the per-seed curve
    non-increasing.  Baselines re-solve with a QoS-penalized objective.
    """
    exp = config.experiment
    grid = [float(t) for t in exp["threshold_grid"]]
    if sorted(grid) != grid or not grid:
        raise ConfigError("threshold grid must be non-empty and ascending")
    seeds = [int(s) for s in exp["sweep_seeds"]]
    qw = float(exp["qos_weight"])

    rates = {(t, s): [] for t in grid for s in SWEEP_SCHEMES}
    infeas = {(t, s): 0 for t in grid for s in SWEEP_SCHEMES}

    for seed in seeds:
        base_geom = config.geometry_for(seed)
        train_geom = with_rate_threshold(base_geom, grid[0])
        result = gml.train(train_geom, config.gml_config(seed))

        eq_plain = baselines.equidistant_baseline(
            base_geom, restarts=int(exp["baseline_restarts"]),
            steps=int(exp["baseline_steps"]), qos_weight=0.0, seed=seed)

        for r_th in grid:
            geom_t = with_rate_threshold(base_geom, r_th)

            cand = gml.select_candidate(result, r_th)
            if cand is None:
                infeas[(r_th, "gml")] += 1
                fallback = max(result.candidates, key=lambda c: c.sum_rate)
                rates[(r_th, "gml")].append(fallback.sum_rate)
            else:
                rates[(r_th, "gml")].append(cand.sum_rate)

            if np.min(eq_plain.report.per_user_rate) >= r_th - 1e-9:
                rates[(r_th, "equidistant")].append(eq_plain.sum_rate)
            else:
                eq_q = baselines.equidistant_baseline(
                    geom_t, restarts=int(exp["baseline_restarts"]),
                    steps=int(exp["baseline_steps"]), qos_weight=qw, seed=seed)
                rates[(r_th, "equidistant")].append(eq_q.sum_rate)
                if not np.all(eq_q.report.per_user_rate >= r_th - 1e-9):
                    infeas[(r_th, "equidistant")] += 1

            ula = baselines.fixed_ula_optimize(
                geom_t, steps=int(exp["baseline_steps"]),
                restarts=int(exp["baseline_restarts"]), qos_weight=qw,
                seed=seed, alpha=float(config.geometry["ula_alpha"]))
            rates[(r_th, "ula")].append(ula.sum_rate)
            if not np.all(ula.report.per_user_rate >= r_th - 1e-9):
                infeas[(r_th, "ula")] += 1

            wd = baselines.wdma_baseline(geom_t)
            rates[(r_th, "wdma")].append(wd.sum_rate)
            if not np.all(wd.report.per_user_rate >= r_th - 1e-9):
                infeas[(r_th, "wdma")] += 1

    header = ["r_th", "scheme", "sum_rate", "infeasible_fraction"]
    rows = []
    for r_th in grid:
        for scheme in sorted(SWEEP_SCHEMES):
            mean = float(np.mean(rates[(r_th, scheme)]))
            frac = infeas[(r_th, scheme)] / len(seeds)
            rows.append((r_th, scheme, mean, frac))
    write_csv(out_path, header, rows)
    return rates, infeas


def run_train(config: ExperimentConfig, seed: int, out_path):
    geom = config.geometry_for(seed)
    result = gml.train(geom, config.gml_config(seed))
    doc = gml.train_result_to_doc(result, config.echo())
    text = json.dumps(doc, indent=1, sort_keys=True)
    if out_path in (None, "-"):
        sys.stdout.write(text + "\n")
    else:
        with open(out_path, "w") as fh:
            fh.write(text + "\n")
    return result


def _require(doc: dict, path: list[str]):
    node = doc
    walked = []
    for key in path:
        walked.append(key)
        if not isinstance(node, dict) or key not in node:
            raise ConfigError(f"solution file missing field {'.'.join(walked)}")
        node = node[key]
    return node


def evaluate(config: ExperimentConfig, solution_path: str, seed: int, out_path):
    """Recompute rates and feasibility from a stored solution document."""
    geom = config.geometry_for(seed)
    try:
        with open(solution_path) as fh:
            doc = json.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"solution file not found: {solution_path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"solution file is not valid JSON: {exc}") from exc

    w_re = np.asarray(_require(doc, ["best", "w_re"]), dtype=float)
    w_im = np.asarray(_require(doc, ["best", "w_im"]), dtype=float)
    if w_re.shape != w_im.shape or w_re.ndim != 3:
        raise ConfigError("solution field best.w_re/w_im must be (2, N, K) arrays")
    w = BeamformingState(w_re + 1j * w_im)
    p_doc = _require(doc, ["best", "p"])
    state = PinchingState(np.asarray(p_doc, dtype=float)) if p_doc is not None else None

    if state is not None:
        a = effective_channel_matrix(geom, state)
    else:
        a = baselines.ula_effective_channel(geom, float(config.geometry["ula_alpha"]))
    report = sum_rate(a, w, geom.noise_power, geom.rate_threshold)
    used, power_ok = power_check(w, geom.power_budget)
    spacing = spacing_violations(geom, state) if state is not None else []
    ranges = range_violations(geom, state) if state is not None else []
    out = {
        "scheme": doc.get("scheme", "unknown"),
        "sum_rate": report.sum_rate,
        "per_user_rate": report.per_user_rate.tolist(),
        "per_user_sinr": report.per_user_sinr.tolist(),
        "feasible_qos": [bool(f) for f in report.feasible_qos],
        "power_used": used.tolist(),
        "power_feasible": power_ok,
        "spacing_violations": len(spacing),
        "range_violations": len(ranges),
    }
    text = json.dumps(out, indent=1, sort_keys=True)
    if out_path in (None, "-"):
        sys.stdout.write(text + "\n")
    else:
        with open(out_path, "w") as fh:
            fh.write(text + "\n")
    return out


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pinchcomp",
        description="Coordinated-multipoint pinching-antenna experiments")
    parser.add_argument("command", choices=[
        "convergence", "sweep-power", "sweep-threshold", "evaluate", "train"])
    parser.add_argument("--config", default=None, help="TOML config file")
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument("--seeds", default=None,
                        help="comma-separated seed list for sweeps")
    parser.add_argument("--out", default=None, help="output path (default stdout)")
    parser.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override a config entry, e.g. gml.epochs=3")
    parser.add_argument("--scale", choices=sorted(SCALES), default="desk")
    parser.add_argument("--solution", default=None,
                        help="solution JSON for the evaluate command")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = load_config(args.config, args.scale, args.set)
        if args.seeds is not None:
            config.experiment["sweep_seeds"] = [int(s) for s in args.seeds.split(",")]
        seed = args.seed if args.seed is not None else int(config.experiment["seed"])

        if args.command == "convergence":
            run_convergence(config, seed, args.out)
        elif args.command == "sweep-power":
            run_power_sweep(config, args.out)
        elif args.command == "sweep-threshold":
            run_threshold_sweep(config, args.out)
        elif args.command == "train":
            run_train(config, seed, args.out)
        elif args.command == "evaluate":
            if args.solution is None:
                raise ConfigError("evaluate requires --solution PATH")
            evaluate(config, args.solution, seed, args.out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (RuntimeError, FloatingPointError) as exc:
        print(f"numerical abort: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
