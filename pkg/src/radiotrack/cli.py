"""Command-line entry point: ``radiotrack {simulate,track,estimate,evaluate}``.

Every subcommand writes plot-ready CSV files plus a ``report.json`` that
echoes the fully resolved configuration, so a run can be repeated exactly.
With ``--figures`` PNG renderings are written next to the CSV files.

Errors are reported as one line on stderr, ``radiotrack: error: <kind>:
<message>``, with exit status 1 (2 for command-line usage errors).
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import io
from .errors import DataError, DegenerateGeometryError, NumericalError, OptimizationError
from .estimation import (DEFAULT_INITIAL_BETA, EstimationConfig, PsoConfig, estimate_parameters)
from .filtering import FilterBelief, default_initial_belief, run_filter_arrays
from .movement import DEFAULT_SIGMA, MovementParams
from .simulator import SimScenario, evaluate_track, simulate, uniform_times

log = logging.getLogger("radiotrack")

SCENARIO_KEYS = {"params", "init_state", "times", "detection_times", "towers", "calibration", "seed",
                 "measurement_noise"}
TRACK_KEYS = {"kind", "beta", "sigma", "init", "skip_saturated"}
ESTIMATE_KEYS = {"method", "kind", "swarm_size", "max_iters", "inertia", "cognitive", "social", "seed",
                 "tol", "init_phi", "init_beta", "sigma", "newton_starts", "init_box", "init",
                 "skip_saturated"}


def _check_keys(data, allowed, what):
    if not isinstance(data, dict):
        raise DataError(f"{what} must be a JSON object")
    unknown = sorted(set(data) - allowed)
    if unknown:
        raise DataError(f"{what}: unknown keys {unknown}")


def _vector(value, n, name):
    arr = np.asarray(value, dtype=float).ravel()
    if arr.size != n or not np.all(np.isfinite(arr)):
        raise DataError(f"{name} must be {n} finite numbers, got {value!r}")
    return arr


def _out_dir(path):
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_config(path, allowed, what):
    if path is None:
        return {}
    data = io.load_json(path)
    _check_keys(data, allowed, f"{path}")
    return data


def _initial_belief(spec, detections, towers):
    """Initial belief from a config block, or the default antenna-based guess."""
    if spec is None:
        return default_initial_belief(detections, towers)
    _check_keys(spec, {"mean", "variances", "cov", "t"}, "init")
    if not detections and "t" not in spec:
        raise DataError("init.t is required when there are no detections")
    mean = _vector(spec["mean"], 5, "init.mean")
    if "cov" in spec:
        cov = np.asarray(spec["cov"], dtype=float)
        if cov.shape != (5, 5):
            raise DataError("init.cov must be a 5x5 matrix")
    else:
        cov = np.diag(_vector(spec.get("variances", [1e6, 25, 1e6, 25, 25]), 5, "init.variances"))
    t = float(spec.get("t", detections[0].t if detections else 0.0))
    return FilterBelief(mean, cov, t)


def _belief_dict(belief):
    return {"mean": belief.mean, "cov": belief.cov, "t": belief.t}


def _write_report(out, report):
    path = out / "report.json"
    io.dump_json(path, report)
    return path


# simulate ------------------------------------------------------------------

def build_scenario(config, seed=None, base=Path(".")):
    """Turn a scenario JSON object into a :class:`SimScenario`."""
    _check_keys(config, SCENARIO_KEYS, "scenario")
    try:
        params = config["params"]
        init_state = _vector(config["init_state"], 5, "init_state")
        towers_cfg = config["towers"]
    except KeyError as exc:
        raise DataError(f"scenario: missing key {exc}") from None
    _check_keys(params, {"beta", "sigma"}, "scenario.params")
    mp = MovementParams.from_arrays(_vector(params["beta"], 3, "params.beta"),
                                    _vector(params.get("sigma", DEFAULT_SIGMA), 3, "params.sigma"))
    towers = io.load_towers(base / towers_cfg) if isinstance(towers_cfg, str) else io.towers_from_json(towers_cfg)
    cal = io.calibration_from_dict(config.get("calibration"))
    seed = int(config.get("seed", 0)) if seed is None else seed
    if "detection_times" in config:
        times = np.asarray(config["detection_times"], dtype=float)
    else:
        spec = config.get("times", {})
        _check_keys(spec, {"n", "dt", "t0", "jitter"}, "scenario.times")
        # Jitter draws use a stream separate from the trajectory's.
        rng = np.random.default_rng([seed, 1])
        times = uniform_times(int(spec.get("n", 500)), float(spec.get("dt", 2.0)),
                              float(spec.get("t0", 0.0)), float(spec.get("jitter", 0.0)), rng)
    return SimScenario(mp, init_state, times, towers, cal, seed, bool(config.get("measurement_noise", True)))


def cmd_simulate(args):
    config = _load_config(args.config, SCENARIO_KEYS, "scenario")
    base = Path(args.config).parent if args.config else Path(".")
    scenario = build_scenario(config, args.seed, base)
    truth = simulate(scenario)
    out = _out_dir(args.out_dir)
    io.write_truth(out / "truth.csv", truth.times, truth.states)
    io.write_detections(out / "detections.csv", truth.detections)
    io.dump_towers(out / "towers.json", scenario.towers)
    outputs = {"truth": "truth.csv", "detections": "detections.csv", "towers": "towers.json"}
    if args.figures:
        from . import plotting
        plotting.plot_track(out / "truth.png", scenario.towers, truth=truth.states, title="simulated track")
        plotting.plot_display_histogram(out / "display_hist.png", truth.detections, scenario.cal)
        outputs.update(truth_figure="truth.png", histogram_figure="display_hist.png")
    report = {
        "command": "simulate",
        "config": {
            "params": {"beta": scenario.params.beta, "sigma": scenario.params.sigma},
            "init_state": scenario.init_state,
            "detection_times": scenario.detection_times,
            "towers": [io.antenna_to_dict(a) for a in scenario.towers],
            "calibration": io.calibration_to_dict(scenario.cal),
            "seed": scenario.seed,
            "measurement_noise": scenario.measurement_noise,
        },
        "outputs": outputs,
        "n_detections": len(truth.detections),
        "saturated_fraction": truth.saturated_fraction,
    }
    _write_report(out, report)
    print(f"simulate: {len(truth.detections)} detections, saturated fraction "
          f"{truth.saturated_fraction:.4f} -> {out}")
    return report


# track ---------------------------------------------------------------------

def _load_inputs(args):
    detections = io.read_detections(args.detections)
    towers = io.load_towers(args.towers)
    cal = io.load_calibration(args.calibration)
    return detections, towers, cal


def _track_beta(args, config):
    if args.beta is not None:
        return _vector(args.beta, 3, "--beta")
    if args.params is not None:
        data = io.load_json(args.params)
        _check_keys(data, {"beta", "sigma", "phi", "method", "kind", "nll"}, str(args.params))
        return _vector(data["beta"], 3, f"{args.params}: beta")
    return _vector(config.get("beta", DEFAULT_INITIAL_BETA), 3, "beta")


def cmd_track(args):
    config = _load_config(args.config, TRACK_KEYS, "track config")
    detections, towers, cal = _load_inputs(args)
    kind = args.kind or config.get("kind", "ukf")
    beta = _track_beta(args, config)
    sigma = _vector(config.get("sigma", DEFAULT_SIGMA), 3, "sigma")
    params = MovementParams.from_arrays(beta, sigma)
    skip = bool(config.get("skip_saturated", False))
    if not detections:
        raise DataError(f"{args.detections}: no detections to track")
    init = _initial_belief(config.get("init"), detections, towers)
    run = run_filter_arrays(detections, init, params, towers, cal, kind, skip)
    out = _out_dir(args.out_dir)
    io.write_track(out / "track.csv", run)
    io.write_diagnostics(out / "diag.csv", run)
    outputs = {"track": "track.csv", "diagnostics": "diag.csv"}
    report = {
        "command": "track",
        "config": {
            "detections": str(args.detections), "towers": [io.antenna_to_dict(a) for a in towers],
            "calibration": io.calibration_to_dict(cal), "kind": kind, "beta": beta, "sigma": sigma,
            "init": _belief_dict(init), "skip_saturated": skip,
        },
        "outputs": outputs,
        "repaired_steps": int(run.repaired.sum()),
        "saturated_records": int(run.saturated.sum()),
    }
    truth_states = None
    if args.truth is not None:
        times, truth_states = io.read_truth(args.truth)
        if times.shape != run.t.shape or np.any(times != run.t):
            raise DataError(f"{args.truth}: times do not match the detections")
        report["config"]["truth"] = str(args.truth)
        report["epsilon"] = evaluate_track(truth_states, run.means)
    if args.figures:
        from . import plotting
        plotting.plot_track(out / "track.png", towers, estimate=run.means, truth=truth_states,
                            title=f"{kind.upper()} track")
        plotting.plot_diagnostics(out / "diag.png", run)
        outputs.update(track_figure="track.png", diagnostics_figure="diag.png")
    _write_report(out, report)
    msg = f"track: {kind} over {len(detections)} detections -> {out}"
    if "epsilon" in report:
        msg += f"; epsilon {report['epsilon']:.6g}"
    print(msg)
    return report


# estimate ------------------------------------------------------------------

def estimation_config(config, method, seed):
    """Build an :class:`EstimationConfig` from an optimizer JSON object."""
    _check_keys(config, ESTIMATE_KEYS, "optimizer config")
    if "init_phi" in config and "init_beta" in config:
        raise DataError("optimizer config: give init_phi or init_beta, not both")
    if "init_phi" in config:
        phi0 = _vector(config["init_phi"], 3, "init_phi")
    elif "init_beta" in config:
        b = _vector(config["init_beta"], 3, "init_beta")
        if np.any(b <= 0):
            raise DataError(f"init_beta must be positive, got {config['init_beta']!r}")
        phi0 = np.log(b)
    else:
        phi0 = np.log(DEFAULT_INITIAL_BETA)
    defaults = PsoConfig()
    box = config.get("init_box", defaults.init_box)
    pso = PsoConfig(
        swarm_size=int(config.get("swarm_size", defaults.swarm_size)),
        max_iters=int(config["max_iters"]) if method == "pso" and "max_iters" in config else defaults.max_iters,
        inertia=float(config.get("inertia", defaults.inertia)),
        cognitive=float(config.get("cognitive", defaults.cognitive)),
        social=float(config.get("social", defaults.social)),
        init_box=tuple(tuple(float(v) for v in pair) for pair in box),
        seed=int(seed if seed is not None else config.get("seed", defaults.seed)),
    )
    base = EstimationConfig()
    return EstimationConfig(
        sigma=tuple(_vector(config.get("sigma", DEFAULT_SIGMA), 3, "sigma")),
        phi0=tuple(phi0),
        tol=float(config.get("tol", base.tol)),
        max_iters=int(config["max_iters"]) if method == "newton" and "max_iters" in config else base.max_iters,
        newton_starts=int(config.get("newton_starts", base.newton_starts)),
        pso=pso,
        skip_saturated=bool(config.get("skip_saturated", False)),
    )


def cmd_estimate(args):
    config = _load_config(args.config, ESTIMATE_KEYS, "optimizer config")
    detections, towers, cal = _load_inputs(args)
    if not detections:
        raise DataError(f"{args.detections}: no detections to estimate from")
    method = args.method or config.get("method", "newton")
    kind = args.kind or config.get("kind", "ukf")
    if method not in ("newton", "pso"):
        raise DataError(f"method must be 'newton' or 'pso', got {method!r}")
    if kind not in ("ukf", "ekf"):
        raise DataError(f"kind must be 'ukf' or 'ekf', got {kind!r}")
    est = estimation_config(config, method, args.seed)
    init = _initial_belief(config.get("init"), detections, towers)
    params, trace = estimate_parameters(detections, init, towers, cal, method, kind, est)
    out = _out_dir(args.out_dir)
    io.write_trace(out / "trace.csv", trace)
    phi = np.log(params.beta)
    result = {"beta": params.beta, "sigma": params.sigma, "phi": phi, "method": method, "kind": kind,
              "nll": trace.final[1]}
    io.dump_json(out / "params.json", result)
    outputs = {"trace": "trace.csv", "params": "params.json"}
    if args.figures:
        from . import plotting
        plotting.plot_convergence(out / "trace.png", trace, title=f"{method} ({kind})")
        outputs["trace_figure"] = "trace.png"
    report = {
        "command": "estimate",
        "config": {
            "detections": str(args.detections), "towers": [io.antenna_to_dict(a) for a in towers],
            "calibration": io.calibration_to_dict(cal), "method": method, "kind": kind,
            "sigma": est.sigma, "init_phi": est.phi0, "tol": est.tol,
            "newton_max_iters": est.max_iters, "newton_starts": est.newton_starts,
            "swarm_size": est.pso.swarm_size, "pso_max_iters": est.pso.max_iters,
            "inertia": est.pso.inertia, "cognitive": est.pso.cognitive, "social": est.pso.social,
            "init_box": est.pso.init_box, "seed": est.pso.seed, "init": _belief_dict(init),
            "skip_saturated": est.skip_saturated,
        },
        "outputs": outputs,
        "estimate": result,
    }
    _write_report(out, report)
    print("estimate: beta = [" + ", ".join(format(b, ".6g") for b in params.beta) +
          f"], nll {trace.final[1]:.6f} -> {out}")
    return report


# evaluate ------------------------------------------------------------------

def cmd_evaluate(args):
    times, truth = io.read_truth(args.truth)
    ttimes, means = io.read_track(args.track)
    if times.shape != ttimes.shape or np.any(times != ttimes):
        raise DataError(f"{args.track}: times do not match {args.truth}")
    eps = evaluate_track(truth, means)
    report = {"command": "evaluate", "config": {"truth": str(args.truth), "track": str(args.track)},
              "epsilon": eps}
    if args.out_dir is not None:
        out = _out_dir(args.out_dir)
        report["outputs"] = {}
        _write_report(out, report)
    print(f"epsilon {io.fmt(eps)}")
    return report


# entry point ---------------------------------------------------------------

def build_parser():
    parser = argparse.ArgumentParser(prog="radiotrack",
                                     description="Track a radio-tagged target from display-number detections.")
    parser.add_argument("-v", "--verbose", action="count", default=0, help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def inputs(p):
        p.add_argument("--detections", required=True, type=Path, help="detections CSV (t,antenna_id,Z)")
        p.add_argument("--towers", required=True, type=Path, help="antenna JSON array")
        p.add_argument("--calibration", type=Path, help="display calibration JSON (b, P0, Zm, ZM)")

    def common(p, out_required=True):
        p.add_argument("--out-dir", required=out_required, type=Path, help="directory for outputs")
        p.add_argument("--figures", action="store_true", help="also render PNG figures")

    errors = "errors: malformed or inconsistent input files, unknown antenna ids, non-finite filter output"

    p = sub.add_parser("simulate", help="sample a synthetic track and its detections", epilog=errors)
    p.add_argument("--config", required=True, type=Path, help="scenario JSON")
    p.add_argument("--seed", type=int, help="override the scenario seed")
    common(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("track", help="filter detections with fixed rates", epilog=errors)
    inputs(p)
    p.add_argument("--config", type=Path, help="track JSON: kind, beta, sigma, init, skip_saturated")
    p.add_argument("--kind", choices=("ukf", "ekf"))
    p.add_argument("--beta", type=float, nargs=3, metavar=("BX", "BY", "BZ"))
    p.add_argument("--params", type=Path, help="params.json written by estimate")
    p.add_argument("--truth", type=Path, help="truth CSV; adds epsilon to the report")
    common(p)
    p.set_defaults(func=cmd_track)

    p = sub.add_parser("estimate", help="maximum-likelihood rate estimation",
                       epilog=errors + ", optimizer failure")
    inputs(p)
    p.add_argument("--config", type=Path, help="optimizer JSON")
    p.add_argument("--method", choices=("newton", "pso"))
    p.add_argument("--kind", choices=("ukf", "ekf"))
    p.add_argument("--seed", type=int, help="PSO seed")
    common(p)
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("evaluate", help="sum of squared horizontal errors of a track",
                       epilog="errors: unreadable files, mismatched times")
    p.add_argument("--truth", required=True, type=Path)
    p.add_argument("--track", required=True, type=Path)
    p.add_argument("--out-dir", type=Path)
    p.set_defaults(func=cmd_evaluate)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except (DataError, DegenerateGeometryError, NumericalError, OptimizationError, ValueError,
            OSError, KeyError, TypeError) as exc:
        text = " ".join(str(exc).split()) or repr(exc)
        print(f"radiotrack: error: {type(exc).__name__}: {text}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
