"""Experiment runner: JSON-configured subcommands with stable CSV outputs.

Subcommands mirror the study families: `simulate` sweeps policies against
arrival rate, receive power, and task size; `value` evaluates the analytic
cost of one state and prints diagnostics; `learn` drives the online
estimators and the receive-power SGD; `bound-check` verifies the improvement
ordering and the analytic value against paired Monte Carlo.

Every CSV starts with `#` metadata lines (tool version, schema tag, config
hash, seed) followed by a header row. Reruns of the same config and seed
produce byte-identical files.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import math
import os
import sys
from dataclasses import replace
from typing import Optional

import jsonschema
import numpy as np

from . import __version__
from .learning import (EstimatorState, FrameObservation, SgdState, sgd_step,
                       update_estimators)
from .markov import SolverError
from .model import CompactState, EdgeEntry, ModelParams, paper_defaults
from .policies import PolicyKind
from .sim import SimConfig, aggregate_metrics, discounted_cost, run_episodes
from .stochastic import ArrivalConfig, RngStream, sample_arrival
from .valuefn import ValueParams, chain_diagnostics, components
from .valuefn import value as state_value

__all__ = ["main", "EXIT_OK", "EXIT_CONFIG", "EXIT_SOLVER", "EXIT_ASSERT"]

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_SOLVER = 3
EXIT_ASSERT = 4

# Stream id for bound-check initial-state generation; far outside the
# 2*episode(+1) band the engine uses.
_STATE_STREAM = 3_000_000_019

_POLICY_NAMES = ["baseline", "all_local", "all_edge", "improved"]

_NUM = {"type": "number"}
_POSINT = {"type": "integer", "minimum": 1}
_PAIR = {"type": "array", "items": _NUM, "minItems": 2, "maxItems": 2}

_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "params": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "frame_duration_s": _NUM,
                "bandwidth_hz": _NUM,
                "segment_bits": _POSINT,
                "noise_power_w": _NUM,
                "latency_weight": _NUM,
                "discount": _NUM,
                "switched_capacitance": _NUM,
                "seg_min": _POSINT,
                "seg_max": _POSINT,
                "arrival_prob": _NUM,
                "admission_threshold": _POSINT,
                "receive_power_w": _NUM,
                "cell_radius_m": _NUM,
                "pathloss_exponent": _NUM,
                "min_distance_m": _NUM,
                "cpu_freq_range_hz": _PAIR,
                "cycles_per_bit_range": _PAIR,
                "power_grid": {"type": "array", "items": _NUM, "minItems": 2},
            },
        },
        "simulate": {
            "type": "object",
            "additionalProperties": False,
            "required": ["episodes"],
            "properties": {
                "policies": {
                    "type": "array",
                    "items": {"enum": _POLICY_NAMES},
                    "minItems": 1,
                },
                "arrival_probs": {"type": "array", "items": _NUM,
                                  "minItems": 1},
                "receive_powers": {"type": "array", "items": _NUM,
                                   "minItems": 1},
                "task_scales": {"type": "array", "items": _NUM,
                                "minItems": 1},
                "episodes": _POSINT,
                "horizon": {"type": ["integer", "null"], "minimum": 1},
                "power_bin_w": _NUM,
            },
        },
        "value": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "state": {
                    "type": "array",
                    "items": {
                        "type": "object",
                        "additionalProperties": False,
                        "required": ["device_id", "pathloss",
                                     "queue_segments"],
                        "properties": {
                            "device_id": {"type": "integer", "minimum": 0},
                            "pathloss": _NUM,
                            "queue_segments": _POSINT,
                        },
                    },
                },
                "dump_chain": {"type": "boolean"},
            },
        },
        "learn": {
            "type": "object",
            "additionalProperties": False,
            "required": ["mode"],
            "properties": {
                "mode": {"enum": ["estimator", "sgd", "joint"]},
                "frames": _POSINT,
                "iterations": _POSINT,
                "initial_p_r": _NUM,
                "eta0_scale": _NUM,
                "log_every": _POSINT,
            },
        },
        "bound_check": {
            "type": "object",
            "additionalProperties": False,
            "required": ["episodes"],
            "properties": {
                "states": _POSINT,
                "episodes": _POSINT,
                "horizon": {"type": ["integer", "null"], "minimum": 1},
                "analytic_rel_tol": _NUM,
            },
        },
    },
}


class ConfigError(Exception):
    """Unreadable, invalid, or incomplete configuration."""


class AssertionFailure(Exception):
    """A checked experiment-level assertion did not hold."""


def _load_config(path: Optional[str], overrides: list[str]) -> dict:
    config: dict = {}
    if path is not None:
        try:
            with open(path, "r", encoding="utf-8") as fh:
                config = json.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from exc
    if not isinstance(config, dict):
        raise ConfigError("config root must be a JSON object")
    for assignment in overrides:
        key, sep, raw = assignment.partition("=")
        if not sep or not key:
            raise ConfigError(f"--set expects KEY=VALUE, got {assignment!r}")
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        node = config
        parts = key.split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigError(f"--set path {key!r} crosses a non-object")
        node[parts[-1]] = value
    try:
        jsonschema.validate(config, _SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"config schema violation at {where}: "
                          f"{exc.message}") from exc
    return config


def _config_sha256(config: dict) -> str:
    canonical = json.dumps(config, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def _params_from_config(config: dict) -> ModelParams:
    kwargs = dict(config.get("params", {}))
    for name in ("cpu_freq_range_hz", "cycles_per_bit_range", "power_grid"):
        if name in kwargs:
            kwargs[name] = tuple(kwargs[name])
    try:
        return paper_defaults(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid model parameters: {exc}") from exc


def _require_section(config: dict, name: str) -> dict:
    if name not in config:
        raise ConfigError(f"missing required section {name!r}")
    return config[name]


def _fmt(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return str(bool(value)).lower()
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def _write_csv(path: str, schema_tag: str, header: list[str],
               rows: list[list], config_hash: str, seed: int) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(f"# mecsched_version: {__version__}\n")
        fh.write(f"# schema: {schema_tag}\n")
        fh.write(f"# config_sha256: {config_hash}\n")
        fh.write(f"# seed: {seed}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


def _emit(obj: dict) -> None:
    json.dump(obj, sys.stdout, sort_keys=True)
    sys.stdout.write("\n")


def _scaled_params(params: ModelParams, scale: float) -> ModelParams:
    if scale == 1.0:
        return params
    lo = max(1, int(round(params.seg_min * scale)))
    hi = max(lo, int(round(params.seg_max * scale)))
    return replace(params, seg_min=lo, seg_max=hi)


def cmd_simulate(args) -> int:
    config = _load_config(args.config, args.set or [])
    section = _require_section(config, "simulate")
    base_params = _params_from_config(config)

    policies = section.get("policies", list(_POLICY_NAMES))
    arrival_probs = section.get("arrival_probs", [base_params.arrival_prob])
    receive_powers = section.get("receive_powers",
                                 [base_params.receive_power_w])
    task_scales = section.get("task_scales", [1.0])
    episodes = section["episodes"]
    horizon = section.get("horizon")
    power_bin_w = section.get("power_bin_w", 0.005)

    config_hash = _config_sha256(config)
    metrics_rows: list[list] = []
    pmf_rows: list[list] = []

    for scale in task_scales:
        for p_r in receive_powers:
            for arrival_prob in arrival_probs:
                params = replace(_scaled_params(base_params, scale),
                                 arrival_prob=arrival_prob,
                                 receive_power_w=p_r)
                nominal = (scale == task_scales[0]
                           and p_r == receive_powers[0])
                for name in policies:
                    sim_cfg = SimConfig(params=params,
                                        policy=PolicyKind(name),
                                        episodes=episodes,
                                        horizon=horizon,
                                        base_seed=args.seed,
                                        power_bin_w=power_bin_w,
                                        workers=args.workers)
                    trajectories = run_episodes(sim_cfg)
                    metrics = aggregate_metrics(trajectories, params,
                                                power_bin_w)
                    metrics_rows.append([
                        name, arrival_prob, p_r, args.seed, episodes,
                        metrics.discounted_cost_mean,
                        metrics.discounted_cost_ci,
                        metrics.per_device_cost, metrics.edge_ratio, scale,
                    ])
                    if nominal:
                        for bin_, mass in sorted(metrics.latency_pmf.items()):
                            pmf_rows.append([name, arrival_prob, "latency",
                                             bin_, mass])
                        for bin_, mass in sorted(metrics.power_pmf.items()):
                            pmf_rows.append([name, arrival_prob, "power",
                                             bin_, mass])

    os.makedirs(args.out, exist_ok=True)
    metrics_path = os.path.join(args.out, "metrics.csv")
    pmfs_path = os.path.join(args.out, "pmfs.csv")
    _write_csv(metrics_path, "metrics-v1",
               ["policy", "arrival_prob", "p_r", "seed_base", "episodes",
                "discounted_cost_mean", "discounted_cost_ci",
                "per_device_cost", "edge_ratio", "task_scale"],
               metrics_rows, config_hash, args.seed)
    _write_csv(pmfs_path, "pmfs-v1",
               ["policy", "arrival_prob", "kind", "bin", "mass"],
               pmf_rows, config_hash, args.seed)
    _emit({"command": "simulate", "metrics_rows": len(metrics_rows),
           "pmf_rows": len(pmf_rows),
           "files": [metrics_path, pmfs_path]})
    return EXIT_OK


def cmd_value(args) -> int:
    config = _load_config(args.config, args.set or [])
    section = config.get("value", {})
    params = _params_from_config(config)
    try:
        entries = tuple(EdgeEntry(item["device_id"], item["pathloss"],
                                  item["queue_segments"])
                        for item in section.get("state", []))
        state = CompactState(entries)
    except ValueError as exc:
        raise ConfigError(f"invalid state spec: {exc}") from exc

    vp = ValueParams.from_distributions(params)
    part1, part2, part3 = components(state, vp)
    diagnostics = chain_diagnostics(vp)
    if section.get("dump_chain", False):
        from .markov import build_c, build_phi, dump_chain
        os.makedirs(args.out, exist_ok=True)
        phi = build_phi(params, params.receive_power_w, params.arrival_prob)
        c = build_c(params, params.receive_power_w, vp.varpi, vp.cbar)
        chain_path = os.path.join(args.out, "chain.csv")
        dump_chain(chain_path, phi, c, np.eye(phi.shape[0])[0])
    _emit({"command": "value", "w1": part1, "w2": part2, "w3": part3,
           "total": part1 + part2 + part3, "devices": len(state),
           "diagnostics": diagnostics})
    return EXIT_OK


def cmd_learn(args) -> int:
    config = _load_config(args.config, args.set or [])
    section = _require_section(config, "learn")
    params = _params_from_config(config)
    mode = section["mode"]
    frames = section.get("frames", 10_000)
    iterations = section.get("iterations", 1_000)
    log_every = section.get("log_every", 1)
    config_hash = _config_sha256(config)

    est = EstimatorState() if mode in ("estimator", "joint") else None
    sgd = None
    if mode in ("sgd", "joint"):
        sgd = SgdState(p_r_current=section.get("initial_p_r",
                                               params.receive_power_w),
                       eta0_scale=section.get("eta0_scale", 0.5))
    true_vp = ValueParams.from_distributions(params)

    rng = RngStream(args.seed, 0)
    arrival_cfg = ArrivalConfig.from_params(params)
    learning_rows: list[list] = []
    sgd_rows: list[list] = []
    next_id = 0
    t = 0
    while True:
        want_frames = est is not None and t < frames
        want_iters = sgd is not None and sgd.iteration < iterations
        if not (want_frames or want_iters):
            break
        t += 1
        if t > 100_000_000:
            raise AssertionFailure("learn loop exceeded the frame cap")
        task = sample_arrival(rng, arrival_cfg, t, next_id)
        if task is not None:
            next_id += 1
            obs = FrameObservation.from_arrival(task)
        else:
            obs = FrameObservation.none()
        if est is not None:
            est = update_estimators(est, obs, params)
            if t <= frames and t % log_every == 0:
                learning_rows.append([t, est.arrival_count, est.p_hat,
                                      est.varpi_hat, est.cbar_hat])
        if sgd is not None and task is not None \
                and sgd.iteration < iterations:
            sgd = sgd_step(sgd, est, true_vp)
            sgd_rows.append([sgd.iteration, sgd.p_r_current,
                             sgd.last_gradient])

    os.makedirs(args.out, exist_ok=True)
    files = []
    if est is not None:
        path = os.path.join(args.out, "learning.csv")
        _write_csv(path, "learning-v1",
                   ["t", "n", "P_hat", "varpi_hat", "cbar_hat"],
                   learning_rows, config_hash, args.seed)
        files.append(path)
    if sgd is not None:
        path = os.path.join(args.out, "sgd.csv")
        _write_csv(path, "sgd-v1", ["n", "p_r", "gradient"],
                   sgd_rows, config_hash, args.seed)
        files.append(path)
    result = {"command": "learn", "mode": mode, "frames": t, "files": files}
    if est is not None:
        result["estimates"] = {"p_hat": est.p_hat,
                               "varpi_hat": est.varpi_hat,
                               "cbar_hat": est.cbar_hat,
                               "arrivals": est.arrival_count}
    if sgd is not None:
        result["sgd"] = {"iterations": sgd.iteration,
                         "p_r": sgd.p_r_current,
                         "last_gradient": sgd.last_gradient}
    _emit(result)
    return EXIT_OK


def _random_states(params: ModelParams, count: int,
                   seed: int) -> list[tuple[EdgeEntry, ...]]:
    """Initial edge sets with uniform size 0..K and arrival-law attributes."""
    rng = RngStream(seed, _STATE_STREAM)
    states = []
    for _ in range(count):
        size = rng.integer(0, params.admission_threshold)
        entries = []
        for device_id in range(size):
            radius = params.cell_radius_m * math.sqrt(rng.random())
            gain = max(radius, params.min_distance_m) \
                ** (-params.pathloss_exponent)
            queue = rng.integer(params.seg_min, params.seg_max)
            entries.append(EdgeEntry(device_id, gain, queue))
        states.append(tuple(entries))
    return states


def cmd_bound_check(args) -> int:
    config = _load_config(args.config, args.set or [])
    section = _require_section(config, "bound_check")
    params = _params_from_config(config)
    n_states = section.get("states", 20)
    episodes = section["episodes"]
    horizon = section.get("horizon")
    rel_tol = section.get("analytic_rel_tol", 0.05)
    config_hash = _config_sha256(config)

    vp = ValueParams.from_distributions(params)
    z99 = 2.3263478740408408  # one-sided 99% normal quantile
    z995 = 2.5758293035489004  # two-sided 99% normal quantile

    rows: list[list] = []
    ordering_ok = True
    nonneg_ok = True
    analytic_ok = True
    for state_id, entries in enumerate(_random_states(params, n_states,
                                                      args.seed)):
        base_cfg = SimConfig(params=params, policy=PolicyKind("baseline"),
                             episodes=episodes, horizon=horizon,
                             base_seed=args.seed, initial_entries=entries,
                             workers=args.workers)
        improved_cfg = replace(base_cfg, policy=PolicyKind("improved"))
        base_costs = np.array([discounted_cost(tr, params.discount)
                               for tr in run_episodes(base_cfg)])
        improved_costs = np.array([discounted_cost(tr, params.discount)
                                   for tr in run_episodes(improved_cfg, vp)])
        diff = improved_costs - base_costs
        diff_se = float(diff.std(ddof=1) / math.sqrt(episodes))
        base_se = float(base_costs.std(ddof=1) / math.sqrt(episodes))
        analytic = state_value(CompactState(entries), vp)

        w_base = float(base_costs.mean())
        w_improved = float(improved_costs.mean())
        rows.append([state_id, len(entries), w_base, w_improved, analytic,
                     z99 * diff_se, base_se])
        if w_improved - w_base > z99 * diff_se:
            ordering_ok = False
        if w_improved < 0:
            nonneg_ok = False
        if abs(analytic - w_base) > rel_tol * abs(analytic) \
                + z995 * base_se:
            analytic_ok = False

    os.makedirs(args.out, exist_ok=True)
    path = os.path.join(args.out, "bound_check.csv")
    _write_csv(path, "bound-check-v1",
               ["state_id", "n_devices", "w_hat_baseline", "w_hat_improved",
                "analytic_w_baseline", "paired_ci99", "mc_se_baseline"],
               rows, config_hash, args.seed)
    assertions = {"improved_le_baseline": ordering_ok,
                  "improved_nonnegative": nonneg_ok,
                  "analytic_matches_mc": analytic_ok}
    _emit({"command": "bound-check", "states": n_states,
           "episodes": episodes, "assertions": assertions, "file": path})
    if not all(assertions.values()):
        failed = [k for k, v in assertions.items() if not v]
        raise AssertionFailure("bound check failed: " + ", ".join(failed))
    return EXIT_OK


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", default=None,
                        help="JSON experiment config")
    parser.add_argument("--seed", type=int, default=0,
                        help="base seed; all streams derive from it")
    parser.add_argument("--workers", type=int, default=1,
                        help="worker processes for episode batches")
    parser.add_argument("--out", default=".", help="output directory")
    parser.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="dotted-path config override (JSON value)")


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="mecsched",
        description="Frame-based offloading simulator and experiment runner")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn in (("simulate", cmd_simulate), ("value", cmd_value),
                     ("learn", cmd_learn), ("bound-check", cmd_bound_check)):
        cmd = sub.add_parser(name)
        _add_common(cmd)
        cmd.set_defaults(func=fn)
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        json.dump({"error": "config", "detail": str(exc)}, sys.stderr,
                  sort_keys=True)
        sys.stderr.write("\n")
        return EXIT_CONFIG
    except SolverError as exc:
        json.dump({"error": "solver", "detail": str(exc)}, sys.stderr,
                  sort_keys=True)
        sys.stderr.write("\n")
        return EXIT_SOLVER
    except AssertionFailure as exc:
        json.dump({"error": "assertion", "detail": str(exc)}, sys.stderr,
                  sort_keys=True)
        sys.stderr.write("\n")
        return EXIT_ASSERT


if __name__ == "__main__":
    sys.exit(main())
