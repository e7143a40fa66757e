"""Command-line front end: run loops, sweep noise/step benchmarks, compute
budget reports, and run the exact-diagonalization oracle.

Exit codes: 0 for a resolved phase (zero/pi), 2 for FAIL-class outcomes
(including a degeneracy on the oracle path), 1 for usage or I/O errors.
stdout carries one machine-parsable JSON line; human logs go to stderr.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import SCHEMA_VERSION, __version__
from . import bounds as bnd
from . import hamiltonian as hml
from . import oracle as orc
from . import statevec as sv
from . import tracker as trk

log = logging.getLogger("berrytrack")


def _resolve_loop(spec: str, n_steps: int | None = None) -> hml.LoopSpec:
    if spec.startswith("builtin:"):
        name = spec.split(":", 1)[1]
        return hml.builtin_loop(name, n_steps=n_steps or 25)
    return hml.load_loop(spec)


def _build_ansatz(name: str, loop: hml.LoopSpec) -> sv.AnsatzCircuit:
    if name == "direct":
        h0 = loop.point(0.0)
        if isinstance(h0, hml.IntegralBundle):
            raise ValueError("the direct ansatz applies to analytic loops only")
        dim = np.asarray(h0).shape[0]
        diag = np.diag(np.asarray(h0, dtype=float))
        return sv.build_plane_rotation_ansatz(dim, initial_index=int(np.argmin(diag)))
    if loop.active_space is None:
        raise ValueError(f"ansatz '{name}' needs a bundle loop with an active space")
    if name == "uccd":
        return sv.build_uccd_ansatz(loop.active_space)
    if name.startswith("npf:"):
        return sv.build_npf_ansatz(loop.active_space, layers=int(name.split(":", 1)[1]))
    raise ValueError(f"unknown ansatz '{name}' (use direct | uccd | npf:L)")


def _config_from_args(args, n_steps: int) -> trk.TrackerConfig:
    return trk.TrackerConfig(
        n_steps=n_steps,
        m_thr=args.m_thr,
        reg=args.reg,
        backtrack=args.backtrack,
        fidelity=args.fidelity,
        sigma2_grad=args.noise_sigma2_grad,
        sigma2_hess=args.noise_sigma2_hess,
        seed=args.seed,
    )


def _emit(payload: dict, out: str | None) -> None:
    if out:
        Path(out).write_text(json.dumps(payload, indent=1), encoding="utf-8")
    summary = {k: payload[k] for k in ("command", "outcome", "omega") if k in payload}
    summary["schema_version"] = SCHEMA_VERSION
    if out:
        summary["out"] = out
    print(json.dumps(summary))


# ---------------------------------------------------------------------------
# run


def cmd_run(args) -> int:
    loop = _resolve_loop(args.loop, args.steps)
    ansatz = _build_ansatz(args.ansatz, loop)
    cfg = _config_from_args(args, args.steps)
    log.info("running loop %s with ansatz %s at N=%d", args.loop, args.ansatz, args.steps)
    result = trk.run_loop(loop, ansatz, cfg)
    report = {
        "command": "run",
        "version": __version__,
        "schema_version": SCHEMA_VERSION,
        "loop": args.loop,
        "ansatz": args.ansatz,
        **result.to_json_dict(),
    }
    _emit(report, args.out)
    log.info("outcome=%s omega=%s", result.outcome, result.omega)
    return 2 if result.failed else 0


# ---------------------------------------------------------------------------
# benchmark


def _trial_seed(base: int, i_steps: int, i_sigma: int, trial: int) -> int:
    return int(np.random.SeedSequence((base, i_steps, i_sigma, trial)).generate_state(1)[0])


def _benchmark_trial(loop_spec: str, ansatz_name: str, cfg_dict: dict, truth: str):
    loop = _resolve_loop(loop_spec, cfg_dict["n_steps"])
    ansatz = _build_ansatz(ansatz_name, loop)
    result = trk.run_loop(loop, ansatz, trk.TrackerConfig(**cfg_dict))
    return result.outcome == truth, result.failed


def cmd_benchmark(args) -> int:
    steps_list = [int(s) for s in args.steps_list.split(",")]
    sigma_list = [float(s) for s in args.sigma2_list.split(",")]
    loop0 = _resolve_loop(args.loop, max(steps_list))
    truth = orc.berry_phase(loop0, n_dense=args.dense)
    log.info("oracle truth for %s: %s", args.loop, truth)

    jobs = []
    for i_n, n in enumerate(steps_list):
        for i_s, s2 in enumerate(sigma_list):
            for trial in range(args.trials):
                cfg = trk.TrackerConfig(
                    n_steps=n, reg=args.reg, backtrack=args.backtrack,
                    m_thr=args.m_thr, fidelity=args.fidelity,
                    sigma2_grad=s2, sigma2_hess=s2,
                    seed=_trial_seed(args.seed, i_n, i_s, trial),
                ).to_dict()
                jobs.append((i_n, i_s, cfg))

    threads = int(os.environ.get("BERRY_THREADS", "1"))
    outcomes = {}
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(
                _benchmark_trial,
                [args.loop] * len(jobs), [args.ansatz] * len(jobs),
                [j[2] for j in jobs], [truth] * len(jobs)))
    else:
        results = [_benchmark_trial(args.loop, args.ansatz, j[2], truth) for j in jobs]
    for (i_n, i_s, _), (ok, failed) in zip(jobs, results):
        cell = outcomes.setdefault((i_n, i_s), [0, 0])
        cell[0] += 1 if ok else 0
        cell[1] += 1 if failed else 0

    rows = []
    for i_n, n in enumerate(steps_list):
        for i_s, s2 in enumerate(sigma_list):
            ok, nf = outcomes[(i_n, i_s)]
            rows.append((n, s2, ok / args.trials, nf))
    if args.out:
        with open(args.out, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["n_steps", "sigma2", "success_prob", "n_fail"])
            writer.writerows(rows)
    print(json.dumps({
        "command": "benchmark", "schema_version": SCHEMA_VERSION, "truth": truth,
        "cells": [{"n_steps": r[0], "sigma2": r[1], "success_prob": r[2], "n_fail": r[3]}
                  for r in rows],
        "out": args.out,
    }))
    return 0


# ---------------------------------------------------------------------------
# bounds


def cmd_bounds(args) -> int:
    try:
        consts = bnd.ProblemConstants(
            m=args.m, L=args.lipschitz, gdot_max=args.gdot_max, n_p=args.n_params,
            grad_norm=args.grad_norm, H_norm=args.h_norm, Hdot_norm=args.hdot_norm,
            gap=args.gap, M_H=args.mh)
        report = bnd.bounds_report(consts)
    except ValueError as exc:
        log.error("%s", exc)
        return 1
    payload = {
        "command": "bounds",
        "version": __version__,
        "schema_version": SCHEMA_VERSION,
        "constants": {
            "m": args.m, "L": args.lipschitz, "gdot_max": args.gdot_max,
            "n_p": args.n_params, "grad_norm": args.grad_norm, "H_norm": args.h_norm,
            "Hdot_norm": args.hdot_norm, "gap": args.gap, "M_H": args.mh},
        **report.to_dict(),
    }
    if args.out:
        Path(args.out).write_text(json.dumps(payload, indent=1), encoding="utf-8")
    print(json.dumps(payload))
    return 0


# ---------------------------------------------------------------------------
# oracle


def cmd_oracle(args) -> int:
    loop = _resolve_loop(args.loop, args.dense)
    try:
        path = orc.exact_ground_path(loop, n_dense=args.dense)
        phase = orc.discrete_berry_phase(path)
    except orc.DegeneracyOnPathError as exc:
        log.error("%s", exc)
        print(json.dumps({"command": "oracle", "outcome": "fail",
                          "error": str(exc), "schema_version": SCHEMA_VERSION}))
        return 2
    payload = {
        "command": "oracle",
        "schema_version": SCHEMA_VERSION,
        "outcome": phase,
        "closure_overlap": path.closure_overlap,
        "min_gap": float(path.gaps.min()),
        "n_dense": args.dense,
    }
    if args.gap_scan:
        grid = json.loads(Path(args.gap_scan).read_text(encoding="utf-8"))
        out_csv = args.gap_out or "gap_scan.csv"
        if grid.get("kind") == "effective-ci-grid":
            p = grid["params"]
            params = hml.EffectiveCIParams(
                hx=p["hx"], hz=p["hz"], r_cross=np.asarray(p["r_cross"], dtype=float),
                center=np.asarray(p.get("center", p["r_cross"]), dtype=float),
                radius=float(p.get("radius", 1.0)))
            rows = orc.gap_scan_effective_ci(params, grid["xs"], grid["zs"])
        elif grid.get("kind") == "bundle-grid":
            base = Path(args.gap_scan).parent
            paths = [base / q for q in grid["points"]]
            rows = orc.gap_scan_bundles(
                paths, hml.ActiveSpaceSpec.from_dict(grid["active_space"]),
                grid.get("param_names", ["param1", "param2"]))
        else:
            log.error("unknown gap-scan grid kind %r", grid.get("kind"))
            return 1
        minimum = orc.write_gap_csv(rows, out_csv)
        payload["gap_scan_csv"] = str(out_csv)
        payload["gap_minimum"] = {"param1": minimum[0], "param2": minimum[1],
                                  "gap_hartree": minimum[2]}
    if args.out:
        Path(args.out).write_text(json.dumps(payload, indent=1), encoding="utf-8")
    print(json.dumps(payload))
    return 0


# ---------------------------------------------------------------------------
# argument parsing


def _add_common_run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--loop", required=True, help="builtin:<name> or a loop manifest path")
    p.add_argument("--ansatz", default="direct", help="direct | uccd | npf:L")
    p.add_argument("--reg", action="store_true", help="enable Hessian regularization")
    p.add_argument("--backtrack", action="store_true", help="enable Armijo backtracking")
    p.add_argument("--m-thr", type=float, default=1e-4)
    p.add_argument("--fidelity", type=float, default=0.5)
    p.add_argument("--noise-sigma2-grad", type=float, default=0.0)
    p.add_argument("--noise-sigma2-hess", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="berrytrack",
        description="Resolve quantized Berry phases of closed Hamiltonian loops")
    parser.add_argument("--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="track one loop and classify its Berry phase")
    _add_common_run_flags(p_run)
    p_run.add_argument("--steps", type=int, default=25)
    p_run.set_defaults(func=cmd_run)

    p_bench = sub.add_parser("benchmark", help="success-probability sweep over (N, sigma^2)")
    _add_common_run_flags(p_bench)
    p_bench.add_argument("--steps-list", required=True)
    p_bench.add_argument("--sigma2-list", required=True)
    p_bench.add_argument("--trials", type=int, default=100)
    p_bench.add_argument("--dense", type=int, default=400)
    p_bench.set_defaults(func=cmd_benchmark)

    p_bounds = sub.add_parser("bounds", help="closed-form convergence and shot budgets")
    p_bounds.add_argument("--m", type=float, required=True)
    p_bounds.add_argument("--lipschitz", type=float, required=True)
    p_bounds.add_argument("--gdot-max", type=float, required=True)
    p_bounds.add_argument("--n-params", type=int, required=True)
    p_bounds.add_argument("--grad-norm", type=float, default=1.0)
    p_bounds.add_argument("--h-norm", type=float, default=1.0)
    p_bounds.add_argument("--hdot-norm", type=float, default=1.0)
    p_bounds.add_argument("--gap", type=float, default=1.0)
    p_bounds.add_argument("--mh", type=float, default=1.0)
    p_bounds.add_argument("--out", default=None)
    p_bounds.set_defaults(func=cmd_bounds)

    p_oracle = sub.add_parser("oracle", help="exact-diagonalization Berry phase")
    p_oracle.add_argument("--loop", required=True)
    p_oracle.add_argument("--dense", type=int, default=400)
    p_oracle.add_argument("--gap-scan", default=None, help="grid manifest JSON")
    p_oracle.add_argument("--gap-out", default=None, help="gap-surface CSV path")
    p_oracle.add_argument("--out", default=None)
    p_oracle.set_defaults(func=cmd_oracle)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        stream=sys.stderr,
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (hml.BundleFormatError, hml.LoopGridError, ValueError, OSError) as exc:
        log.error("%s", exc)
        return 1
    except trk.OptimizationError as exc:
        log.error("initial optimization failed: %s", exc)
        return 2


if __name__ == "__main__":
    sys.exit(main())
