"""Batch front end: ``hqp <mode> [options]``.

Every mode writes a CSV (stdout by default) and, when an output file or
``--manifest`` is given, a JSON run manifest next to it.  Exit codes: 0 on
success, 1 when an identity check fails, 2 on invalid input, 3 when a
resource guard trips.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import platform
import sys
import time
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .collision import collision_prob_dft, collision_prob_dp, collision_prob_mc
from .core import GuardExceeded, as_proportions
from .counting import estimate_prob_E
from .flows import (FlowGraph, gaussian_flow_integral_basis, gaussian_flow_integral_closed,
                    random_spanning_forest)
from .instance import InstanceParams, query_count_for_gamma, trial_rng
from .rates import RateProblem, solve_rate
from .thresholds import free_energy, free_energy_branches, thresholds

MODES = ("thresholds", "free-energy", "collision", "simulate", "identity", "rates")
IDENTITY_RTOL = 1e-9


class ValidationError(ValueError):
    pass


def fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return format(float(x), ".12g")
    return str(x)


def parse_grid(text: str) -> list[float]:
    """``a:b:step`` (both ends included when the step divides) or a comma list."""
    text = str(text).strip()
    if ":" not in text:
        return [float(v) for v in text.split(",") if v.strip()]
    parts = text.split(":")
    if len(parts) != 3:
        raise ValidationError(f"grid {text!r} is not of the form a:b:step")
    a, b, step = (float(p) for p in parts)
    if step <= 0 or b < a:
        raise ValidationError(f"grid {text!r} needs step > 0 and b >= a")
    count = int(math.floor((b - a) / step + 1e-9)) + 1
    return [float(f"{a + i * step:.12g}") for i in range(count)]


def parse_vector(text) -> np.ndarray:
    if isinstance(text, (list, tuple)):
        return np.array(text, dtype=float)
    return np.array([float(v) for v in str(text).split(",") if v.strip()])


def parse_matrix(text) -> np.ndarray:
    """Rows separated by ``;``, entries by ``,`` (or a nested JSON list)."""
    if isinstance(text, (list, tuple)):
        m = np.array(text, dtype=float)
    else:
        rows = [r for r in str(text).split(";") if r.strip()]
        m = np.array([[float(v) for v in r.split(",")] for r in rows])
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValidationError("matrix must be square")
    return m


def workers_from(args) -> int:
    env = os.environ.get("HQP_THREADS")
    if env:
        return max(1, int(env))
    return max(1, int(getattr(args, "workers", 1) or 1))


# ---------------------------------------------------------------- modes

def run_thresholds(args, out, log):
    pi = as_proportions(parse_vector(args.pi))
    rep = thresholds(pi)
    out.writerow(["pi", "gamma_low", "gamma_up", "k_star"])
    out.writerow([",".join(fmt(v) for v in pi), fmt(rep.gamma_low), fmt(rep.gamma_up), rep.argmax_k])
    return 0


def run_free_energy(args, out, log):
    pi = as_proportions(parse_vector(args.pi))
    grid = parse_grid(args.gamma_grid)
    if any(g < 0 for g in grid):
        raise ValidationError("gamma must be nonnegative")
    out.writerow(["gamma", "free_energy", "k_star"])
    for g in grid:
        br = free_energy_branches(pi, g)
        out.writerow([fmt(g), fmt(free_energy(pi, g)), int(np.argmax(br)) + 1])
    return 0


def run_collision(args, out, log):
    mu = parse_matrix(args.mu)
    if np.any(mu < 0) or np.any(mu != np.round(mu)):
        raise ValidationError("overlap entries must be nonnegative integers")
    mu = mu.astype(np.int64)
    alphas = parse_grid(args.alpha)
    header = ["alpha", "q_dp", "q_dft"]
    if args.mc_trials:
        header += ["q_mc", "mc_stderr"]
    out.writerow(header)
    # concrete assignments realising mu, for the Monte Carlo route
    tau, tau_star = [], []
    for r in range(mu.shape[0]):
        for s in range(mu.shape[0]):
            tau += [r + 1] * int(mu[r, s])
            tau_star += [s + 1] * int(mu[r, s])
    for i, a in enumerate(alphas):
        if not 0 < a < 1:
            raise ValidationError("alpha must lie in (0, 1)")
        row = [fmt(a), fmt(collision_prob_dp(mu, a)), fmt(collision_prob_dft(mu, a))]
        if args.mc_trials:
            if not tau:
                raise ValidationError("Monte Carlo needs a nonempty overlap")
            p, se = collision_prob_mc(tau, tau_star, a, int(args.mc_trials), trial_rng(args.seed, i))
            row += [fmt(p), fmt(se)]
        out.writerow(row)
    return 0


def run_simulate(args, out, log):
    pi = tuple(as_proportions(parse_vector(args.pi)))
    d = int(args.d) if args.d is not None else len(pi)
    if d != len(pi):
        raise ValidationError(f"pi has {len(pi)} entries but d={d}")
    if args.gamma_grid is not None:
        pts = [(g, query_count_for_gamma(int(args.n), g)) for g in parse_grid(args.gamma_grid)]
    elif args.m_grid is not None:
        pts = [(None, int(m)) for m in parse_grid(args.m_grid)]
    else:
        raise ValidationError("simulate needs --gamma-grid or --m-grid")
    trials = int(args.trials)
    if trials < 1:
        raise ValidationError("trials must be >= 1")
    fixed = None
    if args.fixed_tau:
        base = InstanceParams(int(args.n), d, pi, float(args.alpha), 0, int(args.seed))
        from .instance import sample_planted_assignment
        fixed = sample_planted_assignment(base.n, base.pi, trial_rng(base.seed))
    workers = workers_from(args)
    out.writerow(["gamma", "m", "p_hat", "stderr"])
    for g, m in pts:
        # the same seed at every grid point: instances for smaller m are
        # prefixes of those for larger m (common random numbers)
        params = InstanceParams(int(args.n), d, pi, float(args.alpha), m, int(args.seed))
        p, se = estimate_prob_E(params, trials, workers=workers, fixed_tau=fixed)
        out.writerow(["" if g is None else fmt(g), m, fmt(p), fmt(se)])
        log(f"m={m} p_hat={p:.4f}")
    return 0


def identity_trial(d: int, rng: np.random.Generator):
    """One random check of the Gaussian flow identity on the complete graph or a random subgraph."""
    g_full = FlowGraph.complete(d)
    if rng.random() < 0.5:
        g = g_full
    else:
        keep = [e for e in g_full.edges if rng.random() < 0.6]
        loops = [v for v in range(d) if rng.random() < 0.7]
        g = FlowGraph(d, tuple(keep), tuple(loops))
    w = rng.uniform(0.1, 5.0, size=(d, d))
    closed = gaussian_flow_integral_closed(g, w)
    basis = gaussian_flow_integral_basis(g, w)
    other = gaussian_flow_integral_basis(g, w, random_spanning_forest(g, rng))
    err = max(abs(basis - closed), abs(other - closed)) / closed
    return closed, basis, other, err


def run_identity(args, out, log):
    d = int(args.d)
    if not 2 <= d <= 8:
        raise ValidationError("identity mode supports 2 <= d <= 8")
    trials = int(args.trials)
    if trials < 1:
        raise ValidationError("trials must be >= 1")
    out.writerow(["trial", "closed", "basis", "basis_alt_tree", "rel_err", "status"])
    failures = 0
    for t in range(trials):
        closed, basis, other, err = identity_trial(d, trial_rng(args.seed, t))
        ok = err <= IDENTITY_RTOL
        failures += not ok
        status = "PASS" if ok else "FAIL"
        out.writerow([t, fmt(closed), fmt(basis), fmt(other), fmt(err), status])
        print(f"{status} gaussian-flow identity d={d} trial={t} rel_err={err:.3e}", file=sys.stderr)
    return 0 if failures == 0 else 1


def run_rates(args, out, log):
    w = parse_matrix(args.w)
    alpha = float(args.alpha)
    if np.any(w < 0):
        raise ValidationError("w must be nonnegative")
    if args.E is not None:
        E = parse_matrix(args.E) > 0
        nu = parse_matrix(args.nu_fixed) if args.nu_fixed is not None else np.zeros_like(w)
        prob = RateProblem(E, w, nu, alpha)
    else:
        prob = RateProblem.from_support(w, alpha)
    sol = solve_rate(prob)
    out.writerow(["theta", "converged", "boundary", "kkt_residual", "iterations", "lambda"])
    out.writerow([fmt(sol.theta), fmt(sol.converged), fmt(sol.boundary), fmt(sol.kkt_residual),
                  sol.iterations, ",".join(fmt(v) for v in sol.lam)])
    return 0


RUNNERS = {"thresholds": run_thresholds, "free-energy": run_free_energy,
           "collision": run_collision, "simulate": run_simulate,
           "identity": run_identity, "rates": run_rates}


# ---------------------------------------------------------------- plumbing

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="hqp", description="Histogram query problem laboratory")
    sub = ap.add_subparsers(dest="mode", required=True)

    def common(p):
        p.add_argument("--config", help="JSON file of option defaults (keys as option names)")
        p.add_argument("--out", default="-", help="CSV output path ('-' for stdout)")
        p.add_argument("--manifest", help="manifest path (default: <out>.manifest.json)")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--workers", type=int, default=1,
                       help="worker processes (HQP_THREADS overrides)")
        p.add_argument("--quiet", action="store_true")
        return p

    p = common(sub.add_parser("thresholds", help="gamma_low, gamma_up and the maximising k"))
    p.add_argument("--pi")
    p = common(sub.add_parser("free-energy", help="annealed free energy over a gamma grid"))
    p.add_argument("--pi")
    p.add_argument("--gamma-grid", default="0.1:3.0:0.1")
    p = common(sub.add_parser("collision", help="exact collision probability of an overlap"))
    p.add_argument("--mu", help="rows ';'-separated, entries ','-separated")
    p.add_argument("--alpha", default="0.5", help="single value, list or grid")
    p.add_argument("--mc-trials", type=int, default=0)
    p = common(sub.add_parser("simulate", help="Monte Carlo probability of non-uniqueness"))
    p.add_argument("--n", type=int)
    p.add_argument("--d", type=int)
    p.add_argument("--pi")
    p.add_argument("--alpha", type=float, default=0.5)
    p.add_argument("--gamma-grid")
    p.add_argument("--m-grid")
    p.add_argument("--trials", type=int, default=400)
    p.add_argument("--fixed-tau", action="store_true", help="hold the planted assignment fixed")
    p = common(sub.add_parser("identity", help="random checks of the Gaussian flow identity"))
    p.add_argument("--d", type=int, default=3)
    p.add_argument("--trials", type=int, default=100)
    p = common(sub.add_parser("rates", help="decay rate of a weight matrix"))
    p.add_argument("--w")
    p.add_argument("--alpha", type=float, default=0.5)
    p.add_argument("--E", help="0/1 matrix of large cells (default: support of w)")
    p.add_argument("--nu-fixed", help="fixed flows outside E")
    return ap


REQUIRED = {"thresholds": ["pi"], "free-energy": ["pi"], "collision": ["mu"],
            "simulate": ["n", "pi"], "identity": [], "rates": ["w"]}


def _apply_config(ap, args, argv):
    if not args.config:
        return args
    try:
        cfg = json.loads(Path(args.config).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ValidationError(f"cannot read config: {exc}") from exc
    if not isinstance(cfg, dict):
        raise ValidationError("config must be a JSON object")
    given = {a.split("=")[0].lstrip("-").replace("-", "_") for a in argv if a.startswith("--")}
    for key, val in cfg.items():
        k = key.replace("-", "_")
        if k == "mode":
            continue
        if not hasattr(args, k):
            raise ValidationError(f"unknown config key {key!r}")
        if k not in given:
            setattr(args, k, val)
    return args


def manifest_dict(args, mode, started, wall, exit_code, rows, out_path) -> dict:
    params = {k: v for k, v in sorted(vars(args).items())
              if k not in ("mode", "config", "out", "manifest", "quiet")}
    return {
        "tool": "hqp",
        "version": __version__,
        "mode": mode,
        "params": params,
        "seed": int(args.seed),
        "workers": workers_from(args),
        "started_utc": started,
        "wall_time_s": wall,
        "exit_code": exit_code,
        "rows": rows,
        "output": out_path,
        "versions": {"python": platform.python_version(), "numpy": np.__version__,
                     "scipy": scipy.__version__},
    }


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    started = datetime.now(timezone.utc).isoformat(timespec="seconds")
    t0 = time.perf_counter()
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")

    def log(msg):
        if not args.quiet:
            print(msg, file=sys.stderr)

    try:
        args = _apply_config(ap, args, argv)
        missing = [k for k in REQUIRED[args.mode] if getattr(args, k) is None]
        if missing:
            raise ValidationError("missing required option(s): " + ", ".join("--" + m.replace("_", "-")
                                                                          for m in missing))
        code = RUNNERS[args.mode](args, writer, log)
    except GuardExceeded as exc:
        print(f"error: resource guard: {exc}", file=sys.stderr)
        return 3
    except (ValueError, TypeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2

    data = buf.getvalue()
    if args.out == "-":
        sys.stdout.write(data)
        out_path = None
    else:
        Path(args.out).write_text(data)
        out_path = str(args.out)
    manifest = args.manifest or (f"{args.out}.manifest.json" if out_path else None)
    if manifest:
        rows = max(0, data.count("\n") - 1)
        doc = manifest_dict(args, args.mode, started, time.perf_counter() - t0, code, rows, out_path)
        Path(manifest).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return code


if __name__ == "__main__":
    sys.exit(main())
