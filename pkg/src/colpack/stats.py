"""Uncertainty and transition-point estimators for pressure sweeps.

Block bootstrap for autocorrelated tails, a four-parameter sigmoid fit,
first-sign-change level crossing, estimator-level bootstrap intervals and
leave-one-out sensitivity.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.optimize import minimize

from .errors import ColpackError

PHI_MID = 0.708
PHI_L = 0.700
PHI_H = 0.716
P_STAR_LITERATURE = 9.185


@dataclass
class BootstrapConfig:
    block_length: int = 50
    n_boot: int = 2000
    seed: int = 0

    def __post_init__(self):
        if int(self.block_length) < 1 or int(self.n_boot) < 1:
            raise ColpackError("invalid_bootstrap_config", "block_length and n_boot must be >= 1")
        self.block_length = int(self.block_length)
        self.n_boot = int(self.n_boot)


# -- block bootstrap ----------------------------------------------------------------

def block_bootstrap_means(tail, block_length, n_boot, rng, chunk_values=2_000_000):
    """Replicate means from non-overlapping block resampling.

    Blocks are contiguous slices of length ``block_length`` (the last one may
    be shorter and is kept). Blocks are drawn with replacement until the
    replicate reaches the original length, then truncated. Replicates are
    gathered value by value, so identical resamples give identical means.
    """
    x = np.asarray(tail, float)
    n = len(x)
    L = int(block_length)
    starts = np.arange(0, n, L)
    lengths = np.minimum(L, n - starts)
    nb = len(starts)
    draws = rng.integers(0, nb, size=(n_boot, int(math.ceil(n / L)) + 1))
    while True:
        cum = np.cumsum(lengths[draws], axis=1)
        if np.all(cum[:, -1] >= n):
            break
        draws = np.concatenate([draws, rng.integers(0, nb, size=(n_boot, nb))], axis=1)
    offs = np.arange(L)
    means = np.empty(n_boot)
    step = max(1, chunk_values // (draws.shape[1] * L))
    for lo in range(0, n_boot, step):
        d = draws[lo:lo + step]
        slot = (starts[d][:, :, None] + offs).reshape(len(d), -1)
        valid = (offs < lengths[d][:, :, None]).reshape(len(d), -1)
        keep = valid & (np.cumsum(valid, axis=1) <= n)
        means[lo:lo + step] = x[slot[keep].reshape(len(d), n)].mean(axis=1)
    return means


def block_bootstrap_sigma(tail, config=None):
    config = config or BootstrapConfig()
    x = np.asarray(tail, float)
    if len(x) < config.block_length:
        raise ColpackError("tail_too_short",
                           f"tail of {len(x)} frames is shorter than the block length {config.block_length}")
    rng = np.random.default_rng(config.seed)
    means = block_bootstrap_means(x, config.block_length, config.n_boot, rng)
    # centring on one replicate keeps a constant sample at exactly zero spread
    return float(np.std(means - means[0], ddof=1)) if config.n_boot > 1 else 0.0


# -- sigmoid ----------------------------------------------------------------------------

def sigmoid(P, A, B, k, x0):
    z = np.clip(-k * (np.asarray(P, float) - x0), -700, 700)
    return A + B / (1.0 + np.exp(z))


@dataclass
class SigmoidFit:
    A: float
    B: float
    k: float
    x0: float
    residual_norm: float
    converged: bool
    iterations: int = 0

    def to_dict(self):
        return asdict(self)


def _initial_guess(P, y):
    A = float(y.min())
    B = float(y.max() - y.min())
    half = A + 0.5 * B
    x0 = float(P[len(P) // 2])
    for i in range(len(P) - 1):
        if (y[i] - half) * (y[i + 1] - half) <= 0 and y[i + 1] != y[i]:
            x0 = float(P[i] + (half - y[i]) * (P[i + 1] - P[i]) / (y[i + 1] - y[i]))
            break
    k = 4.0 / float(P.max() - P.min())
    return np.array([A, B, k, x0])


def _simplex_descent(obj, start, scale, max_rounds=400, round_iters=50, tol=1e-10):
    simplex = np.vstack([start, start + np.diag(scale)])
    prev = obj(start)
    total = 0
    res = None
    for _ in range(max_rounds):
        res = minimize(obj, simplex[0], method="Nelder-Mead",
                       options={"initial_simplex": simplex, "maxiter": round_iters,
                                "xatol": 1e-14, "fatol": 1e-30})
        total += res.nit
        simplex = res.final_simplex[0]
        cur = float(res.fun)
        if abs(prev - cur) <= tol * max(abs(prev), 1e-300) or cur < 1e-28:
            return res.x, cur, True, total
        prev = cur
    return res.x, float(res.fun), False, total


def fit_sigmoid(P, y, sigma=None, seed=0, starts=3):
    """Least-squares fit of ``A + B / (1 + exp(-k (P - x0)))`` by simplex descent.

    Unweighted unless ``sigma`` is given (then weights are 1/sigma^2).
    Three starts: the data-derived initial guess plus two jittered copies.
    """
    P = np.asarray(P, float)
    y = np.asarray(y, float)
    order = np.argsort(P, kind="stable")
    P, y = P[order], y[order]
    if len(P) < 5:
        raise ColpackError("degenerate_data", "sigmoid fit needs at least 5 points")
    if float(y.max() - y.min()) <= 0.1:
        raise ColpackError("degenerate_data", "y spans <= 0.1; no rising edge to fit")
    w = np.ones_like(y) if sigma is None else 1.0 / np.asarray(sigma, float)[order] ** 2

    def obj(p):
        r = sigmoid(P, *p) - y
        return float(np.sum(w * r * r))

    guess = _initial_guess(P, y)
    span = float(P.max() - P.min())
    scale = np.array([0.05 * guess[1], 0.1 * guess[1], 0.2 * guess[2], 0.05 * span])
    rng = np.random.default_rng(seed)
    best = None
    for s in range(starts):
        start = guess if s == 0 else guess * (1 + 0.1 * rng.standard_normal(4))
        x, f, ok, it = _simplex_descent(obj, start, scale)
        if best is None or f < best[1]:
            best = (x, f, ok, it)
    x, f, ok, it = best
    if not ok:
        raise ColpackError("no_convergence", "sigmoid fit did not converge")
    if x[2] <= 0 or abs(x[3] - 0.5 * (P.min() + P.max())) > 1.5 * span:
        raise ColpackError("no_convergence", f"sigmoid fit left the admissible region (k={x[2]:.4g}, x0={x[3]:.4g})")
    return SigmoidFit(float(x[0]), float(x[1]), float(x[2]), float(x[3]), math.sqrt(f), ok, it)


# -- level crossing ----------------------------------------------------------------------------

@dataclass
class CrossingResult:
    P_star: float
    P_lo: float
    P_hi: float
    level: float
    all_crossings: list = field(default_factory=list)

    def to_dict(self):
        return asdict(self)


def _crossings(P, y, level):
    out = []
    for i in range(len(P) - 1):
        a, b = y[i] - level, y[i + 1] - level
        if a == 0.0:
            out.append((float(P[i]), float(P[i - 1]) if i > 0 else float(P[i]), float(P[i])))
        elif b != 0.0 and (a < 0) != (b < 0):
            ps = P[i] + (level - y[i]) * (P[i + 1] - P[i]) / (y[i + 1] - y[i])
            out.append((float(ps), float(P[i]), float(P[i + 1])))
    if len(P) and y[-1] - level == 0.0:
        out.append((float(P[-1]), float(P[-2]) if len(P) > 1 else float(P[-1]), float(P[-1])))
    return out


def crossing_interpolate(P, y, level=PHI_MID):
    """First sign change of ``y - level`` scanning in increasing P, linearly interpolated."""
    P = np.asarray(P, float)
    y = np.asarray(y, float)
    if len(P) < 2:
        raise ColpackError("too_few_points", "crossing needs at least 2 points")
    order = np.argsort(P, kind="stable")
    P, y = P[order], y[order]
    found = _crossings(P, y, level)
    if not found:
        raise ColpackError("no_crossing", f"data never crosses level {level}")
    ps, lo, hi = found[0]
    return CrossingResult(ps, lo, hi, float(level), [c[0] for c in found])


# -- estimator plumbing --------------------------------------------------------------------------

def estimate(P, y, estimator, level=PHI_MID, sigma=None, starts=3):
    if estimator == "crossing":
        return crossing_interpolate(P, y, level).P_star
    if estimator == "sigmoid_x0":
        return fit_sigmoid(P, y, sigma=sigma, starts=starts).x0
    raise ColpackError("unknown_estimator", f"unknown estimator {estimator!r}",
                       supported=["crossing", "sigmoid_x0"])


def _percentiles(reps, point):
    p = np.percentile(reps, [2.5, 16, 84, 97.5])
    return {"point": point, "ci68": [float(p[1]), float(p[2])], "ci95": [float(p[0]), float(p[3])],
            "n_valid": int(len(reps))}


def _replicate_estimates(P, rep_means, estimator, level):
    vals, fails = [], 0
    for row in rep_means:
        try:
            # replicates stay close to the point fit; one start suffices
            vals.append(estimate(P, row, estimator, level, starts=1))
        except ColpackError:
            fails += 1
    return np.array(vals), fails


def bootstrap_estimator_ci(P, tails, estimator, level=PHI_MID, config=None):
    """Estimator-level block bootstrap over per-pressure equilibrated tails."""
    config = config or BootstrapConfig()
    P = np.asarray(P, float)
    tails = [np.asarray(t, float) for t in tails]
    if len(tails) != len(P):
        raise ColpackError("invalid_input", "one tail per pressure is required")
    point = estimate(P, [t.mean() for t in tails], estimator, level)
    streams = np.random.SeedSequence(config.seed).spawn(len(tails))
    reps = np.column_stack([
        block_bootstrap_means(t, min(config.block_length, len(t)), config.n_boot, np.random.default_rng(s))
        for t, s in zip(tails, streams)])
    vals, fails = _replicate_estimates(P, reps, estimator, level)
    if fails > 0.2 * config.n_boot:
        raise ColpackError("unstable_estimator", f"{fails}/{config.n_boot} bootstrap replicates failed")
    out = _percentiles(vals, point)
    out["n_failed"] = fails
    return out


def bootstrap_estimator_ci_from_summary(P, means, sigmas, estimator, level=PHI_MID, config=None):
    """Same interval when only per-point means and bootstrap sigmas are available (normal replicates)."""
    config = config or BootstrapConfig()
    P = np.asarray(P, float)
    means = np.asarray(means, float)
    sigmas = np.asarray(sigmas, float)
    point = estimate(P, means, estimator, level)
    rng = np.random.default_rng(config.seed)
    reps = means + sigmas * rng.standard_normal((config.n_boot, len(means)))
    vals, fails = _replicate_estimates(P, reps, estimator, level)
    if fails > 0.2 * config.n_boot:
        raise ColpackError("unstable_estimator", f"{fails}/{config.n_boot} bootstrap replicates failed")
    out = _percentiles(vals, point)
    out["n_failed"] = fails
    return out


def loo_sensitivity(P, y, estimator, level=PHI_MID):
    """Drop each point in turn; report the largest shift, the range over drops and the worst point."""
    P = np.asarray(P, float)
    y = np.asarray(y, float)
    if len(P) < 3:
        raise ColpackError("too_few_points", "leave-one-out needs at least 3 points")
    full = estimate(P, y, estimator, level)
    drops = []
    for i in range(len(P)):
        keep = np.arange(len(P)) != i
        try:
            v = estimate(P[keep], y[keep], estimator, level)
            drops.append({"dropped_P": float(P[i]), "estimate": v, "shift": v - full})
        except ColpackError as exc:
            drops.append({"dropped_P": float(P[i]), "error": exc.code})
    ok = [d for d in drops if "estimate" in d]
    worst = max(ok, key=lambda d: abs(d["shift"])) if ok else None
    return {
        "full": full,
        "max_shift": abs(worst["shift"]) if worst else None,
        "range": [min(d["estimate"] for d in ok), max(d["estimate"] for d in ok)] if ok else None,
        "worst_point": worst["dropped_P"] if worst else None,
        "drops": drops,
    }


# -- report ---------------------------------------------------------------------------------------

def pstar_report(P, phi, psi6, phi_sigma=None, psi6_sigma=None, tails_phi=None, tails_psi6=None,
                 level=PHI_MID, config=None):
    """Both transition estimators with bootstrap intervals and leave-one-out drops."""
    config = config or BootstrapConfig()
    P = np.asarray(P, float)
    table = []
    for i in range(len(P)):
        table.append({"P": float(P[i]), "phi": float(phi[i]),
                      "phi_sigma": None if phi_sigma is None else float(phi_sigma[i]),
                      "psi6": float(psi6[i]),
                      "psi6_sigma": None if psi6_sigma is None else float(psi6_sigma[i])})
    report = {"per_point": table, "level": level, "estimates": {}, "loo": {}}
    for key, y, sig, tails, est in (("P_star_phi", phi, phi_sigma, tails_phi, "crossing"),
                                    ("P_star_psi6", psi6, psi6_sigma, tails_psi6, "sigmoid_x0")):
        try:
            if tails is not None:
                ci = bootstrap_estimator_ci(P, tails, est, level, config)
            elif sig is not None:
                ci = bootstrap_estimator_ci_from_summary(P, y, sig, est, level, config)
            else:
                ci = {"point": estimate(P, y, est, level)}
            report["estimates"][key] = ci
            report["loo"][key] = loo_sensitivity(P, y, est, level)
        except ColpackError as exc:
            report["estimates"][key] = {"error": exc.to_dict()}
    try:
        fit = fit_sigmoid(P, psi6)
        report["sigmoid_fit"] = fit.to_dict()
    except ColpackError as exc:
        report["sigmoid_fit"] = {"error": exc.to_dict()}
    return report


def write_report(path, report):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=2)
        fh.write("\n")
    return path


PSTAR_FILE = "pstar_estimates.json"


def sweep_table(analysis_record, order_series="disk_0.hexatic_6", x_param="P"):
    """Per-pressure means, bootstrap sigmas and equilibrated tails from analysis results."""
    rows = []
    for run in analysis_record.get("runs", []):
        params = run.get("parameters", {})
        x = params.get(x_param, params.get("pressure"))
        if x is None:
            raise ColpackError("missing_parameter", f"run {run.get('run_index')} has no {x_param} value")
        cut = run["equilibrium"]["eq_start_index"]
        series = run["series"]
        if order_series not in series:
            raise ColpackError("missing_series", f"analysis has no series {order_series!r}",
                               available=sorted(series))
        rows.append((float(x), np.asarray(series["system.volume_fraction"][cut:], float),
                     np.asarray(series[order_series][cut:], float)))
    if not rows:
        raise ColpackError("missing_analysis", "analysis results contain no runs")
    rows.sort(key=lambda r: r[0])
    return rows


def estimate_from_analysis(working_dir, order_series="disk_0.hexatic_6", level=PHI_MID, config=None):
    """Write pstar_estimates.json next to analysis_results.json and return the report."""
    from . import workflow

    path = os.path.join(working_dir, workflow.ANALYSIS_FILE)
    if not os.path.exists(path):
        raise ColpackError("missing_analysis", f"no {workflow.ANALYSIS_FILE} in {working_dir}")
    config = config or BootstrapConfig()
    rows = sweep_table(workflow.read_json(path), order_series)
    P = np.array([r[0] for r in rows])
    tails_phi = [r[1] for r in rows]
    tails_psi = [r[2] for r in rows]

    def sig(t):
        cfg = BootstrapConfig(min(config.block_length, len(t)), config.n_boot, config.seed)
        return block_bootstrap_sigma(t, cfg)

    report = pstar_report(P, [t.mean() for t in tails_phi], [t.mean() for t in tails_psi],
                          [sig(t) for t in tails_phi], [sig(t) for t in tails_psi],
                          tails_phi, tails_psi, level, config)
    report["order_series"] = order_series
    report["bootstrap"] = asdict(config)
    write_report(os.path.join(working_dir, PSTAR_FILE), report)
    return report
