"""Log partition estimators built on tempered-run statistics.

All estimators anchor log_z[0] = 0 (normalized base) and return a
LogZEstimate carrying the method tag plus optional bias/variance
diagnostics.  The ratio estimator (method "rts") is the closed form
log Zhat_k + log r_1 - log r_k + log c_hat_k - log c_hat_1; everything
else here is either a comparison baseline or a consistency variant of
that same fixed point.
"""

from __future__ import annotations

import csv
import json
import time
from dataclasses import dataclass, field
from importlib import resources
from typing import Optional, Sequence

import numpy as np
from scipy.sparse.csgraph import connected_components
from scipy.special import logsumexp

from .core import TemperatureLadder, beta_conditional_probs
from .tempering import RaoBlackwellStats, SampleLog

METHODS = ("rts", "ts", "ti_riemann", "ti_trap", "ti_rb", "mbar",
           "mbar_stoch", "mixed_mle", "sd", "rsd", "ais", "raise")


@dataclass
class LogZEstimate:
    log_z: np.ndarray
    method: str
    bias_est: Optional[np.ndarray] = None
    var_est: Optional[np.ndarray] = None
    n_samples: int = 0
    flags: list = field(default_factory=list)

    def __post_init__(self):
        self.log_z = np.asarray(self.log_z, dtype=np.float64)
        if self.method not in METHODS:
            raise ValueError(f"unknown method tag {self.method!r}")
        if self.log_z[0] != 0.0:
            raise ValueError("log_z[0] must be 0")
        if not np.all(np.isfinite(self.log_z)):
            raise ValueError("log_z entries must be finite")

    @property
    def log_z_target(self) -> float:
        return float(self.log_z[-1])

    def to_record(self, seed: Optional[int] = None) -> dict:
        return {
            "method": self.method,
            "K": int(len(self.log_z)),
            "log_z": [float(v) for v in self.log_z],
            "bias_est": None if self.bias_est is None else [float(v) for v in self.bias_est],
            "var_est": None if self.var_est is None else [float(v) for v in self.var_est],
            "n_samples": int(self.n_samples),
            "seed": seed,
            "flags": list(self.flags),
        }


# --- ratio estimator and its count-based comparison -----------------------

def rts(ladder: TemperatureLadder, stats: RaoBlackwellStats) -> LogZEstimate:
    """Closed-form update from Rao-Blackwellized marginal estimates."""
    c = stats.c_hat
    if c[0] <= 0:
        raise ValueError("base temperature never weighted; "
                         "ladder or Zhat badly initialized")
    if np.any(c <= 0):
        raise ValueError("c_hat has empty bins; run longer or re-initialize")
    log_z = (ladder.log_zhat + ladder.log_r[0] - ladder.log_r
             + np.log(c) - np.log(c[0]))
    log_z[0] = 0.0
    return LogZEstimate(log_z, "rts", n_samples=stats.n_samples)


def ts_counts(ladder: TemperatureLadder, stats: RaoBlackwellStats,
              smoothing: float = 0.1) -> LogZEstimate:
    """Same ratio update from smoothed raw visit counts (non-RB baseline)."""
    if smoothing < 0:
        raise ValueError("smoothing must be >= 0")
    c = stats.raw_counts.astype(np.float64) + smoothing
    if np.any(c <= 0):
        raise ValueError("zero count in base bin with smoothing 0")
    c /= c.sum()
    log_z = (ladder.log_zhat + ladder.log_r[0] - ladder.log_r
             + np.log(c) - np.log(c[0]))
    log_z[0] = 0.0
    return LogZEstimate(log_z, "ts", n_samples=stats.n_samples)


def rts_bias_variance(stats: RaoBlackwellStats,
                      chain_replicates: Sequence[RaoBlackwellStats]):
    """Taylor-approximation bias and variance of the pooled log estimate.

    Moments of c_hat are estimated empirically across per-chain replicate
    c_hat vectors (variance of the pooled mean is the across-chain
    variance divided by the number of chains).
    """
    R = len(chain_replicates)
    if R < 2:
        raise ValueError("need at least 2 chain replicates")
    C = np.stack([r.c_hat for r in chain_replicates])  # (R, K)
    c = stats.c_hat
    sigma2 = C.var(axis=0, ddof=1) / R
    cov1k = np.array([np.cov(C[:, 0], C[:, k], ddof=1)[0, 1] for k in range(C.shape[1])]) / R
    bias = 0.5 * (sigma2[0] / c[0] ** 2 - sigma2 / c ** 2)
    var = sigma2[0] / c[0] ** 2 + sigma2 / c ** 2 - 2.0 * cov1k / (c * c[0])
    bias[0] = 0.0
    var[0] = 0.0
    return bias, var


# --- thermodynamic integration ---------------------------------------------

def _interpolate_empty(betas: np.ndarray, g: np.ndarray, filled: np.ndarray) -> np.ndarray:
    if not np.any(filled):
        raise ValueError("all bins empty; nothing to integrate")
    return np.interp(betas, betas[filled], g[filled])


def _integrate(betas: np.ndarray, g: np.ndarray, rule: str) -> np.ndarray:
    db = np.diff(betas)
    if rule == "trapezoid":
        inc = db * (g[:-1] + g[1:]) / 2.0
    elif rule == "riemann":
        inc = db * g[1:]  # right Riemann sum
    else:
        raise ValueError(f"unknown integration rule {rule!r}")
    return np.concatenate([[0.0], np.cumsum(inc)])


def ti(ladder: TemperatureLadder, stats: RaoBlackwellStats,
       rule: str = "trapezoid") -> LogZEstimate:
    """Integrate within-bin sample means of delta over beta.

    Empty bins are imputed by linear interpolation from their neighbors.
    """
    counts = stats.raw_counts
    filled = counts > 0
    g = np.zeros(ladder.K)
    g[filled] = stats.delta_bin_sum[filled] / counts[filled]
    g = _interpolate_empty(ladder.betas, g, filled)
    log_z = _integrate(ladder.betas, g, rule)
    method = "ti_trap" if rule == "trapezoid" else "ti_riemann"
    return LogZEstimate(log_z, method, n_samples=stats.n_samples)


def ti_rb(ladder: TemperatureLadder, stats: RaoBlackwellStats) -> LogZEstimate:
    """Rao-Blackwellized TI: gradient at beta_k is the conditional-weighted
    mean of delta; integrated by the trapezoid rule."""
    filled = stats.cond_sum > 0
    g = np.zeros(ladder.K)
    g[filled] = stats.delta_weighted[filled] / stats.cond_sum[filled]
    g = _interpolate_empty(ladder.betas, g, filled)
    log_z = _integrate(ladder.betas, g, "trapezoid")
    return LogZEstimate(log_z, "ti_rb", n_samples=stats.n_samples)


# --- multistate reweighting -------------------------------------------------

def _mbar_log_weights(samples: SampleLog, K: int,
                      weights: Optional[np.ndarray]) -> np.ndarray:
    if weights is None:
        n_k = np.bincount(samples.beta_indices, minlength=K).astype(np.float64)
        weights = n_k / samples.n
    weights = np.asarray(weights, dtype=np.float64)
    with np.errstate(divide="ignore"):
        return np.log(weights)


def mbar_gradient(samples: SampleLog, ladder: TemperatureLadder,
                  log_z: np.ndarray,
                  weights: Optional[np.ndarray] = None) -> np.ndarray:
    """Gradient of the pooled-sample reweighting likelihood w.r.t. log Z."""
    log_a = _mbar_log_weights(samples, ladder.K, weights)
    B = np.outer(samples.deltas, ladder.betas)  # (N, K)
    logits = log_a + B - log_z
    denom = logsumexp(logits, axis=1, keepdims=True)
    resp = np.exp(logits - denom).mean(axis=0)
    return np.exp(log_a) - resp


def mbar(samples: SampleLog, ladder: TemperatureLadder,
         max_iters: int = 10000, tol: float = 1e-8,
         weights: Optional[np.ndarray] = None) -> LogZEstimate:
    """Self-consistent iteration for the pooled-sample likelihood.

    weights, when given, replace the empirical bin fractions n_k/N
    (passing c_hat makes the solution coincide with the ratio estimator).
    """
    K = ladder.K
    log_a = _mbar_log_weights(samples, K, weights)
    if np.isneginf(log_a[0]):
        raise ValueError("no samples at the base temperature; no anchor")
    B = np.outer(samples.deltas, ladder.betas)  # (N, K)
    log_z = np.zeros(K)
    converged = False
    for _ in range(max_iters):
        denom = logsumexp(log_a + B - log_z, axis=1)  # (N,)
        new = logsumexp(B - denom[:, None], axis=0) - np.log(samples.n)
        new -= new[0]
        change = np.max(np.abs(new - log_z))
        log_z = new
        if change < tol:
            converged = True
            break
    est = LogZEstimate(log_z, "mbar", n_samples=samples.n)
    if not converged:
        est.flags.append("not_converged")
    return est


def mbar_stochastic(ladder: TemperatureLadder,
                    stats_stream: Sequence[RaoBlackwellStats],
                    step_schedule=None) -> LogZEstimate:
    """Stochastic update log Zhat_k += gamma_t (c_hat_k/r_k - c_hat_1/r_1)
    applied per incoming statistics batch; gamma_t defaults to 1/t."""
    if step_schedule is None:
        step_schedule = lambda t: 1.0 / t
    log_z = ladder.log_zhat.copy()
    r = ladder.r
    n = 0
    for t, stats in enumerate(stats_stream, start=1):
        c = stats.c_hat
        log_z = log_z + step_schedule(t) * (c / r - c[0] / r[0])
        n += stats.n_samples
    log_z[0] = 0.0
    return LogZEstimate(log_z, "mbar_stoch", n_samples=n)


def mixed_zhat_mle(samples: SampleLog, max_iters: int = 1000,
                   tol: float = 1e-8) -> LogZEstimate:
    """Maximize the concave pooled likelihood when samples were drawn under
    different Zhat snapshots; gradient ascent with backtracking, anchored
    at log Z_1 = 0."""
    if samples.conditionals is None or samples.zhat_versions is None or samples.snapshots is None:
        raise ValueError("mixed-Zhat MLE needs conditionals, versions and snapshots")
    N = samples.n
    K = samples.conditionals.shape[1]
    cond_sum = samples.conditionals.sum(axis=0)  # N * c_hat

    # per-snapshot sample counts and offset vectors log r - log Zhat^(i)
    versions = np.asarray(samples.zhat_versions)
    uniq = np.unique(versions)
    offsets = []
    counts = []
    for v in uniq:
        lad = samples.snapshots[int(v)]
        offsets.append(lad.log_r - lad.log_zhat)
        counts.append(int(np.sum(versions == v)))
    offsets = np.stack(offsets)  # (S, K)
    counts = np.asarray(counts, dtype=np.float64)

    def value_grad(theta):
        logits = offsets + theta  # (S, K)
        lse = logsumexp(logits, axis=1)
        val = float(cond_sum @ theta - counts @ lse)
        soft = np.exp(logits - lse[:, None])
        grad = cond_sum - counts @ soft
        grad[0] = 0.0  # anchored coordinate
        return val, grad

    theta = np.zeros(K)
    val, grad = value_grad(theta)
    converged = False
    for _ in range(max_iters):
        if np.max(np.abs(grad)) < tol * N:
            converged = True
            break
        step = 1.0 / N
        for _bt in range(60):
            cand = theta + step * grad
            cand[0] = 0.0
            new_val, new_grad = value_grad(cand)
            if new_val >= val + 0.5 * step * float(grad @ grad):
                break
            step *= 0.5
        theta, val, grad = cand, new_val, new_grad
    est = LogZEstimate(theta, "mixed_mle", n_samples=N)
    if not converged:
        est.flags.append("not_converged")
    return est


# --- stationary-distribution variants ---------------------------------------

def _stationary_left_eigvec(P: np.ndarray, tol: float = 1e-12,
                            max_iters: int = 1_000_000) -> np.ndarray:
    K = P.shape[0]
    n_comp, _ = connected_components(P > 0, directed=True, connection="strong")
    if n_comp != 1:
        row_any = (P > 0).any(axis=0)
        bad = np.flatnonzero(~row_any)
        raise ValueError(f"transition matrix reducible; unreachable indices {bad.tolist()}"
                         if len(bad) else
                         "transition matrix reducible; multiple strongly connected components")
    pi = np.full(K, 1.0 / K)
    for _ in range(max_iters):
        nxt = pi @ P
        nxt /= nxt.sum()
        if np.max(np.abs(nxt - pi)) < tol:
            return nxt
        pi = nxt
    raise ValueError("power iteration did not reach the residual tolerance")


def stationary_estimate(ladder: TemperatureLadder, stats: RaoBlackwellStats,
                        mode: str = "rsd") -> LogZEstimate:
    """Ratio update with c_hat replaced by the stationary law of the
    empirical beta transition matrix (sampled rows for 'sd',
    Rao-Blackwellized rows for 'rsd')."""
    if mode not in ("sd", "rsd"):
        raise ValueError("mode must be 'sd' or 'rsd'")
    raw = stats.transition_counts if mode == "sd" else stats.rb_transition
    raw = raw.astype(np.float64)
    row_sums = raw.sum(axis=1)
    if np.any(row_sums == 0):
        bad = np.flatnonzero(row_sums == 0)
        raise ValueError(f"transition matrix reducible; unreachable indices {bad.tolist()}")
    P = raw / row_sums[:, None]
    pi = _stationary_left_eigvec(P)
    if pi[0] <= 0:
        raise ValueError("base temperature has zero stationary mass")
    log_z = (ladder.log_zhat + ladder.log_r[0] - ladder.log_r
             + np.log(pi) - np.log(pi[0]))
    log_z[0] = 0.0
    return LogZEstimate(log_z, mode, n_samples=stats.n_samples)


# --- re-binning stored samples under a new ladder ---------------------------

def stats_from_deltas(ladder: TemperatureLadder, deltas: np.ndarray,
                      rng: Optional[np.random.Generator] = None) -> RaoBlackwellStats:
    """Rebuild Rao-Blackwellized statistics for stored delta values under a
    (possibly different) ladder.

    Conditional vectors are recomputed exactly; sampled bin indices (for
    the count-based statistics) are redrawn from the conditionals when a
    generator is supplied, else taken as conditional argmax.
    """
    stats = RaoBlackwellStats(ladder.K)
    prev_k = 0
    for d in np.asarray(deltas, dtype=np.float64):
        cond = beta_conditional_probs(ladder, float(d))
        if rng is not None:
            u = rng.random()
            k = int(np.searchsorted(np.cumsum(cond), u, side="right"))
            k = min(k, ladder.K - 1)
        else:
            k = int(np.argmax(cond))
        stats.update(cond, float(d), prev_k, k)
        prev_k = k
    return stats


# --- serialization -----------------------------------------------------------

def estimates_schema() -> dict:
    with resources.files("tempz.schemas").joinpath("estimates.schema.json").open() as fh:
        return json.load(fh)


def write_estimates_json(path, estimates: Sequence[LogZEstimate],
                         seed: Optional[int] = None, validate: bool = True):
    doc = {
        "timestamp": time.strftime("%Y-%m-%dT%H:%M:%S"),
        "estimates": [e.to_record(seed) for e in estimates],
    }
    if validate:
        import jsonschema
        jsonschema.validate(doc, estimates_schema())
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")


def write_estimates_csv(path, estimates: Sequence[LogZEstimate],
                        ladder: TemperatureLadder):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["method", "k", "beta", "log_z", "bias_est", "var_est"])
        for e in estimates:
            for k in range(len(e.log_z)):
                w.writerow([e.method, k, repr(float(ladder.betas[k])),
                            repr(float(e.log_z[k])),
                            "" if e.bias_est is None else repr(float(e.bias_est[k])),
                            "" if e.var_est is None else repr(float(e.var_est[k]))])
