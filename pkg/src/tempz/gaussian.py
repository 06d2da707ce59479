"""Gaussian-mixture tempered target sampled with adaptive-step-size HMC.

The target f is a sum of unnormalized isotropic Gaussian kernels, so the
partition function is analytic and every estimate can be scored against
truth.  Acceptance is modeled per ladder rung as a logistic function of
the leapfrog step size, fitted under the constraints that acceptance is
non-increasing in the step size and in beta; each rung then gets the
step size that hits the target acceptance rate.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit, logsumexp
from scipy.special import logit as sp_logit

from .core import TemperedModel

TARGET_ACCEPT = 0.651
W0_CLAMP = 10.0


@dataclass
class GmmTarget:
    """Mixture of isotropic Gaussian kernels plus a zero-mean isotropic base."""

    means: np.ndarray          # (m, d)
    sigma2: float              # kernel variance
    weights: np.ndarray        # positive kernel weights
    prior_s2: float            # base variance

    def __post_init__(self):
        self.means = np.atleast_2d(np.asarray(self.means, dtype=np.float64))
        self.weights = np.asarray(self.weights, dtype=np.float64)
        if self.sigma2 <= 0 or self.prior_s2 <= 0:
            raise ValueError("variances must be positive")
        if np.any(self.weights <= 0):
            raise ValueError("weights must be positive")
        if len(self.weights) != len(self.means):
            raise ValueError("one weight per component")

    @property
    def dim(self) -> int:
        return self.means.shape[1]


def appendix_mixture() -> GmmTarget:
    """Two 10-d unit-weight kernels with variance 0.5, 5 apart in the first
    coordinate, under a variance-30 base."""
    means = np.zeros((2, 10))
    means[1, 0] = 5.0
    return GmmTarget(means, 0.5, np.ones(2), 30.0)


def gmm_log_f(target: GmmTarget, x: np.ndarray) -> float:
    sq = np.sum((x - target.means) ** 2, axis=1)
    return float(logsumexp(np.log(target.weights) - sq / (2.0 * target.sigma2)))


def gmm_grad_log_f(target: GmmTarget, x: np.ndarray) -> np.ndarray:
    logits = np.log(target.weights) - np.sum((x - target.means) ** 2, axis=1) / (2.0 * target.sigma2)
    resp = np.exp(logits - logsumexp(logits))
    return resp @ (target.means - x) / target.sigma2


def gmm_analytic_log_z(target: GmmTarget) -> float:
    """Exact log of the integral of f: each kernel integrates to
    (2 pi sigma^2)^(d/2) times its weight."""
    d = target.dim
    return float(np.log(target.weights.sum()) + 0.5 * d * np.log(2.0 * np.pi * target.sigma2))


class GmmModel(TemperedModel):
    """Tempered mixture target; transitions are HMC steps whose step size
    comes from the fitted per-beta table (or a flat default)."""

    def __init__(self, target: GmmTarget, n_steps: int = 10,
                 default_eps: float = 0.5):
        self.target = target
        self.n_steps = n_steps
        self.default_eps = default_eps
        self._eps_betas = None
        self._eps_values = None

    def log_f(self, x) -> float:
        return gmm_log_f(self.target, x)

    def log_p1(self, x) -> float:
        d = self.target.dim
        s2 = self.target.prior_s2
        return float(-np.sum(x ** 2) / (2.0 * s2) - 0.5 * d * np.log(2.0 * np.pi * s2))

    def log_q(self, x, beta: float) -> float:
        return beta * self.log_f(x) + (1.0 - beta) * self.log_p1(x)

    def grad_log_q(self, x, beta: float) -> np.ndarray:
        gp = -x / self.target.prior_s2
        return beta * gmm_grad_log_f(self.target, x) + (1.0 - beta) * gp

    def set_eps_table(self, betas, eps_values):
        self._eps_betas = np.asarray(betas, dtype=np.float64)
        self._eps_values = np.asarray(eps_values, dtype=np.float64)

    def eps_for(self, beta: float) -> float:
        if self._eps_betas is None:
            return self.default_eps
        j = int(np.argmin(np.abs(self._eps_betas - beta)))
        return float(self._eps_values[j])

    def transition(self, x, beta: float, rng: np.random.Generator):
        x_new, _ = hmc_step(lambda y: self.log_q(y, beta),
                            lambda y: self.grad_log_q(y, beta),
                            x, self.eps_for(beta), self.n_steps, rng)
        return x_new

    def sample_p1(self, rng: np.random.Generator) -> np.ndarray:
        return rng.normal(0.0, np.sqrt(self.target.prior_s2), self.target.dim)


# --- HMC ---------------------------------------------------------------------

def leapfrog(grad_logq, x, p, eps: float, n_steps: int):
    """Half-kick, n alternating drifts and kicks, half-kick."""
    x = np.array(x, dtype=np.float64)
    p = np.array(p, dtype=np.float64)
    p = p + 0.5 * eps * grad_logq(x)
    for step in range(n_steps):
        x = x + eps * p
        g = grad_logq(x)
        p = p + (eps if step < n_steps - 1 else 0.5 * eps) * g
    return x, p


def hmc_step(logq, grad_logq, x, eps: float, n_steps: int,
             rng: np.random.Generator):
    """One HMC proposal with fresh momentum; non-finite Hamiltonians are
    auto-rejected.  Returns (new x, accepted)."""
    if eps <= 0:
        raise ValueError("step size must be positive")
    p0 = rng.normal(size=np.shape(x))
    h0 = -logq(x) + 0.5 * float(p0 @ p0)
    x1, p1 = leapfrog(grad_logq, x, p0, eps, n_steps)
    h1 = -logq(x1) + 0.5 * float(p1 @ p1)
    u = rng.random()
    if not np.isfinite(h1):
        return np.array(x, dtype=np.float64), False
    if u < np.exp(min(0.0, h0 - h1)):
        return x1, True
    return np.array(x, dtype=np.float64), False


# --- acceptance model ---------------------------------------------------------

@dataclass
class HmcAcceptModel:
    """Per-rung logistic acceptance curves logit(p) = w0_j + w1_j * eps,
    with w1 <= 0 and acceptance non-increasing in beta at both step-size
    endpoints."""

    betas: np.ndarray
    w0: np.ndarray
    w1: np.ndarray
    eps_min: float
    eps_max: float
    target_accept: float = TARGET_ACCEPT
    degenerate: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        if self.degenerate is None:
            self.degenerate = np.zeros(len(self.betas), dtype=bool)


def _project(w0, w1, eps_min, eps_max):
    w0 = np.clip(w0, -W0_CLAMP, W0_CLAMP)
    w1 = np.minimum(w1, 0.0)
    g_lo = w0 + w1 * eps_min
    g_hi = w0 + w1 * eps_max
    # acceptance must not increase with beta; enforce at both endpoints
    g_lo = np.minimum.accumulate(g_lo)
    g_hi = np.minimum.accumulate(g_hi)
    w1 = (g_hi - g_lo) / (eps_max - eps_min)
    w0 = g_lo - w1 * eps_min
    return w0, w1


def fit_accept_model(bin_idx, eps, accepted, betas, eps_min: float,
                     eps_max: float, target_accept: float = TARGET_ACCEPT,
                     lr: float = 0.5, max_iters: int = 20000,
                     tol: float = 1e-6) -> HmcAcceptModel:
    """Constrained per-rung logistic fit by projected gradient ascent.

    bin_idx, eps, accepted are flat per-proposal records.  Bins whose
    labels are all identical cannot identify a slope; their intercept is
    driven to the +-10 clamp and they are flagged.
    """
    betas = np.asarray(betas, dtype=np.float64)
    bin_idx = np.asarray(bin_idx, dtype=np.int64)
    eps = np.asarray(eps, dtype=np.float64)
    y = np.asarray(accepted, dtype=np.float64)
    J = len(betas)
    counts = np.bincount(bin_idx, minlength=J).astype(np.float64)
    if np.any(counts == 0):
        raise ValueError("every beta bin needs at least one record")
    if not eps_min < eps_max:
        raise ValueError("eps_min must be below eps_max")

    degenerate = np.zeros(J, dtype=bool)
    for j in range(J):
        labels = y[bin_idx == j]
        if labels.min() == labels.max():
            degenerate[j] = True

    w0 = np.zeros(J)
    w1 = np.zeros(J)
    for _ in range(max_iters):
        r = y - expit(w0[bin_idx] + w1[bin_idx] * eps)
        g0 = np.bincount(bin_idx, weights=r, minlength=J) / counts
        g1 = np.bincount(bin_idx, weights=r * eps, minlength=J) / counts
        new0, new1 = _project(w0 + lr * g0, w1 + lr * g1, eps_min, eps_max)
        move = max(np.max(np.abs(new0 - w0)), np.max(np.abs(new1 - w1)))
        w0, w1 = new0, new1
        if move / lr < tol:
            break
    return HmcAcceptModel(betas, w0, w1, eps_min, eps_max, target_accept,
                          degenerate)


def eps_opt(model: HmcAcceptModel, beta_index: int) -> float:
    """Step size hitting the target acceptance at one rung, projected into
    [eps_min, eps_max]; a flat (w1 = 0) curve falls back to whichever
    endpoint its intercept says (always-accept rungs get the biggest step)."""
    w0 = model.w0[beta_index]
    w1 = model.w1[beta_index]
    t = sp_logit(model.target_accept)
    if w1 == 0.0:
        return model.eps_max if w0 >= t else model.eps_min
    return float(np.clip((t - w0) / w1, model.eps_min, model.eps_max))


def tune_endpoint_stepsizes(model: GmmModel, rng: np.random.Generator,
                            target_accept: float = TARGET_ACCEPT,
                            n_batches: int = 40, batch_size: int = 50,
                            eps0: float = 0.5):
    """Robbins-Monro tuning of the step size at the two ladder endpoints.

    log eps moves by 0.5/t times the batch acceptance-rate error; the
    beta=0 chain sets eps_max, the beta=1 chain eps_min.  Returns
    (eps_min, eps_max, final batch acceptance rates dict).
    """
    def batch_rate(beta, x, eps, n):
        n_acc = 0
        for _ in range(n):
            x, acc = hmc_step(lambda y: model.log_q(y, beta),
                              lambda y: model.grad_log_q(y, beta),
                              x, eps, model.n_steps, rng)
            n_acc += acc
        return x, n_acc / n

    results = {}
    rates = {}
    for beta in (0.0, 1.0):
        # coarse bracketing warm start: the 0.5/t schedule only polishes,
        # it cannot cross orders of magnitude from an arbitrary start
        eps = eps0
        x = model.sample_p1(rng)
        x, r = batch_rate(beta, x, eps, 25)
        direction = 2.0 if r > target_accept else 0.5
        for _ in range(20):
            x, r = batch_rate(beta, x, eps * direction, 25)
            if (r > target_accept) != (direction > 1.0):
                eps *= np.sqrt(direction)
                break
            eps *= direction
        rate = 0.0
        for t in range(1, n_batches + 1):
            n_acc = 0
            for _ in range(batch_size):
                x, acc = hmc_step(lambda y: model.log_q(y, beta),
                                  lambda y: model.grad_log_q(y, beta),
                                  x, eps, model.n_steps, rng)
                n_acc += acc
            rate = n_acc / batch_size
            eps = float(np.exp(np.log(eps) + (0.5 / t) * (rate - target_accept)))
        results[beta] = eps
        rates[beta] = rate
    eps_min, eps_max = results[1.0], results[0.0]
    swapped = False
    if eps_min > eps_max:
        eps_min, eps_max = eps_max, eps_min
        swapped = True
    return eps_min, eps_max, {"rates": rates, "swapped": swapped,
                              "eps": results}


def adapt_hmc(model: GmmModel, ladder, rng: np.random.Generator,
              pilot_per_bin: int = 50,
              target_accept: float = TARGET_ACCEPT):
    """Full adaptation pipeline: endpoint tuning, a pilot phase collecting
    (rung, eps, accepted) records with eps drawn uniformly, the constrained
    fit, and the per-rung optimal step table installed on the model.

    The two endpoint entries of the table are anchored to the directly
    tuned step sizes: the Robbins-Monro pass targets the acceptance rate
    at those rungs exactly, whereas the fitted curve only interpolates.

    Returns (HmcAcceptModel, eps table, pilot accept-rate per rung).
    """
    eps_min, eps_max, info = tune_endpoint_stepsizes(model, rng, target_accept)
    bins, epss, ys = [], [], []
    pilot_rates = np.zeros(ladder.K)
    for j, beta in enumerate(ladder.betas):
        x = model.sample_p1(rng)
        acc_count = 0
        for _ in range(pilot_per_bin):
            e = rng.uniform(eps_min, eps_max)
            x, acc = hmc_step(lambda y: model.log_q(y, float(beta)),
                              lambda y: model.grad_log_q(y, float(beta)),
                              x, e, model.n_steps, rng)
            bins.append(j)
            epss.append(e)
            ys.append(acc)
            acc_count += acc
        pilot_rates[j] = acc_count / pilot_per_bin
    fit = fit_accept_model(bins, epss, ys, ladder.betas, eps_min, eps_max,
                           target_accept)
    table = np.array([eps_opt(fit, j) for j in range(ladder.K)])
    if ladder.betas[0] == 0.0:
        table[0] = info["eps"][0.0]
    if ladder.betas[-1] == 1.0:
        table[-1] = info["eps"][1.0]
    model.set_eps_table(ladder.betas, table)
    return fit, table, pilot_rates


def write_eps_csv(path, ladder, table, accept_rates=None):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["k", "beta", "eps_opt", "pilot_accept_rate"])
        for k in range(ladder.K):
            rate = "" if accept_rates is None else repr(float(accept_rates[k]))
            w.writerow([k, repr(float(ladder.betas[k])), repr(float(table[k])), rate])
