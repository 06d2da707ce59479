"""Tempered-family primitives shared by all samplers and estimators.

The geometric path between a normalized base distribution p1 and an
unnormalized target f is

    f_beta(x) = f(x)^beta * p1(x)^(1-beta),   beta in [0, 1],

with partition function Z(beta).  Everything here works in log space:
for typical targets (e.g. RBMs) the energy gap delta = log f - log p1
spans hundreds of nats and the naive ratios overflow.
"""

from __future__ import annotations

import abc
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp


class TemperedModel(abc.ABC):
    """Contract every tempered target must satisfy.

    Implementations must be shareable read-only across threads; all
    mutable sampler state lives in per-chain structures.
    """

    @abc.abstractmethod
    def log_f(self, x) -> float:
        """Unnormalized target log density."""

    @abc.abstractmethod
    def log_p1(self, x) -> float:
        """Normalized base log density."""

    def delta(self, x) -> float:
        """log f(x) - log p1(x); must be finite for every valid state."""
        return self.log_f(x) - self.log_p1(x)

    @abc.abstractmethod
    def transition(self, x, beta: float, rng: np.random.Generator):
        """One Markov transition leaving f_beta/Z(beta) invariant."""

    @abc.abstractmethod
    def sample_p1(self, rng: np.random.Generator):
        """Exact draw from the base distribution."""

    def sample_target_exact(self, rng: np.random.Generator):
        """Exact draw from the target, where tractable (used by RAISE)."""
        raise NotImplementedError("no exact target sampler for this model")


@dataclass
class TemperatureLadder:
    """The beta grid, prior masses and running log partition estimates.

    betas[0] = 0 and betas[-1] = 1 always; log_zhat[0] is pinned to 0
    because the base is normalized (Z at beta=0 is 1).
    """

    betas: np.ndarray
    log_r: np.ndarray
    log_zhat: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        self.betas = np.asarray(self.betas, dtype=np.float64)
        self.log_r = np.asarray(self.log_r, dtype=np.float64)
        if self.log_zhat is None:
            self.log_zhat = np.zeros_like(self.betas)
        self.log_zhat = np.asarray(self.log_zhat, dtype=np.float64)
        self.validate()

    def validate(self):
        K = self.K
        if K < 2:
            raise ValueError("ladder needs K >= 2")
        if self.log_r.shape != (K,) or self.log_zhat.shape != (K,):
            raise ValueError("betas, log_r, log_zhat must have equal length")
        if self.betas[0] != 0.0 or self.betas[-1] != 1.0:
            raise ValueError("betas must start at 0 and end at 1")
        if np.any(np.diff(self.betas) <= 0):
            raise ValueError("betas must be strictly increasing")
        if abs(np.exp(self.log_r).sum() - 1.0) > 1e-12:
            raise ValueError("exp(log_r) must sum to 1")
        if self.log_zhat[0] != 0.0:
            raise ValueError("log_zhat[0] must stay 0 (normalized base)")
        if not np.all(np.isfinite(self.log_zhat)):
            raise ValueError("log_zhat entries must be finite")

    @property
    def K(self) -> int:
        return len(self.betas)

    @property
    def r(self) -> np.ndarray:
        return np.exp(self.log_r)

    def copy(self) -> "TemperatureLadder":
        return TemperatureLadder(self.betas.copy(), self.log_r.copy(),
                                 self.log_zhat.copy())

    def with_log_zhat(self, log_zhat) -> "TemperatureLadder":
        return TemperatureLadder(self.betas.copy(), self.log_r.copy(),
                                 np.asarray(log_zhat, dtype=np.float64))

    @staticmethod
    def make(K: int, spacing: str = "uniform",
             prior: str = "uniform",
             prior_exponent: float = 0.0) -> "TemperatureLadder":
        """Build a ladder.

        spacing: 'uniform' (default) or 'geometric' (dense near 0).
        prior: 'uniform' for r_k = 1/K, or 'exp' for r_k propto
        exp(prior_exponent * beta_k).
        """
        if K < 2:
            raise ValueError("ladder needs K >= 2")
        if spacing == "uniform":
            betas = np.linspace(0.0, 1.0, K)
        elif spacing == "geometric":
            betas = np.concatenate([[0.0], np.geomspace(1.0 / (K - 1), 1.0, K - 1)])
        else:
            raise ValueError(f"unknown spacing {spacing!r}")
        if prior == "uniform":
            log_r = np.full(K, -np.log(K))
        elif prior == "exp":
            log_r = prior_exponent * betas
            log_r -= logsumexp(log_r)
        else:
            raise ValueError(f"unknown prior {prior!r}")
        return TemperatureLadder(betas, log_r, np.zeros(K))


@dataclass
class BetaConditional:
    """Normalized conditional law of the inverse-temperature index given x."""

    probs: np.ndarray

    def __post_init__(self):
        self.probs = np.asarray(self.probs, dtype=np.float64)
        if np.any(self.probs < 0):
            raise ValueError("conditional probabilities must be nonnegative")
        if abs(self.probs.sum() - 1.0) > 1e-12:
            raise ValueError("conditional probabilities must sum to 1")


def tempered_log_density(model: TemperedModel, x, beta: float) -> float:
    """log f_beta(x) = beta*log f(x) + (1-beta)*log p1(x)."""
    if not 0.0 <= beta <= 1.0:
        raise ValueError("beta must lie in [0, 1]")
    lf = model.log_f(x)
    lp = model.log_p1(x)
    if not (np.isfinite(lf) and np.isfinite(lp)):
        raise ValueError("state has non-finite log density; invalid input")
    return beta * lf + (1.0 - beta) * lp


def beta_conditional_probs(ladder: TemperatureLadder, delta_x: float) -> np.ndarray:
    """Conditional probabilities over the K ladder rungs given delta_x.

    probs[k] propto exp(beta_k * delta_x + log_r[k] - log_zhat[k]),
    normalized with a max shift so |delta_x| up to 1e4 is safe.
    """
    logits = ladder.betas * delta_x + ladder.log_r - ladder.log_zhat
    logits -= logits.max()
    w = np.exp(logits)
    return w / w.sum()


def beta_conditional(ladder: TemperatureLadder, delta_x: float) -> BetaConditional:
    return BetaConditional(beta_conditional_probs(ladder, delta_x))


def marginal_q_beta(ladder: TemperatureLadder, true_log_z) -> np.ndarray:
    """Marginal law of beta under the joint with running estimates log_zhat.

    q(beta_k) propto r_k * Z_k / Zhat_k.  Diagnostic / synthetic-test use.
    """
    true_log_z = np.asarray(true_log_z, dtype=np.float64)
    if true_log_z[0] != 0.0:
        raise ValueError("true_log_z[0] must be 0")
    logits = ladder.log_r + true_log_z - ladder.log_zhat
    logits -= logits.max()
    w = np.exp(logits)
    return w / w.sum()


def sample_index(probs: np.ndarray, u: float) -> int:
    """Inverse-CDF draw of a categorical index from one uniform."""
    k = int(np.searchsorted(np.cumsum(probs), u, side="right"))
    return min(k, len(probs) - 1)
