"""Finite-state tempered models with fully enumerable ground truth.

These are the desk-scale oracles: every marginal, conditional and
partition function can be computed by direct summation, so Monte Carlo
output can be checked against exact values.
"""

from __future__ import annotations

import numpy as np
from scipy.special import logsumexp

from .core import TemperatureLadder, TemperedModel, beta_conditional_probs, sample_index


class ToyModel(TemperedModel):
    """Tempered family over a small finite state space {0, ..., S-1}.

    The per-beta transition is an exact independent draw from the
    tempered conditional, so the induced beta sequence is itself a
    Markov chain (the regime where stationary-distribution estimators
    are exact).
    """

    def __init__(self, f_values, p1_probs):
        f_values = np.asarray(f_values, dtype=np.float64)
        p1_probs = np.asarray(p1_probs, dtype=np.float64)
        if f_values.shape != p1_probs.shape or f_values.ndim != 1:
            raise ValueError("f_values and p1_probs must be equal-length vectors")
        if np.any(f_values <= 0) or np.any(p1_probs <= 0):
            raise ValueError("f and p1 must be strictly positive")
        if abs(p1_probs.sum() - 1.0) > 1e-12:
            raise ValueError("p1 must be normalized")
        self.log_f_vals = np.log(f_values)
        self.log_p1_vals = np.log(p1_probs)
        self.n_states = len(f_values)

    def log_f(self, x) -> float:
        return float(self.log_f_vals[x])

    def log_p1(self, x) -> float:
        return float(self.log_p1_vals[x])

    def tempered_logits(self, beta: float) -> np.ndarray:
        return beta * self.log_f_vals + (1.0 - beta) * self.log_p1_vals

    def transition(self, x, beta: float, rng: np.random.Generator) -> int:
        logits = self.tempered_logits(beta)
        logits = logits - logits.max()
        p = np.exp(logits)
        p /= p.sum()
        return sample_index(p, rng.random())

    def sample_p1(self, rng: np.random.Generator) -> int:
        return sample_index(np.exp(self.log_p1_vals), rng.random())

    def sample_target_exact(self, rng: np.random.Generator) -> int:
        logits = self.log_f_vals - self.log_f_vals.max()
        p = np.exp(logits)
        p /= p.sum()
        return sample_index(p, rng.random())

    # --- exact enumeration oracles -------------------------------------

    def true_log_z(self, beta: float) -> float:
        return float(logsumexp(self.tempered_logits(beta)))

    def true_log_z_ladder(self, ladder: TemperatureLadder) -> np.ndarray:
        return np.array([self.true_log_z(b) for b in ladder.betas])

    def exact_joint(self, ladder: TemperatureLadder) -> np.ndarray:
        """q(x, beta_k) under the ladder's running log_zhat, as an S x K table."""
        S, K = self.n_states, ladder.K
        logq = np.empty((S, K))
        for k in range(K):
            logq[:, k] = (self.tempered_logits(ladder.betas[k])
                          + ladder.log_r[k] - ladder.log_zhat[k])
        logq -= logsumexp(logq)
        return np.exp(logq)

    def exact_marginal_beta(self, ladder: TemperatureLadder) -> np.ndarray:
        """q(beta_k) by full enumeration over states."""
        return self.exact_joint(ladder).sum(axis=0)

    def exact_c_mean(self, ladder: TemperatureLadder) -> np.ndarray:
        """E_q[q(beta_k|x)]; equals exact_marginal_beta, kept as a cross-check."""
        joint = self.exact_joint(ladder)
        qx = joint.sum(axis=1)
        c = np.zeros(ladder.K)
        for x in range(self.n_states):
            c += qx[x] * beta_conditional_probs(ladder, self.log_f_vals[x] - self.log_p1_vals[x])
        return c


def two_state_model(f1: float = 1.0, f2: float = 2.0) -> ToyModel:
    """The default two-state oracle; Z at beta=1 is f1 + f2 (3 by default)."""
    return ToyModel([f1, f2], [0.5, 0.5])


class ConstantDeltaModel(TemperedModel):
    """Synthetic model whose delta is the same constant for every state.

    The beta conditional is then independent of x, which makes many
    statistics exactly predictable (c_hat equals its conditional for
    any number of sweeps).
    """

    def __init__(self, delta_value: float = 0.0):
        self.delta_value = float(delta_value)

    def log_f(self, x) -> float:
        return self.delta_value

    def log_p1(self, x) -> float:
        return 0.0

    def delta(self, x) -> float:
        return self.delta_value

    def transition(self, x, beta, rng):
        return rng.random()  # state is irrelevant

    def sample_p1(self, rng):
        return rng.random()
