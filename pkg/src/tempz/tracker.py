"""RBM training with persistent tempered chains and online log Z tracking.

Between gradient updates the persistent chains advance a few tempered
sweeps; the resulting marginal estimates drive a smoothed partial update
of the running log partition values (exponent alpha), which is cheap
enough to evaluate train/validation log-likelihood after every step.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from .core import TemperatureLadder, beta_conditional_probs
from .rbm import BaseBernoulli, RbmModel, RbmParams, base_from_data, rbm_free_energy, save_rbm
from .tempering import ChainState, RaoBlackwellStats, init_iterations, run_chains

DIVERGENCE_GUARD = 1e6


@dataclass
class TrainConfig:
    n_hidden: int
    n_chains: int = 100
    sweeps_per_update: int = 25
    K: int = 100
    prior_exponent: float = 2.0     # r_k propto exp(prior_exponent * beta_k)
    alpha: float = 0.2              # smoothing exponent of the partial update
    learning_rate: float = 0.05
    momentum: float = 0.9
    epochs: int = 1
    batch_size: int = 50
    cd1_pretrain_epochs: int = 1
    init_iters: int = 10
    init_sweeps_per_iter: int = 50
    weight_scale: float = 0.01
    checkpoint_every: int = 0
    checkpoint_path: str = ""

    def __post_init__(self):
        if not 0.0 < self.alpha <= 1.0:
            raise ValueError("alpha must be in (0, 1]")
        if self.sweeps_per_update < 1:
            raise ValueError("sweeps_per_update must be >= 1")


@dataclass
class TrackTrace:
    t: list = field(default_factory=list)
    log_zhat_K: list = field(default_factory=list)
    train_ll: list = field(default_factory=list)
    val_ll: list = field(default_factory=list)
    aborted: bool = False

    def append(self, t, lz, tll, vll):
        self.t.append(int(t))
        self.log_zhat_K.append(float(lz))
        self.train_ll.append(float(tll))
        self.val_ll.append(float(vll))

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "log_zhat_K", "train_ll", "val_ll"])
            for row in zip(self.t, self.log_zhat_K, self.train_ll, self.val_ll):
                w.writerow([row[0], repr(row[1]), repr(row[2]), repr(row[3])])


def smoothed_zhat_update(ladder: TemperatureLadder, stats: RaoBlackwellStats,
                         alpha: float):
    """Move every log Zhat_k a fraction alpha of the way to the full ratio
    update.  Returns (new ladder, updated flag); a run that never weighted
    the base temperature is skipped rather than applied."""
    if not 0.0 <= alpha <= 1.0:
        raise ValueError("alpha must be in [0, 1]")
    c = stats.c_hat
    if c[0] <= 0:
        return ladder, False
    with np.errstate(divide="ignore"):
        correction = (ladder.log_r[0] - ladder.log_r
                      + np.log(c) - np.log(c[0]))
    if not np.all(np.isfinite(correction[1:])):
        return ladder, False
    log_zhat = ladder.log_zhat + alpha * correction
    log_zhat[0] = 0.0
    return ladder.with_log_zhat(log_zhat), True


def pcd_gradient(params: RbmParams, base: BaseBernoulli,
                 ladder: TemperatureLadder, chains, minibatch: np.ndarray):
    """Log-likelihood gradient: exact positive phase on the minibatch,
    negative phase from the tempered chains with each chain weighted by
    its conditional mass at the target temperature.

    Returns (grad_w, grad_b, grad_c, fallback_flag)."""
    model = RbmModel(params, base)
    v_pos = np.atleast_2d(minibatch)
    ph_pos = expit(params.b + v_pos @ params.w)
    n = v_pos.shape[0]
    gw_pos = v_pos.T @ ph_pos / n
    gb_pos = ph_pos.mean(axis=0)
    gc_pos = v_pos.mean(axis=0)

    weights = np.array([beta_conditional_probs(ladder, model.delta(ch.x))[-1]
                        for ch in chains])
    total = weights.sum()
    fallback = False
    if total < 1e-12:
        fallback = True
        at_top = np.array([ch.beta_index == ladder.K - 1 for ch in chains])
        weights = at_top.astype(np.float64)
        if weights.sum() == 0:
            weights = np.ones(len(chains))
        total = weights.sum()
    weights = weights / total

    V = np.stack([ch.x.v for ch in chains])
    ph_neg = expit(params.b + V @ params.w)
    gw_neg = (V * weights[:, None]).T @ ph_neg
    gb_neg = weights @ ph_neg
    gc_neg = weights @ V
    return gw_pos - gw_neg, gb_pos - gb_neg, gc_pos - gc_neg, fallback


def cd1_pretrain(params: RbmParams, dataset: np.ndarray, epochs: int,
                 batch_size: int, learning_rate: float, momentum: float,
                 rng: np.random.Generator):
    """Plain CD-1 with SGD momentum to get reasonable starting parameters."""
    mw = np.zeros_like(params.w)
    mb = np.zeros_like(params.b)
    mc = np.zeros_like(params.c)
    n = dataset.shape[0]
    for _ in range(epochs):
        order = rng.permutation(n)
        for start in range(0, n, batch_size):
            v0 = dataset[order[start:start + batch_size]]
            ph0 = expit(params.b + v0 @ params.w)
            h0 = (rng.random(ph0.shape) < ph0).astype(np.float64)
            pv1 = expit(params.c + h0 @ params.w.T)
            v1 = (rng.random(pv1.shape) < pv1).astype(np.float64)
            ph1 = expit(params.b + v1 @ params.w)
            m = v0.shape[0]
            gw = (v0.T @ ph0 - v1.T @ ph1) / m
            gb = (ph0 - ph1).mean(axis=0)
            gc = (v0 - v1).mean(axis=0)
            mw = momentum * mw + learning_rate * gw
            mb = momentum * mb + learning_rate * gb
            mc = momentum * mc + learning_rate * gc
            params.w += mw
            params.b += mb
            params.c += mc
    return params


def train_with_tracking(config: TrainConfig, dataset_train: np.ndarray,
                        dataset_val: np.ndarray, seed: int,
                        params0: RbmParams | None = None):
    """CD-1 pretrain, initialization iterations, then the main loop of
    persistent tempered sweeps, weighted PCD gradient steps and smoothed
    log Zhat updates with per-update likelihood tracking.

    Returns (params, TrackTrace, ladder, final chain states)."""
    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(9,)))
    M = dataset_train.shape[1]
    if params0 is None:
        params = RbmParams(rng.normal(0.0, config.weight_scale, (M, config.n_hidden)),
                           np.zeros(M), np.zeros(config.n_hidden))
    else:
        params = params0.copy()
    base = base_from_data(dataset_train)

    if config.cd1_pretrain_epochs > 0 and config.learning_rate > 0:
        cd1_pretrain(params, dataset_train, config.cd1_pretrain_epochs,
                     config.batch_size, config.learning_rate, config.momentum, rng)

    ladder = TemperatureLadder.make(config.K, prior="exp",
                                    prior_exponent=config.prior_exponent)
    model = RbmModel(params, base)
    ladder, report, states = init_iterations(
        model, ladder, n_iters_max=config.init_iters,
        sweeps_per_iter=config.init_sweeps_per_iter,
        n_chains=config.n_chains, seed=seed)

    mw = np.zeros_like(params.w)
    mb = np.zeros_like(params.b)
    mc = np.zeros_like(params.c)
    trace = TrackTrace()
    n = dataset_train.shape[0]
    n_batches = max(1, n // config.batch_size)
    t = 0
    xs = [s.x for s in states]
    ks = [s.beta_index for s in states]
    for _epoch in range(config.epochs):
        order = rng.permutation(n)
        for bi in range(n_batches):
            batch = dataset_train[order[bi * config.batch_size:(bi + 1) * config.batch_size]]
            stats, states = run_chains(model, ladder, config.n_chains,
                                       config.sweeps_per_update, seed,
                                       stream=(3, t), init_states=xs,
                                       init_betas=ks)
            xs = [s.x for s in states]
            ks = [s.beta_index for s in states]
            chains = [ChainState(x, k, i) for i, (x, k) in enumerate(zip(xs, ks))]

            if config.learning_rate > 0:
                gw, gb, gc, _ = pcd_gradient(params, base, ladder, chains, batch)
                mw = config.momentum * mw + config.learning_rate * gw
                mb = config.momentum * mb + config.learning_rate * gb
                mc = config.momentum * mc + config.learning_rate * gc
                params.w += mw
                params.b += mb
                params.c += mc

            ladder, _ = smoothed_zhat_update(ladder, stats, config.alpha)
            lz = float(ladder.log_zhat[-1])
            train_ll = float(np.mean(rbm_free_energy(params, dataset_train)) - lz)
            val_ll = float(np.mean(rbm_free_energy(params, dataset_val)) - lz)
            trace.append(t, lz, train_ll, val_ll)
            t += 1
            if abs(lz) > DIVERGENCE_GUARD:
                trace.aborted = True
                return params, trace, ladder, chains
            if (config.checkpoint_every > 0 and config.checkpoint_path
                    and t % config.checkpoint_every == 0):
                save_rbm(config.checkpoint_path, params)
    chains = [ChainState(x, k, i) for i, (x, k) in enumerate(zip(xs, ks))]
    return params, trace, ladder, chains
