"""Simulated-tempering engine: chains, pooled statistics, initialization.

One "sweep" is one model transition at the current beta followed by a
fresh draw of the beta index from its conditional.  Statistics are
accumulated in Rao-Blackwellized form: instead of counting the sampled
beta index, the full conditional vector is added, which dramatically
lowers the variance of the marginal estimates.
"""

from __future__ import annotations

import csv
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .core import TemperatureLadder, TemperedModel, beta_conditional_probs, sample_index


def chain_rng(seed: int, chain_id: int, stream: tuple = ()) -> np.random.Generator:
    """Deterministic per-chain generator, independent across chain ids.

    Counter-based: (seed, *stream, chain_id) keys a SeedSequence, so the
    result does not depend on thread scheduling or launch order.
    """
    ss = np.random.SeedSequence(entropy=seed, spawn_key=(*stream, chain_id))
    return np.random.Generator(np.random.Philox(ss))


@dataclass
class ChainState:
    """Mutable per-chain sampler state."""

    x: object
    beta_index: int
    chain_id: int = 0


@dataclass
class RaoBlackwellStats:
    """Accumulated sufficient statistics of a tempered run.

    cond_sum[k] is the running sum of q(beta_k | x_i); c_hat is its mean.
    raw_counts holds sampled-index visits (the non-RB estimator's input),
    delta_weighted the q(beta_k|x_i) * delta_i sums used by TI-RB,
    delta_bin_sum the per-bin raw delta sums used by plain TI, and
    transition_counts / rb_transition the sampled and Rao-Blackwellized
    beta transition tallies used by the stationary-distribution variants.
    """

    K: int
    cond_sum: np.ndarray = field(default=None)  # type: ignore[assignment]
    raw_counts: np.ndarray = field(default=None)  # type: ignore[assignment]
    delta_weighted: np.ndarray = field(default=None)  # type: ignore[assignment]
    delta_bin_sum: np.ndarray = field(default=None)  # type: ignore[assignment]
    transition_counts: np.ndarray = field(default=None)  # type: ignore[assignment]
    rb_transition: np.ndarray = field(default=None)  # type: ignore[assignment]
    n_samples: int = 0

    def __post_init__(self):
        K = self.K
        if self.cond_sum is None:
            self.cond_sum = np.zeros(K)
        if self.raw_counts is None:
            self.raw_counts = np.zeros(K, dtype=np.int64)
        if self.delta_weighted is None:
            self.delta_weighted = np.zeros(K)
        if self.delta_bin_sum is None:
            self.delta_bin_sum = np.zeros(K)
        if self.transition_counts is None:
            self.transition_counts = np.zeros((K, K), dtype=np.int64)
        if self.rb_transition is None:
            self.rb_transition = np.zeros((K, K))

    @property
    def c_hat(self) -> np.ndarray:
        if self.n_samples == 0:
            raise ValueError("no samples accumulated")
        return self.cond_sum / self.n_samples

    def update(self, cond: np.ndarray, delta: float, prev_k: int, new_k: int):
        self.cond_sum += cond
        self.delta_weighted += cond * delta
        self.raw_counts[new_k] += 1
        self.delta_bin_sum[new_k] += delta
        self.transition_counts[prev_k, new_k] += 1
        self.rb_transition[prev_k] += cond
        self.n_samples += 1

    def merge(self, other: "RaoBlackwellStats"):
        if other.K != self.K:
            raise ValueError("cannot merge stats of different K")
        self.cond_sum += other.cond_sum
        self.raw_counts += other.raw_counts
        self.delta_weighted += other.delta_weighted
        self.delta_bin_sum += other.delta_bin_sum
        self.transition_counts += other.transition_counts
        self.rb_transition += other.rb_transition
        self.n_samples += other.n_samples

    @staticmethod
    def pooled(parts: Sequence["RaoBlackwellStats"]) -> "RaoBlackwellStats":
        out = RaoBlackwellStats(parts[0].K)
        for p in parts:
            out.merge(p)
        return out


@dataclass
class SampleLog:
    """Per-sample record of (delta, sampled beta index) and optionally the
    conditional vectors and the ladder snapshot each sample was drawn under."""

    deltas: np.ndarray
    beta_indices: np.ndarray
    conditionals: Optional[np.ndarray] = None
    zhat_versions: Optional[np.ndarray] = None
    snapshots: Optional[list] = None  # list of TemperatureLadder

    def __post_init__(self):
        self.deltas = np.asarray(self.deltas, dtype=np.float64)
        self.beta_indices = np.asarray(self.beta_indices, dtype=np.int64)
        if self.deltas.shape != self.beta_indices.shape:
            raise ValueError("deltas and beta_indices must align")

    @property
    def n(self) -> int:
        return len(self.deltas)

    @staticmethod
    def concatenate(parts: Sequence["SampleLog"]) -> "SampleLog":
        return SampleLog(
            np.concatenate([p.deltas for p in parts]),
            np.concatenate([p.beta_indices for p in parts]),
            conditionals=(np.concatenate([p.conditionals for p in parts])
                          if parts[0].conditionals is not None else None),
        )


@dataclass
class InitReport:
    """Diagnostics of the initialization iterations."""

    iterations_used: int
    max_abs_gap: float
    zhat_trajectory: list
    converged: bool


def gibbs_sweep(model: TemperedModel, ladder: TemperatureLadder,
                state: ChainState, stats: RaoBlackwellStats,
                rng: np.random.Generator,
                log: Optional[list] = None) -> ChainState:
    """One x-transition at the current beta plus one beta draw; accumulates
    the full conditional vector into the stats."""
    x = model.transition(state.x, float(ladder.betas[state.beta_index]), rng)
    d = model.delta(x)
    cond = beta_conditional_probs(ladder, d)
    new_k = sample_index(cond, rng.random())
    stats.update(cond, d, state.beta_index, new_k)
    if log is not None:
        log.append((d, new_k, cond))
    state.x = x
    state.beta_index = new_k
    return state


def _run_one_chain(model, ladder, n_sweeps, seed, stream, chain_id,
                   init_x, init_beta, record_samples, record_conditionals):
    rng = chain_rng(seed, chain_id, stream)
    x = init_x if init_x is not None else model.sample_p1(rng)
    k0 = init_beta if init_beta is not None else int(rng.integers(ladder.K))
    stats = RaoBlackwellStats(ladder.K)

    fast = getattr(model, "run_sweeps", None)
    if fast is not None:
        x, k, samplelog = fast(ladder, x, k0, n_sweeps, rng, stats,
                               record_samples=record_samples,
                               record_conditionals=record_conditionals)
        state = ChainState(x, k, chain_id)
        return stats, state, samplelog

    state = ChainState(x, k0, chain_id)
    log = [] if record_samples else None
    for _ in range(n_sweeps):
        gibbs_sweep(model, ladder, state, stats, rng, log)
    samplelog = None
    if record_samples:
        deltas = np.array([r[0] for r in log])
        ks = np.array([r[1] for r in log])
        conds = np.array([r[2] for r in log]) if record_conditionals else None
        samplelog = SampleLog(deltas, ks, conditionals=conds)
    return stats, state, samplelog


def run_chains(model: TemperedModel, ladder: TemperatureLadder,
               n_chains: int, n_sweeps: int, seed: int,
               stream: tuple = (),
               init_states: Optional[Sequence] = None,
               init_betas: Optional[Sequence[int]] = None,
               record_samples: bool = False,
               record_conditionals: bool = False,
               n_threads: int = 1):
    """Run n_chains independent tempered chains and pool their statistics.

    Each chain draws from its own (seed, *stream, chain_id) substream, so
    the pooled output is identical for a fixed seed no matter how the
    chains are scheduled.  Returns (pooled stats, final states[, SampleLog]).
    """
    if n_chains < 1 or n_sweeps < 1:
        raise ValueError("n_chains and n_sweeps must be >= 1")

    def job(cid):
        ix = init_states[cid] if init_states is not None else None
        ib = int(init_betas[cid]) if init_betas is not None else None
        return _run_one_chain(model, ladder, n_sweeps, seed, stream, cid,
                              ix, ib, record_samples, record_conditionals)

    if n_threads > 1:
        with ThreadPoolExecutor(max_workers=n_threads) as pool:
            results = list(pool.map(job, range(n_chains)))
    else:
        results = [job(cid) for cid in range(n_chains)]

    stats = RaoBlackwellStats.pooled([r[0] for r in results])
    states = [r[1] for r in results]
    if record_samples:
        samples = SampleLog.concatenate([r[2] for r in results])
        return stats, states, samples
    return stats, states


def init_iterations(model: TemperedModel, ladder: TemperatureLadder,
                    n_iters_max: int = 10, sweeps_per_iter: int = 50,
                    n_chains: int = 100, threshold: Optional[float] = None,
                    seed: int = 0, n_threads: int = 1):
    """Alternate short runs with full log_zhat refreshes until c_hat ~ r.

    Chains keep their x between iterations but restart from uniformly
    random beta indices; statistics are discarded after each refresh.
    Returns (updated ladder, InitReport, final chain states).
    """
    from .estimators import rts  # local import; estimators depends on this module

    if threshold is None:
        threshold = 0.1 / ladder.K
    if threshold <= 0:
        raise ValueError("threshold must be positive")

    ladder = ladder.copy()
    states = None
    trajectory = []
    gap = np.inf
    iters = 0
    for it in range(n_iters_max):
        init_x = [s.x for s in states] if states is not None else None
        # stream id 1 marks initialization; the main run uses a disjoint id
        stats, states = run_chains(model, ladder, n_chains, sweeps_per_iter,
                                   seed, stream=(1, it), init_states=init_x,
                                   n_threads=n_threads)
        gap = float(np.max(np.abs(ladder.r - stats.c_hat)))
        ladder = ladder.with_log_zhat(rts(ladder, stats).log_z)
        trajectory.append(ladder.log_zhat.copy())
        iters = it + 1
        if gap < threshold:
            break
    report = InitReport(iterations_used=iters, max_abs_gap=gap,
                        zhat_trajectory=trajectory,
                        converged=gap < threshold)
    return ladder, report, states


def empirical_transition_matrix(stats: RaoBlackwellStats):
    """Row-normalized sampled beta-transition matrix.

    Rows with zero visits are emitted uniform and their indices returned
    as a warning flag; this is a mixing diagnostic, never an estimator
    input.  Returns (matrix, unvisited_row_indices).
    """
    counts = stats.transition_counts.astype(np.float64)
    row_sums = counts.sum(axis=1)
    unvisited = np.flatnonzero(row_sums == 0)
    P = np.empty_like(counts)
    for j in range(stats.K):
        if row_sums[j] == 0:
            P[j] = 1.0 / stats.K
        else:
            P[j] = counts[j] / row_sums[j]
    return P, unvisited


def write_stats_csv(path, ladder: TemperatureLadder, stats: RaoBlackwellStats):
    """Pooled statistics as CSV: k, beta, r, c_hat, raw_count, log_zhat."""
    c = stats.c_hat
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["k", "beta", "r", "c_hat", "raw_count", "log_zhat"])
        for k in range(ladder.K):
            w.writerow([k, repr(float(ladder.betas[k])), repr(float(ladder.r[k])),
                        repr(float(c[k])), int(stats.raw_counts[k]),
                        repr(float(ladder.log_zhat[k]))])


def write_transitions_csv(path, stats: RaoBlackwellStats):
    P, unvisited = empirical_transition_matrix(stats)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["from_k", "to_k", "prob", "count", "row_unvisited"])
        for j in range(stats.K):
            flag = int(j in set(unvisited.tolist()))
            for k in range(stats.K):
                w.writerow([j, k, repr(float(P[j, k])),
                            int(stats.transition_counts[j, k]), flag])
