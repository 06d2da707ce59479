"""Binary restricted Boltzmann machine as a tempered target.

The unnormalized target over the joint (v, h) is
log f(v, h) = v.c + v.W.h + h.b.  The tempering base is a product
Bernoulli over v times a uniform law over h, p1(v, h) = p1(v) * 2^-J,
which is normalized (Z at beta=0 is exactly 1) and keeps closed-form
block-Gibbs conditionals at every beta.

Small instances (min(M, J) <= 25) have an exact partition function by
enumerating the smaller layer, which is the ground-truth oracle used
throughout the tests.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np
from scipy.special import expit, logit as sp_logit, logsumexp

from ._kernel import get_kernel
from .core import TemperedModel
from .tempering import SampleLog

BASE_CLIP = 1e-4
ENUM_LIMIT = 25
RBM_MAGIC = b"RBMPARM1"


@dataclass
class RbmParams:
    """Weights and biases: w is M x J, c the visible bias, b the hidden bias."""

    w: np.ndarray
    c: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        self.w = np.ascontiguousarray(self.w, dtype=np.float64)
        self.c = np.ascontiguousarray(self.c, dtype=np.float64)
        self.b = np.ascontiguousarray(self.b, dtype=np.float64)
        if self.w.shape != (len(self.c), len(self.b)):
            raise ValueError("w must be (len(c), len(b))")
        for a in (self.w, self.c, self.b):
            if not np.all(np.isfinite(a)):
                raise ValueError("parameters must be finite")

    @property
    def n_visible(self) -> int:
        return len(self.c)

    @property
    def n_hidden(self) -> int:
        return len(self.b)

    def copy(self) -> "RbmParams":
        return RbmParams(self.w.copy(), self.c.copy(), self.b.copy())


@dataclass
class RbmState:
    """Joint state; entries are 0/1 stored as float64 for fast matvecs."""

    v: np.ndarray
    h: np.ndarray

    def __post_init__(self):
        self.v = np.ascontiguousarray(self.v, dtype=np.float64)
        self.h = np.ascontiguousarray(self.h, dtype=np.float64)
        if not (np.isin(self.v, (0.0, 1.0)).all() and np.isin(self.h, (0.0, 1.0)).all()):
            raise ValueError("state entries must be 0 or 1")


@dataclass
class BaseBernoulli:
    """Product-Bernoulli base over v; probabilities clipped away from 0/1 so
    log p1 stays finite on every bit pattern."""

    p: np.ndarray

    def __post_init__(self):
        self.p = np.clip(np.asarray(self.p, dtype=np.float64), BASE_CLIP, 1.0 - BASE_CLIP)

    @property
    def log_p(self):
        return np.log(self.p)

    @property
    def log_1mp(self):
        return np.log1p(-self.p)

    @property
    def logit_p(self):
        return sp_logit(self.p)


def uniform_base(n_visible: int) -> BaseBernoulli:
    return BaseBernoulli(np.full(n_visible, 0.5))


def base_from_data(dataset: np.ndarray, clip: float = BASE_CLIP) -> BaseBernoulli:
    """Base matching the column marginals of a binarized dataset."""
    p = np.clip(np.asarray(dataset, dtype=np.float64).mean(axis=0), clip, 1.0 - clip)
    return BaseBernoulli(p)


def random_rbm(n_visible: int, n_hidden: int, seed: int,
               scale: float = 0.05) -> RbmParams:
    rng = np.random.default_rng(seed)
    return RbmParams(rng.normal(0.0, scale, (n_visible, n_hidden)),
                     rng.normal(0.0, scale, n_visible),
                     rng.normal(0.0, scale, n_hidden))


class RbmModel(TemperedModel):
    """Tempered joint-(v, h) RBM with a product-Bernoulli base."""

    def __init__(self, params: RbmParams, base: BaseBernoulli):
        if len(base.p) != params.n_visible:
            raise ValueError("base dimension must match visible layer")
        self.params = params
        self.base = base
        self._log_p = base.log_p
        self._log_1mp = base.log_1mp
        self._logit_p = base.logit_p
        # uniform hidden part of the base: each h_j is Bernoulli(1/2)
        self._log_p1_const = -params.n_hidden * np.log(2.0)

    def log_f(self, x: RbmState) -> float:
        p = self.params
        return float(x.v @ (p.c + p.w @ x.h) + x.h @ p.b)

    def log_p1(self, x: RbmState) -> float:
        return float(x.v @ self._log_p + (1.0 - x.v) @ self._log_1mp
                     + self._log_p1_const)

    def delta(self, x: RbmState) -> float:
        return self.log_f(x) - self.log_p1(x)

    def transition(self, x: RbmState, beta: float, rng: np.random.Generator) -> RbmState:
        """One tempered block-Gibbs sweep (h | v then v | h)."""
        p = self.params
        u_h = rng.random(p.n_hidden)
        u_v = rng.random(p.n_visible)
        h = (u_h < expit(beta * (p.b + x.v @ p.w))).astype(np.float64)
        av = p.c + p.w @ h
        v = (u_v < expit(beta * av + (1.0 - beta) * self._logit_p)).astype(np.float64)
        return RbmState(v, h)

    def sample_p1(self, rng: np.random.Generator) -> RbmState:
        p = self.params
        v = (rng.random(p.n_visible) < self.base.p).astype(np.float64)
        h = (rng.random(p.n_hidden) < 0.5).astype(np.float64)
        return RbmState(v, h)

    def sample_target_exact(self, rng: np.random.Generator) -> RbmState:
        """Exact joint draw by enumerating the hidden layer (J <= 25)."""
        v = sample_visible_exact(self.params, 1, rng)[0]
        h = (rng.random(self.params.n_hidden)
             < expit(self.params.b + v @ self.params.w)).astype(np.float64)
        return RbmState(v, h)

    # fast path used by the tempering engine
    def run_sweeps(self, ladder, x: RbmState, k0: int, n_sweeps: int,
                   rng: np.random.Generator, stats,
                   record_samples: bool = False,
                   record_conditionals: bool = False,
                   backend: str = "auto"):
        p = self.params
        M, J, K = p.n_visible, p.n_hidden, ladder.K
        U = rng.random(n_sweeps * (J + M + 1)).reshape(n_sweeps, J + M + 1)
        v = x.v.copy()
        h = x.h.copy()
        nrec = n_sweeps if record_samples else 0
        out_deltas = np.zeros(nrec)
        out_ks = np.zeros(nrec, dtype=np.int64)
        out_conds = np.zeros((nrec if record_conditionals else 0, K))
        kernel = get_kernel(backend)
        k = kernel(p.w, p.c, p.b, self._log_p, self._log_1mp, self._logit_p,
                   self._log_p1_const,
                   ladder.betas, ladder.log_r, ladder.log_zhat,
                   v, h, int(k0), U,
                   stats.cond_sum, stats.delta_weighted, stats.delta_bin_sum,
                   stats.raw_counts, stats.transition_counts, stats.rb_transition,
                   out_deltas, out_ks, out_conds,
                   np.zeros(J), np.zeros(K))
        stats.n_samples += n_sweeps
        log = None
        if record_samples:
            log = SampleLog(out_deltas, out_ks,
                            conditionals=out_conds if record_conditionals else None)
        return RbmState(v, h), int(k), log


# --- exact oracles -----------------------------------------------------------

def _enum_bits(n: int) -> np.ndarray:
    """All 2^n bit patterns as a (2^n, n) float matrix."""
    idx = np.arange(2 ** n, dtype=np.uint32)
    return ((idx[:, None] >> np.arange(n)) & 1).astype(np.float64)


def rbm_free_energy(params: RbmParams, v: np.ndarray) -> np.ndarray:
    """log sum_h f(v, h) for one visible vector or a batch of them."""
    v = np.atleast_2d(np.asarray(v, dtype=np.float64))
    act = params.b + v @ params.w
    f = v @ params.c + np.logaddexp(0.0, act).sum(axis=1)
    return f if f.shape[0] > 1 else f[0]


def rbm_exact_log_z(params: RbmParams) -> float:
    """Exact log Z by enumerating the smaller layer; needs min(M, J) <= 25."""
    M, J = params.n_visible, params.n_hidden
    if min(M, J) > ENUM_LIMIT:
        raise ValueError(f"enumeration infeasible: min(M, J) = {min(M, J)} > {ENUM_LIMIT}")
    if J <= M:
        side, bias, other_bias, w = J, params.b, params.c, params.w
    else:
        side, bias, other_bias, w = M, params.c, params.b, params.w.T
    chunks = []
    batch = 1 << 16
    for start in range(0, 2 ** side, batch):
        stop = min(start + batch, 2 ** side)
        idx = np.arange(start, stop, dtype=np.uint32)
        pats = ((idx[:, None] >> np.arange(side)) & 1).astype(np.float64)
        terms = pats @ bias + np.logaddexp(0.0, other_bias + pats @ w.T).sum(axis=1)
        chunks.append(logsumexp(terms))
    return float(logsumexp(chunks))


def data_log_likelihood(params: RbmParams, log_z: float, dataset: np.ndarray) -> float:
    """Mean log-likelihood of the rows of a binarized dataset."""
    f = rbm_free_energy(params, dataset)
    return float(np.mean(f) - log_z)


def hidden_log_weights(params: RbmParams) -> np.ndarray:
    """log sum_v f(v, h) for every hidden pattern (J <= 25)."""
    J = params.n_hidden
    if J > ENUM_LIMIT:
        raise ValueError("hidden layer too large to enumerate")
    H = _enum_bits(J)
    return H @ params.b + np.logaddexp(0.0, params.c + H @ params.w.T).sum(axis=1)


def sample_visible_exact(params: RbmParams, n: int,
                         rng: np.random.Generator) -> np.ndarray:
    """Exact draws of v from the RBM marginal via hidden-layer enumeration."""
    lw = hidden_log_weights(params)
    probs = np.exp(lw - logsumexp(lw))
    probs /= probs.sum()
    H = _enum_bits(params.n_hidden)
    out = np.empty((n, params.n_visible))
    which = rng.choice(len(probs), size=n, p=probs)
    for i, hi in enumerate(which):
        pv = expit(params.c + params.w @ H[hi])
        out[i] = rng.random(params.n_visible) < pv
    return out


# --- convenience wrappers matching the operation-level API -------------------

def rbm_delta(params: RbmParams, base: BaseBernoulli, state: RbmState) -> float:
    return RbmModel(params, base).delta(state)


def rbm_transition(params: RbmParams, base: BaseBernoulli, state: RbmState,
                   beta: float, rng: np.random.Generator) -> RbmState:
    return RbmModel(params, base).transition(state, beta, rng)


# --- IDX dataset ingestion ----------------------------------------------------

IDX_IMAGES = 0x00000803
IDX_LABELS = 0x00000801


def load_idx(path) -> np.ndarray:
    """Read a big-endian IDX file (ubyte tensor or label vector)."""
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < 4:
        raise ValueError(f"IDX parse error at byte 0: file shorter than magic")
    magic = struct.unpack(">I", data[:4])[0]
    if magic == IDX_IMAGES:
        ndim = 3
    elif magic == IDX_LABELS:
        ndim = 1
    else:
        raise ValueError(f"IDX parse error at byte 0: bad magic 0x{magic:08x}")
    header = 4 + 4 * ndim
    if len(data) < header:
        raise ValueError(f"IDX parse error at byte {len(data)}: truncated dimension header")
    dims = struct.unpack(f">{ndim}I", data[4:header])
    count = int(np.prod(dims))
    if len(data) != header + count:
        raise ValueError(f"IDX parse error at byte {len(data)}: "
                         f"expected {header + count} bytes, got {len(data)}")
    arr = np.frombuffer(data, dtype=np.uint8, offset=header).reshape(dims)
    if ndim == 3:
        arr = arr.reshape(dims[0], dims[1] * dims[2])
    return arr.copy()


def binarize(dataset: np.ndarray, threshold: float = 0.5) -> np.ndarray:
    """Threshold at a fraction of the dataset maximum (default half)."""
    dataset = np.asarray(dataset)
    cut = threshold * dataset.max()
    return (dataset > cut).astype(np.float64)


def synthetic_patterns(n_visible: int, n_rows: int, n_prototypes: int = 8,
                       flip_prob: float = 0.1, seed: int = 0) -> np.ndarray:
    """Binary dataset of noisy prototype copies, for runs without real data."""
    rng = np.random.default_rng(seed)
    protos = rng.random((n_prototypes, n_visible)) < 0.5
    rows = protos[rng.integers(n_prototypes, size=n_rows)]
    flips = rng.random((n_rows, n_visible)) < flip_prob
    return np.logical_xor(rows, flips).astype(np.float64)


# --- parameter container ------------------------------------------------------

def save_rbm(path, params: RbmParams):
    """RBMPARM1 container: magic, u32 M, u32 J (little-endian), then c, b and
    row-major W as little-endian float64."""
    M, J = params.n_visible, params.n_hidden
    if M == 0 or J == 0:
        raise ValueError("refusing to save zero-dimension parameters")
    with open(path, "wb") as fh:
        fh.write(RBM_MAGIC)
        fh.write(struct.pack("<II", M, J))
        fh.write(params.c.astype("<f8").tobytes())
        fh.write(params.b.astype("<f8").tobytes())
        fh.write(np.ascontiguousarray(params.w).astype("<f8").tobytes())


def load_rbm(path) -> RbmParams:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:8] != RBM_MAGIC:
        raise ValueError(f"RBM parse error: bad magic {data[:8]!r}")
    M, J = struct.unpack("<II", data[8:16])
    expected = 16 + 8 * (M + J + M * J)
    if len(data) != expected:
        raise ValueError(f"RBM parse error: expected {expected} bytes, got {len(data)}")
    body = np.frombuffer(data, dtype="<f8", offset=16)
    c = body[:M]
    b = body[M:M + J]
    w = body[M + J:].reshape(M, J)
    return RbmParams(w.copy(), c.copy(), b.copy())
