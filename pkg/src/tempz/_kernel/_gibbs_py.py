"""Pure-numpy fallback for the tempered RBM sweep loop.

Consumes the same pre-generated uniform block as the compiled kernel
(per sweep: J uniforms for h, M for v, one for the ladder index), so
both backends follow the same random trajectory up to floating-point
rounding of the activations.
"""

from __future__ import annotations

import numpy as np
from scipy.special import expit


def run_rbm_sweeps(W, c, b, log_p, log_1mp, logit_p, log_p1_const,
                   betas, log_r, log_zhat,
                   v, h, k0, U,
                   cond_sum, delta_weighted, delta_bin_sum,
                   raw_counts, transition_counts, rb_transition,
                   out_deltas, out_ks, out_conds,
                   ah, cond):
    K = len(betas)
    J = len(b)
    M = len(c)
    record = out_deltas.shape[0] > 0
    record_conds = out_conds.shape[0] > 0
    k = int(k0)
    for t in range(U.shape[0]):
        beta = betas[k]
        h[:] = (U[t, :J] < expit(beta * (b + v @ W))).astype(np.float64)
        av = c + W @ h
        pv = expit(beta * av + (1.0 - beta) * logit_p)
        v[:] = (U[t, J:J + M] < pv).astype(np.float64)
        logf = v @ av + h @ b
        logp1 = v @ log_p + (1.0 - v) @ log_1mp + log_p1_const
        d = logf - logp1

        logits = betas * d + log_r - log_zhat
        logits -= logits.max()
        w = np.exp(logits)
        cond[:] = w / w.sum()

        u = U[t, J + M]
        chosen = int(np.searchsorted(np.cumsum(cond), u, side="right"))
        chosen = min(chosen, K - 1)

        cond_sum += cond
        delta_weighted += cond * d
        rb_transition[k] += cond
        raw_counts[chosen] += 1
        delta_bin_sum[chosen] += d
        transition_counts[k, chosen] += 1

        if record:
            out_deltas[t] = d
            out_ks[t] = chosen
            if record_conds:
                out_conds[t] = cond
        k = chosen
    return k
