# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled inner loop for tempered block-Gibbs sweeps on a binary RBM.

One sweep = resample h | v, resample v | h (both tempered), compute the
energy gap delta, draw a new ladder index from its conditional, and
accumulate the Rao-Blackwellized statistics.  All randomness comes from
the pre-generated uniform block U, so the pure-Python fallback consumes
an identical stream.
"""

from libc.math cimport exp, INFINITY


def run_rbm_sweeps(double[:, ::1] W, double[::1] c, double[::1] b,
                   double[::1] log_p, double[::1] log_1mp, double[::1] logit_p,
                   double log_p1_const,
                   double[::1] betas, double[::1] log_r, double[::1] log_zhat,
                   double[::1] v, double[::1] h, int k0,
                   double[:, ::1] U,
                   double[::1] cond_sum, double[::1] delta_weighted,
                   double[::1] delta_bin_sum,
                   long long[::1] raw_counts, long long[:, ::1] transition_counts,
                   double[:, ::1] rb_transition,
                   double[::1] out_deltas, long long[::1] out_ks,
                   double[:, ::1] out_conds,
                   double[::1] ah, double[::1] cond):
    cdef Py_ssize_t M = c.shape[0]
    cdef Py_ssize_t J = b.shape[0]
    cdef Py_ssize_t K = betas.shape[0]
    cdef Py_ssize_t n_sweeps = U.shape[0]
    cdef Py_ssize_t t, i, j, kk
    cdef int k = k0, chosen
    cdef double beta, av, a, p, logf, logp1, d, m, s, acc, u, w
    cdef bint record = out_deltas.shape[0] > 0
    cdef bint record_conds = out_conds.shape[0] > 0

    with nogil:
        for t in range(n_sweeps):
            beta = betas[k]

            # h | v
            for j in range(J):
                ah[j] = b[j]
            for i in range(M):
                if v[i] > 0.5:
                    for j in range(J):
                        ah[j] += W[i, j]
            for j in range(J):
                p = 1.0 / (1.0 + exp(-beta * ah[j]))
                h[j] = 1.0 if U[t, j] < p else 0.0

            # v | h, accumulating log f and log p1 on the fly
            logf = 0.0
            logp1 = log_p1_const
            for i in range(M):
                av = c[i]
                for j in range(J):
                    if h[j] > 0.5:
                        av += W[i, j]
                a = beta * av + (1.0 - beta) * logit_p[i]
                p = 1.0 / (1.0 + exp(-a))
                if U[t, J + i] < p:
                    v[i] = 1.0
                    logf += av
                    logp1 += log_p[i]
                else:
                    v[i] = 0.0
                    logp1 += log_1mp[i]
            for j in range(J):
                if h[j] > 0.5:
                    logf += b[j]
            d = logf - logp1

            # conditional over ladder rungs, max-shifted
            m = -INFINITY
            for kk in range(K):
                a = betas[kk] * d + log_r[kk] - log_zhat[kk]
                cond[kk] = a
                if a > m:
                    m = a
            s = 0.0
            for kk in range(K):
                w = exp(cond[kk] - m)
                cond[kk] = w
                s += w
            for kk in range(K):
                cond[kk] /= s

            # inverse-CDF draw of the new index
            u = U[t, J + M]
            acc = 0.0
            chosen = K - 1
            for kk in range(K):
                acc += cond[kk]
                if u < acc:
                    chosen = kk
                    break

            for kk in range(K):
                cond_sum[kk] += cond[kk]
                delta_weighted[kk] += cond[kk] * d
                rb_transition[k, kk] += cond[kk]
            raw_counts[chosen] += 1
            delta_bin_sum[chosen] += d
            transition_counts[k, chosen] += 1

            if record:
                out_deltas[t] = d
                out_ks[t] = chosen
                if record_conds:
                    for kk in range(K):
                        out_conds[t, kk] = cond[kk]
            k = chosen

    return k
