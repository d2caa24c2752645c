"""Pure-Python implementations of the numeric kernels.

These are the fallback when the compiled extension is unavailable and the
reference the compiled versions are tested against. Signatures and outputs
are identical between the two backends.
"""
import math

import numpy as np

NEG_INF = float("-inf")
LOG_FLOOR = 1e-12


def _logaddexp(a, b):
    if a == NEG_INF:
        return b
    if b == NEG_INF:
        return a
    if a > b:
        return a + math.log1p(math.exp(b - a))
    return b + math.log1p(math.exp(a - b))


def edit_ops(ref, hyp):
    """Levenshtein alignment counts between two integer sequences.

    Among all minimum-cost alignments the one with the most substitutions is
    chosen, which makes (S, I, D) unique: I and D then follow from the cost
    and the length difference.

    Returns:
        (substitutions, insertions, deletions)
    """
    ref = [int(v) for v in ref]
    hyp = [int(v) for v in hyp]
    n, m = len(ref), len(hyp)
    # key = cost * K - subs, minimised; K exceeds any possible subs count
    K = min(n, m) + 1
    prev = [j * K for j in range(m + 1)]
    prev_s = [0] * (m + 1)
    for i in range(1, n + 1):
        cur = [i * K] + [0] * m
        cur_s = [0] * (m + 1)
        r = ref[i - 1]
        for j in range(1, m + 1):
            if r == hyp[j - 1]:
                best, bs = prev[j - 1], prev_s[j - 1]
            else:
                best, bs = prev[j - 1] + K - 1, prev_s[j - 1] + 1
            cand = prev[j] + K
            if cand < best:
                best, bs = cand, prev_s[j]
            cand = cur[j - 1] + K
            if cand < best:
                best, bs = cand, cur_s[j - 1]
            cur[j] = best
            cur_s[j] = bs
        prev, prev_s = cur, cur_s
    subs = prev_s[m]
    cost = (prev[m] + subs) // K
    diff = m - n
    ins = (cost - subs + diff) // 2
    dels = (cost - subs - diff) // 2
    return subs, ins, dels


def rnnt_loglik_grad(lp_blank, lp_emit, t_lens, u_lens):
    """Forward-backward over padded transducer lattices.

    Args:
        lp_blank: (B, T, U+1) blank log-probabilities.
        lp_emit: (B, T, U) log-probability of emitting the next reference label.
        t_lens, u_lens: valid frame / label counts per batch entry.

    Returns:
        (loglik[B], d loglik / d lp_blank, d loglik / d lp_emit)
    """
    lp_blank = np.asarray(lp_blank, dtype=np.float64)
    lp_emit = np.asarray(lp_emit, dtype=np.float64)
    B = lp_blank.shape[0]
    loglik = np.zeros(B)
    g_blank = np.zeros_like(lp_blank)
    g_emit = np.zeros_like(lp_emit)
    for b in range(B):
        T = int(t_lens[b])
        U = int(u_lens[b])
        pb = lp_blank[b]
        pe = lp_emit[b]
        alpha = [[NEG_INF] * (U + 1) for _ in range(T)]
        beta = [[NEG_INF] * (U + 1) for _ in range(T)]
        alpha[0][0] = 0.0
        for t in range(T):
            for u in range(U + 1):
                if t == 0 and u == 0:
                    continue
                a = NEG_INF
                if t > 0:
                    a = alpha[t - 1][u] + pb[t - 1, u]
                if u > 0:
                    a = _logaddexp(a, alpha[t][u - 1] + pe[t, u - 1])
                alpha[t][u] = a
        beta[T - 1][U] = pb[T - 1, U]
        for t in range(T - 1, -1, -1):
            for u in range(U, -1, -1):
                if t == T - 1 and u == U:
                    continue
                v = NEG_INF
                if t < T - 1:
                    v = beta[t + 1][u] + pb[t, u]
                if u < U:
                    v = _logaddexp(v, beta[t][u + 1] + pe[t, u])
                beta[t][u] = v
        ll = alpha[T - 1][U] + pb[T - 1, U]
        loglik[b] = ll
        for t in range(T):
            for u in range(U + 1):
                if t < T - 1:
                    g_blank[b, t, u] = math.exp(alpha[t][u] + pb[t, u] + beta[t + 1][u] - ll)
                elif u == U:
                    g_blank[b, t, u] = math.exp(alpha[t][u] + pb[t, u] - ll)
                if u < U:
                    g_emit[b, t, u] = math.exp(alpha[t][u] + pe[t, u] + beta[t][u + 1] - ll)
    return loglik, g_blank, g_emit


def ibm2_estep(src_ids, src_off, tgt_ids, tgt_off, table, tension, null_prob):
    """One E-step of the diagonally-biased alignment model.

    `table[e, f]` holds t(f | e) with row 0 reserved for the null source word;
    source ids in `src_ids` are already shifted by one. Sentence k spans
    `src_ids[src_off[k]:src_off[k+1]]` (likewise for targets).

    Returns:
        (expected counts with the shape of `table`, corpus log-likelihood)
    """
    table = np.asarray(table, dtype=np.float64)
    counts = np.zeros_like(table)
    loglik = 0.0
    n_pairs = len(src_off) - 1
    for k in range(n_pairs):
        src = src_ids[src_off[k]:src_off[k + 1]]
        tgt = tgt_ids[tgt_off[k]:tgt_off[k + 1]]
        n = len(src)
        m = len(tgt)
        post = [0.0] * n
        for j in range(m):
            f = int(tgt[j])
            rel = (j + 1) / m
            z = 0.0
            for i in range(n):
                w = math.exp(-tension * abs((i + 1) / n - rel))
                post[i] = w
                z += w
            p_null = null_prob * table[0, f]
            denom = p_null
            for i in range(n):
                post[i] = (1.0 - null_prob) * post[i] / z * table[int(src[i]), f]
                denom += post[i]
            loglik += math.log(max(denom, LOG_FLOOR))
            if denom <= 0.0:
                continue
            counts[0, f] += p_null / denom
            for i in range(n):
                counts[int(src[i]), f] += post[i] / denom
    return counts, loglik
