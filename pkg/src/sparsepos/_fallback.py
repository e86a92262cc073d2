"""Pure numpy versions of the compiled kernels in ``_core.pyx``.

Sentences are padded into an (N, L, J) batch and swept position by
position, so the Python loop runs over the longest sentence length rather
than over tokens. Outputs match the compiled kernels to rounding.
"""
import numpy as np
from scipy.special import logsumexp


def _pad(log_obs, offsets):
    lengths = np.diff(offsets)
    N, L, J = len(lengths), int(lengths.max()), log_obs.shape[1]
    pos = np.arange(L)
    mask = pos[None, :] < lengths[:, None]
    idx = offsets[:-1, None] + np.minimum(pos[None, :], lengths[:, None] - 1)
    padded = log_obs[idx]
    return padded, mask, lengths, N, L, J


def _unpad(arr, mask):
    return arr[mask]


def forward_backward(log_start, log_trans, log_obs, offsets, want_pairwise=False):
    log_obs = np.asarray(log_obs, dtype=float)
    offsets = np.asarray(offsets, dtype=np.int64)
    obs, mask, lengths, N, L, J = _pad(log_obs, offsets)
    with np.errstate(invalid="ignore"):
        alpha = np.full((N, L, J), -np.inf)
        alpha[:, 0] = log_start[None, :] + obs[:, 0]
        for t in range(1, L):
            nxt = logsumexp(alpha[:, t - 1, :, None] + log_trans[None], axis=1) + obs[:, t]
            alpha[:, t] = np.where(mask[:, t, None], nxt, alpha[:, t - 1])
        last = alpha[np.arange(N), lengths - 1]
        logliks = logsumexp(last, axis=1)

        beta = np.zeros((N, L, J))
        for t in range(L - 2, -1, -1):
            bb = obs[:, t + 1] + beta[:, t + 1]
            prev = logsumexp(log_trans[None] + bb[:, None, :], axis=2)
            live = (t < lengths - 1)[:, None]
            beta[:, t] = np.where(live, prev, 0.0)

        dead = ~np.isfinite(logliks)
        lz = np.where(dead, 0.0, logliks)
        gamma = np.exp(alpha + beta - lz[:, None, None])
        gamma = np.nan_to_num(gamma, nan=0.0)
        gamma[dead] = 0.0
        gamma *= mask[:, :, None]

        pair = np.zeros((N, L, J, J))
        if L > 1:
            pv = (alpha[:, :-1, :, None] + log_trans[None, None]
                  + (obs[:, 1:] + beta[:, 1:])[:, :, None, :] - lz[:, None, None, None])
            pv = np.nan_to_num(np.exp(pv), nan=0.0)
            pv *= mask[:, 1:, None, None]
            pv[dead] = 0.0
            pair[:, 1:] = pv

    start_counts = gamma[:, 0].sum(axis=0)
    trans_counts = pair.sum(axis=(0, 1))
    flat_pair = _unpad(pair, mask) if want_pairwise else None
    g = _unpad(gamma, mask)
    obs_score = float(np.where(g > 0, g * np.where(g > 0, log_obs, 0.0), 0.0).sum())
    return g, start_counts, trans_counts, logliks, flat_pair, obs_score


def viterbi(log_start, log_trans, log_obs, offsets):
    log_obs = np.asarray(log_obs, dtype=float)
    offsets = np.asarray(offsets, dtype=np.int64)
    obs, mask, lengths, N, L, J = _pad(log_obs, offsets)
    delta = np.empty((N, L, J))
    back = np.zeros((N, L, J), dtype=np.int64)
    delta[:, 0] = log_start[None, :] + obs[:, 0]
    for t in range(1, L):
        cand = delta[:, t - 1, :, None] + log_trans[None]
        # argmax returns the first maximum, i.e. the lowest index
        best = cand.argmax(axis=1)
        val = np.take_along_axis(cand, best[:, None, :], axis=1)[:, 0] + obs[:, t]
        live = mask[:, t, None]
        delta[:, t] = np.where(live, val, delta[:, t - 1])
        back[:, t] = best
    last = delta[np.arange(N), lengths - 1]
    scores = last.max(axis=1)
    paths = np.zeros((N, L), dtype=np.int64)
    paths[np.arange(N), lengths - 1] = last.argmax(axis=1)
    for t in range(L - 1, 0, -1):
        live = t <= lengths - 1
        prev = back[np.arange(N), t, paths[:, t]]
        paths[:, t - 1] = np.where(live, prev, paths[:, t - 1])
    return paths[mask], scores


def project_blocks(lam, offsets, sigma):
    lam = np.asarray(lam, dtype=float)
    out = np.maximum(lam, 0.0)
    offsets = np.asarray(offsets, dtype=np.int64)
    sums = np.add.reduceat(out, offsets[:-1], axis=0) if len(lam) else np.zeros((0, lam.shape[1]))
    # reduceat misreports empty segments; blocks are never empty here
    for w in np.nonzero((sums > sigma).any(axis=1))[0]:
        lo, hi = offsets[w], offsets[w + 1]
        block = lam[lo:hi]
        cols = np.nonzero(sums[w] > sigma)[0]
        u = -np.sort(-block[:, cols], axis=0)
        css = np.cumsum(u, axis=0)
        k = np.arange(1, hi - lo + 1)[:, None]
        cond = u - (css - sigma) / k > 0
        rho = (hi - lo) - np.argmax(cond[::-1], axis=0)
        theta = (css[rho - 1, np.arange(len(cols))] - sigma) / rho
        out[lo:hi, cols] = np.maximum(block[:, cols] - theta[None, :], 0.0)
    return out
