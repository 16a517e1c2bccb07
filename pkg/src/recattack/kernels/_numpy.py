"""Pure-numpy reference implementations of the hot kernels.

Semantics are batch-accumulated SGD: within a batch every gradient is
evaluated at the pre-batch parameters, then contributions are applied in
sample order (``np.add.at``).  The numba backend implements the same update
order, so both backends are deterministic under a fixed seed and agree to
float rounding.
"""

import numpy as np


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def _softplus(x):
    # log(1 + e^x), stable for large |x|
    return np.logaddexp(0.0, x)


def _row_normed(g):
    norms = np.linalg.norm(g, axis=1, keepdims=True)
    return np.divide(g, norms, out=np.zeros_like(g), where=norms > 0)


def bpr_mf_epoch(user_emb, item_emb, users, pos, neg, lr, reg, batch_size,
                 adv_eps):
    """One BPR epoch over pre-sampled (user, pos, neg) triples. In place.

    ``adv_eps`` > 0 adds a worst-case perturbation (loss-gradient direction,
    row norm adv_eps) to the touched embeddings before the loss; the L2
    penalty stays on the clean rows. Returns the mean loss, evaluated
    before each batch update.
    """
    total = 0.0
    n = users.shape[0]
    for start in range(0, n, batch_size):
        ub = users[start:start + batch_size]
        ib = pos[start:start + batch_size]
        jb = neg[start:start + batch_size]
        eu = user_emb[ub]
        ei = item_emb[ib]
        ej = item_emb[jb]
        if adv_eps > 0.0:
            x0 = np.einsum("ij,ij->i", eu, ei - ej)
            s0 = _sigmoid(-x0)[:, None]
            du = -s0 * (ei - ej)          # dL/de_u at the clean point
            di = -s0 * eu
            dj = s0 * eu
            eu = eu + adv_eps * _row_normed(du)
            ei = ei + adv_eps * _row_normed(di)
            ej = ej + adv_eps * _row_normed(dj)
        diff = ei - ej
        x = np.einsum("ij,ij->i", eu, diff)
        s = _sigmoid(-x)
        total += float(np.sum(_softplus(-x)))
        eu0 = user_emb[ub]
        ei0 = item_emb[ib]
        ej0 = item_emb[jb]
        total += reg * float(np.sum(eu0 * eu0) + np.sum(ei0 * ei0)
                             + np.sum(ej0 * ej0))
        gu = s[:, None] * diff - 2.0 * reg * eu0
        gi = s[:, None] * eu - 2.0 * reg * ei0
        gj = -s[:, None] * eu - 2.0 * reg * ej0
        np.add.at(user_emb, ub, lr * gu)
        np.add.at(item_emb, ib, lr * gi)
        np.add.at(item_emb, jb, lr * gj)
    return total / max(n, 1)


def sbpr_epoch(user_emb, item_emb, users, pos, soc, neg, has_soc, lr, reg,
               batch_size):
    """BPR epoch with social-feedback triples.

    Where ``has_soc`` is set the sample ranks pos > soc > neg (two pairwise
    terms); otherwise it falls back to plain pos > neg.
    """
    total = 0.0
    n = users.shape[0]
    for start in range(0, n, batch_size):
        ub = users[start:start + batch_size]
        ib = pos[start:start + batch_size]
        kb = soc[start:start + batch_size]
        jb = neg[start:start + batch_size]
        hb = has_soc[start:start + batch_size]
        eu = user_emb[ub]
        ei = item_emb[ib]
        ek = item_emb[kb]
        ej = item_emb[jb]

        # pos > soc > neg where social feedback exists, else pos > neg
        first = np.where(hb[:, None], ek, ej)
        x1 = np.einsum("ij,ij->i", eu, ei - first)
        s1 = _sigmoid(-x1)
        x2 = np.einsum("ij,ij->i", eu, ek - ej)
        s2 = np.where(hb, _sigmoid(-x2), 0.0)

        total += float(np.sum(_softplus(-x1)))
        total += float(np.sum(np.where(hb, _softplus(-x2), 0.0)))
        total += reg * float(np.sum(eu * eu) + np.sum(ei * ei) + np.sum(ej * ej)
                             + np.sum(np.where(hb[:, None], ek * ek, 0.0)))

        gu = (s1[:, None] * (ei - first) + s2[:, None] * (ek - ej)
              - 2.0 * reg * eu)
        gi = s1[:, None] * eu - 2.0 * reg * ei
        gk = np.where(hb[:, None],
                      (s2 - s1)[:, None] * eu - 2.0 * reg * ek, 0.0)
        gj = np.where(hb[:, None], -s2[:, None] * eu,
                      -s1[:, None] * eu) - 2.0 * reg * ej
        np.add.at(user_emb, ub, lr * gu)
        np.add.at(item_emb, ib, lr * gi)
        np.add.at(item_emb, kb, lr * gk)
        np.add.at(item_emb, jb, lr * gj)
    return total / max(n, 1)


def sgns_epoch(emb_in, emb_out, centers, contexts, negatives, lr, batch_size):
    """Skip-gram negative-sampling epoch over pre-built pairs. In place.

    ``negatives`` has one row of negative node ids per pair.
    """
    total = 0.0
    n_pairs = centers.shape[0]
    for start in range(0, n_pairs, batch_size):
        cb = centers[start:start + batch_size]
        ob = contexts[start:start + batch_size]
        nb = negatives[start:start + batch_size]
        vc = emb_in[cb]
        vo = emb_out[ob]
        vn = emb_out[nb]                       # (B, K, d)

        z = np.einsum("ij,ij->i", vc, vo)
        zn = np.einsum("ij,ikj->ik", vc, vn)
        g = _sigmoid(z) - 1.0                  # d(-ln sigma(z))/dz
        gn = _sigmoid(zn)                      # d(-ln sigma(-zn))/dzn
        total += float(np.sum(_softplus(-z)) + np.sum(_softplus(zn)))

        gin = g[:, None] * vo + np.einsum("ik,ikj->ij", gn, vn)
        np.add.at(emb_in, cb, -lr * gin)
        np.add.at(emb_out, ob, -lr * (g[:, None] * vc))
        flat_n = nb.reshape(-1)
        flat_g = (gn[:, :, None] * vc[:, None, :]).reshape(flat_n.shape[0], -1)
        np.add.at(emb_out, flat_n, -lr * flat_g)
    return total / max(n_pairs, 1)


def csr_matvec(indptr, indices, weights, x):
    """Sparse row-weighted sum: out[r] = sum_c w[rc] * x[c]. x is (n, d)."""
    out = np.zeros((indptr.shape[0] - 1, x.shape[1]), dtype=x.dtype)
    rows = np.repeat(np.arange(indptr.shape[0] - 1), np.diff(indptr))
    np.add.at(out, rows, weights[:, None] * x[indices])
    return out


def scatter_add_rows(out, rows, vals):
    """out[rows[i]] += vals[i], accumulated in sample order. In place."""
    np.add.at(out, rows, vals)
