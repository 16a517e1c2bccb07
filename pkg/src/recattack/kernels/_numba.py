"""Numba-jitted hot kernels. Same contracts as kernels._numpy."""

import numpy as np
from numba import njit


@njit(cache=True)
def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


@njit(cache=True)
def _softplus(x):
    if x > 0.0:
        return x + np.log1p(np.exp(-x))
    return np.log1p(np.exp(x))


@njit(cache=True)
def bpr_mf_epoch(user_emb, item_emb, users, pos, neg, lr, reg, batch_size,
                 adv_eps):
    n = users.shape[0]
    d = user_emb.shape[1]
    total = 0.0
    gu = np.empty((batch_size, d))
    gi = np.empty((batch_size, d))
    gj = np.empty((batch_size, d))
    pu = np.empty(d)
    pi = np.empty(d)
    pj = np.empty(d)
    for start in range(0, n, batch_size):
        stop = min(start + batch_size, n)
        b = stop - start
        for r in range(b):
            u = users[start + r]
            i = pos[start + r]
            j = neg[start + r]
            x = 0.0
            for c in range(d):
                x += user_emb[u, c] * (item_emb[i, c] - item_emb[j, c])
            s = _sigmoid(-x)
            if adv_eps > 0.0:
                # perturb along the per-row loss gradient at the clean
                # point; gradient directions are -(e_i - e_j), -e_u, +e_u
                nu = 0.0
                ni = 0.0
                for c in range(d):
                    dwu = item_emb[i, c] - item_emb[j, c]
                    nu += dwu * dwu
                    ni += user_emb[u, c] * user_emb[u, c]
                nu = np.sqrt(nu)
                ni = np.sqrt(ni)
                cu = adv_eps / nu if (nu > 0.0 and s > 0.0) else 0.0
                ci = adv_eps / ni if (ni > 0.0 and s > 0.0) else 0.0
                for c in range(d):
                    pu[c] = user_emb[u, c] - cu * (item_emb[i, c]
                                                   - item_emb[j, c])
                    pi[c] = item_emb[i, c] - ci * user_emb[u, c]
                    pj[c] = item_emb[j, c] + ci * user_emb[u, c]
                x = 0.0
                for c in range(d):
                    x += pu[c] * (pi[c] - pj[c])
                s = _sigmoid(-x)
            else:
                for c in range(d):
                    pu[c] = user_emb[u, c]
                    pi[c] = item_emb[i, c]
                    pj[c] = item_emb[j, c]
            total += _softplus(-x)
            for c in range(d):
                eu = user_emb[u, c]
                ei = item_emb[i, c]
                ej = item_emb[j, c]
                total += reg * (eu * eu + ei * ei + ej * ej)
                gu[r, c] = s * (pi[c] - pj[c]) - 2.0 * reg * eu
                gi[r, c] = s * pu[c] - 2.0 * reg * ei
                gj[r, c] = -s * pu[c] - 2.0 * reg * ej
        for r in range(b):
            u = users[start + r]
            i = pos[start + r]
            j = neg[start + r]
            for c in range(d):
                user_emb[u, c] += lr * gu[r, c]
                item_emb[i, c] += lr * gi[r, c]
                item_emb[j, c] += lr * gj[r, c]
    return total / max(n, 1)


@njit(cache=True)
def sbpr_epoch(user_emb, item_emb, users, pos, soc, neg, has_soc, lr, reg,
               batch_size):
    n = users.shape[0]
    d = user_emb.shape[1]
    total = 0.0
    gu = np.empty((batch_size, d))
    gi = np.empty((batch_size, d))
    gk = np.empty((batch_size, d))
    gj = np.empty((batch_size, d))
    for start in range(0, n, batch_size):
        stop = min(start + batch_size, n)
        b = stop - start
        for r in range(b):
            u = users[start + r]
            i = pos[start + r]
            k = soc[start + r]
            j = neg[start + r]
            h = has_soc[start + r]
            x1 = 0.0
            x2 = 0.0
            for c in range(d):
                first = item_emb[k, c] if h else item_emb[j, c]
                x1 += user_emb[u, c] * (item_emb[i, c] - first)
                x2 += user_emb[u, c] * (item_emb[k, c] - item_emb[j, c])
            s1 = _sigmoid(-x1)
            s2 = _sigmoid(-x2) if h else 0.0
            total += _softplus(-x1)
            if h:
                total += _softplus(-x2)
            for c in range(d):
                eu = user_emb[u, c]
                ei = item_emb[i, c]
                ek = item_emb[k, c]
                ej = item_emb[j, c]
                total += reg * (eu * eu + ei * ei + ej * ej)
                if h:
                    total += reg * ek * ek
                first = ek if h else ej
                gu[r, c] = (s1 * (ei - first) + s2 * (ek - ej)
                            - 2.0 * reg * eu)
                gi[r, c] = s1 * eu - 2.0 * reg * ei
                gk[r, c] = (s2 - s1) * eu - 2.0 * reg * ek if h else 0.0
                gj[r, c] = (-s2 * eu if h else -s1 * eu) - 2.0 * reg * ej
        for r in range(b):
            u = users[start + r]
            i = pos[start + r]
            k = soc[start + r]
            j = neg[start + r]
            for c in range(d):
                user_emb[u, c] += lr * gu[r, c]
                item_emb[i, c] += lr * gi[r, c]
                item_emb[k, c] += lr * gk[r, c]
                item_emb[j, c] += lr * gj[r, c]
    return total / max(n, 1)


@njit(cache=True)
def sgns_epoch(emb_in, emb_out, centers, contexts, negatives, lr, batch_size):
    n_pairs = centers.shape[0]
    d = emb_in.shape[1]
    n_neg = negatives.shape[1]
    total = 0.0
    gin = np.empty((batch_size, d))
    gout = np.empty((batch_size, d))
    gneg = np.empty((batch_size, n_neg, d))
    for start in range(0, n_pairs, batch_size):
        stop = min(start + batch_size, n_pairs)
        b = stop - start
        for r in range(b):
            c = centers[start + r]
            o = contexts[start + r]
            z = 0.0
            for q in range(d):
                z += emb_in[c, q] * emb_out[o, q]
            g = _sigmoid(z) - 1.0
            total += _softplus(-z)
            for q in range(d):
                gin[r, q] = g * emb_out[o, q]
                gout[r, q] = g * emb_in[c, q]
            for t in range(n_neg):
                m = negatives[start + r, t]
                zn = 0.0
                for q in range(d):
                    zn += emb_in[c, q] * emb_out[m, q]
                gn = _sigmoid(zn)
                total += _softplus(zn)
                for q in range(d):
                    gin[r, q] += gn * emb_out[m, q]
                    gneg[r, t, q] = gn * emb_in[c, q]
        for r in range(b):
            c = centers[start + r]
            o = contexts[start + r]
            for q in range(d):
                emb_in[c, q] -= lr * gin[r, q]
                emb_out[o, q] -= lr * gout[r, q]
            for t in range(n_neg):
                m = negatives[start + r, t]
                for q in range(d):
                    emb_out[m, q] -= lr * gneg[r, t, q]
    return total / max(n_pairs, 1)


@njit(cache=True)
def csr_matvec(indptr, indices, weights, x):
    n_rows = indptr.shape[0] - 1
    d = x.shape[1]
    out = np.zeros((n_rows, d), dtype=x.dtype)
    for r in range(n_rows):
        for p in range(indptr[r], indptr[r + 1]):
            c = indices[p]
            w = weights[p]
            for q in range(d):
                out[r, q] += w * x[c, q]
    return out


@njit(cache=True)
def scatter_add_rows(out, rows, vals):
    for r in range(rows.shape[0]):
        i = rows[r]
        for q in range(vals.shape[1]):
            out[i, q] += vals[r, q]
