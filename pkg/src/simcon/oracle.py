"""Brute-force reference values for every loss.

Straight transcriptions of the loss definitions as nested loops over
Python floats. Nothing here is shared with :mod:`simcon.losses`; no
log-domain tricks are used, which is fine for tau >= 0.07 (exponents stay
below about 1.6e6).
"""

from __future__ import annotations

import math

from .errors import EmptyPositiveSet


def _rows(z):
    return [[float(v) for v in row] for row in z]


def _dot(a, b):
    total = 0.0
    for x, y in zip(a, b):
        total += x * y
    return total


def _exp_sim(a_rows, b_rows, tau):
    return [[math.exp(_dot(a, b) / tau) for b in b_rows] for a in a_rows]


def _nce_one_way(e):
    n = len(e)
    total = 0.0
    for i in range(n):
        den = 0.0
        for j in range(n):
            den += e[i][j]
        total += math.log(e[i][i] / den)
    return -total / n


def oracle_info_nce(z_i, z_t, tau) -> float:
    zi, zt = _rows(z_i), _rows(z_t)
    tau = float(tau)
    e_it = _exp_sim(zi, zt, tau)
    n = len(zi)
    e_ti = [[e_it[j][i] for j in range(n)] for i in range(n)]
    return _nce_one_way(e_it) + _nce_one_way(e_ti)


def _positive_sets(mask):
    sets = []
    for i, row in enumerate(mask):
        members = [j for j, v in enumerate(row) if v]
        if not members:
            raise EmptyPositiveSet(i)
        sets.append(members)
    return sets


def _simcon_one_way(e_cross, e_intra, positives, include_self=True):
    n = len(e_cross)
    total = 0.0
    for i in range(n):
        den = 0.0
        for j in range(n):
            den += e_cross[i][j]
        for j in range(n):
            if j != i or include_self:
                den += e_intra[i][j]
        inner = 0.0
        for p in positives[i]:
            intra = e_intra[i][p] if (p != i or include_self) else 0.0
            inner += math.log((e_cross[i][p] + intra) / den)
        total += inner / len(positives[i])
    return -total / n


def oracle_simcon(z_i, z_t, p_i, p_t, tau, include_self=True) -> float:
    zi, zt = _rows(z_i), _rows(z_t)
    tau = float(tau)
    n = len(zi)
    pos_i, pos_t = _positive_sets(p_i), _positive_sets(p_t)
    e_it = _exp_sim(zi, zt, tau)
    e_ti = [[e_it[j][i] for j in range(n)] for i in range(n)]
    e_ii = _exp_sim(zi, zi, tau)
    e_tt = _exp_sim(zt, zt, tau)
    return _simcon_one_way(e_it, e_ii, pos_i, include_self) + _simcon_one_way(
        e_ti, e_tt, pos_t, include_self
    )


def _threshold(sim_rows, lam):
    return [[1 if s - lam >= 0 else 0 for s in row] for row in sim_rows]


def _gram(rows):
    return [[_dot(a, b) for b in rows] for a in rows]


def oracle_masks(z_i1, z_i2, z_t, lam, joint_positives=True):
    z1, z2, zt = _rows(z_i1), _rows(z_i2), _rows(z_t)
    s11, s22 = _gram(z1), _gram(z2)
    if joint_positives:
        joint = [[max(a, b) for a, b in zip(r1, r2)] for r1, r2 in zip(s11, s22)]
        m1 = m2 = _threshold(joint, lam)
    else:
        m1, m2 = _threshold(s11, lam), _threshold(s22, lam)
    return m1, m2, _threshold(_gram(zt), lam)


def oracle_mv_simcon(
    z_i1, z_i2, z_t, tau, lam, joint_positives=True, masks=None, include_self=True
) -> float:
    if masks is None:
        masks = oracle_masks(z_i1, z_i2, z_t, lam, joint_positives)
    m1, m2, mt = masks
    z1, z2, zt = _rows(z_i1), _rows(z_i2), _rows(z_t)
    tau = float(tau)
    n = len(zt)
    total = 0.0
    for view, mask in ((z1, m1), (z2, m2)):
        e_vt = _exp_sim(view, zt, tau)
        e_tv = [[e_vt[j][i] for j in range(n)] for i in range(n)]
        total += _simcon_one_way(e_vt, _exp_sim(view, view, tau), _positive_sets(mask), include_self)
        total += _simcon_one_way(e_tv, _exp_sim(zt, zt, tau), _positive_sets(mt), include_self)
    return total


def _head_forward(head, row):
    h = list(row)
    last = len(head.weights) - 1
    for k, (w, b) in enumerate(zip(head.weights, head.biases)):
        out = []
        for c in range(len(b)):
            acc = float(b[c])
            for r in range(len(h)):
                acc += h[r] * float(w[r][c])
            out.append(math.tanh(acc) if k < last else acc)
        h = out
    norm = math.sqrt(_dot(h, h))
    return [v / norm for v in h]


def oracle_ncs(z_i1, z_i2, head) -> float:
    z1, z2 = _rows(z_i1), _rows(z_i2)
    head = getattr(head, "head", head)
    n = len(z1)
    total = 0.0
    for i in range(n):
        total += 0.5 * _dot(_head_forward(head, z1[i]), z2[i])
        total += 0.5 * _dot(_head_forward(head, z2[i]), z1[i])
    return -total / n


def oracle_total(z_i1, z_i2, z_t, tau, lam, head, joint_positives=True, include_self=True) -> float:
    mv = oracle_mv_simcon(z_i1, z_i2, z_t, tau, lam, joint_positives, include_self=include_self)
    return mv + oracle_ncs(z_i1, z_i2, head)
