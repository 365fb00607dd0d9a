"""Randomized verification suites behind ``simcon gradcheck`` and
``simcon oracle-diff``.

Gradient checks compare analytic gradients with central differences while
holding positive masks and stop-gradient targets fixed at the base point.
Oracle diffs compare vectorized loss values with the brute-force loops in
:mod:`simcon.oracle`.
"""

from __future__ import annotations

import numpy as np

from . import losses, oracle
from .encoders import encode, encoder_backward, flat_grads, init_encoder, init_projection_head
from .numerics import finite_difference_gradient, l2_normalize_rows, max_relative_error

LOSS_NAMES = ("info_nce", "simcon", "mv_simcon", "ncs_loss", "total_loss")
GRADCHECK_NAMES = LOSS_NAMES + ("encoder",)
TAUS = (0.07, 0.5)
LAMBDAS = (-1.0, 0.5, 0.95)


def _unit(rng, n, d):
    return np.array(l2_normalize_rows(rng.standard_normal((n, d))))


def _fd_error(f, x, analytic, h):
    x = np.asarray(x, dtype=np.float64)
    numeric = finite_difference_gradient(lambda v: f(v.reshape(x.shape)), x, h)
    return max_relative_error(analytic, numeric)


def _check_inputs(fn, inputs, out, keys, tau, h, corrupt):
    """Worst error over every embedding input and tau."""
    worst = 0.0
    for idx, key in enumerate(keys):
        analytic = out.grads[key]
        if corrupt:
            analytic = analytic * 1.01 + 1e-3

        def f(x, idx=idx):
            args = list(inputs)
            args[idx] = x
            return fn(*args, tau).value

        worst = max(worst, _fd_error(f, inputs[idx], analytic, h))
    worst = max(worst, _fd_error(lambda t: fn(*inputs, float(t[0])).value, [tau], [out.grad_tau], h))
    return worst


def gradcheck_case(name, rng, n, d, tau, lam, h=1e-5, corrupt=False, include_self=True):
    """Max relative gradient error for one random instance of ``name``."""
    if name == "encoder":
        return _encoder_case(rng, n, tau, lam, h, corrupt, include_self)
    zi, z2, zt = _unit(rng, n, d), _unit(rng, n, d), _unit(rng, n, d)
    if name == "info_nce":
        out = losses.info_nce(zi, zt, tau)
        return _check_inputs(losses.info_nce, [zi, zt], out, ["z_i", "z_t"], tau, h, corrupt)
    if name == "simcon":
        p_i, p_t = losses.positive_masks(zi @ zi.T, zt @ zt.T, lam)

        def fn(a, b, t):
            return losses.simcon(a, b, p_i, p_t, t, include_self=include_self)

        out = fn(zi, zt, tau)
        return _check_inputs(fn, [zi, zt], out, ["z_i", "z_t"], tau, h, corrupt)
    masks = losses.mv_simcon_masks(zi, z2, zt, lam)
    head = init_projection_head(rng.integers(2**32), d)
    if name == "mv_simcon":

        def fn(a, b, c, t):
            return losses.mv_simcon(a, b, c, t, lam, masks=masks, include_self=include_self)

        out = fn(zi, z2, zt, tau)
        return _check_inputs(fn, [zi, z2, zt], out, ["z_i1", "z_i2", "z_t"], tau, h, corrupt)
    if name == "ncs_loss":
        targets = (zi.copy(), z2.copy())

        def fn(a, b, t, hd=head):
            return losses.ncs_loss(a, b, hd, sg_targets=targets)

        out = fn(zi, z2, tau)
        worst = _check_inputs(fn, [zi, z2], out, ["z_i1", "z_i2"], tau, h, corrupt)
        return max(worst, _head_error(lambda hd: fn(zi, z2, tau, hd), head, out, h))
    if name == "total_loss":
        targets = (zi.copy(), z2.copy())

        def fn(a, b, c, t, hd=head):
            return losses.total_loss(
                a, b, c, t, lam, hd, masks=masks, sg_targets=targets, include_self=include_self
            )

        out = fn(zi, z2, zt, tau)
        worst = _check_inputs(fn, [zi, z2, zt], out, ["z_i1", "z_i2", "z_t"], tau, h, corrupt)
        return max(worst, _head_error(lambda hd: fn(zi, z2, zt, tau, hd), head, out, h))
    raise ValueError(f"unknown loss {name!r}")


def _head_error(loss_of_head, head, out, h):
    numeric = finite_difference_gradient(
        lambda theta: loss_of_head(head.with_flat(theta)).value, head.flat(), h
    )
    return max_relative_error(flat_grads(out.head_grads), numeric)


def _encoder_case(rng, n, tau, lam, h, corrupt, include_self, in_img=6, in_txt=5, d=8):
    """raw inputs -> encoders -> total_loss, differentiated w.r.t. every
    encoder and head parameter."""
    img = init_encoder(rng.integers(2**32), in_img, [7], d)
    txt = init_encoder(rng.integers(2**32), in_txt, [], d)
    head = init_projection_head(rng.integers(2**32), d)
    r1, r2 = rng.standard_normal((n, in_img)), rng.standard_normal((n, in_img))
    rt = rng.standard_normal((n, in_txt))
    z1, c1 = encode(img, r1, with_cache=True)
    z2, c2 = encode(img, r2, with_cache=True)
    zt, ct = encode(txt, rt, with_cache=True)
    masks = losses.mv_simcon_masks(z1, z2, zt, lam)
    targets = (np.asarray(z1).copy(), np.asarray(z2).copy())

    def loss(im, tx, hd):
        return losses.total_loss(
            encode(im, r1), encode(im, r2), encode(tx, rt), tau, lam, hd,
            masks=masks, sg_targets=targets, include_self=include_self,
        )

    out = loss(img, txt, head)
    g_img = [
        (a[0] + b[0], a[1] + b[1])
        for a, b in zip(
            encoder_backward(img, c1, out.grads["z_i1"]), encoder_backward(img, c2, out.grads["z_i2"])
        )
    ]
    analytic = {
        "image": flat_grads(g_img),
        "text": flat_grads(encoder_backward(txt, ct, out.grads["z_t"])),
        "head": flat_grads(out.head_grads),
    }
    rebuild = {
        "image": lambda th: loss(img.with_flat(th), txt, head).value,
        "text": lambda th: loss(img, txt.with_flat(th), head).value,
        "head": lambda th: loss(img, txt, head.with_flat(th)).value,
    }
    base = {"image": img.flat(), "text": txt.flat(), "head": head.flat()}
    worst = 0.0
    for key in analytic:
        a = analytic[key] * 1.01 + 1e-3 if corrupt else analytic[key]
        numeric = finite_difference_gradient(rebuild[key], base[key], h)
        worst = max(worst, max_relative_error(a, numeric))
    return worst


def run_gradcheck(
    instances=20, max_batch=8, max_dim=16, seed=0, corrupt=None, include_edge=True, names=GRADCHECK_NAMES
):
    """Worst relative gradient error per loss over random instances.

    ``corrupt`` names a loss whose analytic gradient is deliberately
    perturbed (fault injection for testing the report).
    """
    rng = np.random.default_rng(seed)
    report = {}
    for name in names:
        worst = 0.0
        for k in range(instances):
            n = 1 if include_edge and k == 0 else int(rng.integers(2, max_batch + 1))
            d = int(rng.integers(2, max_dim + 1))
            tau = TAUS[k % len(TAUS)] if k % 3 else float(rng.uniform(0.05, 1.0))
            lam = LAMBDAS[k % len(LAMBDAS)]
            err = gradcheck_case(
                name, rng, n, d, tau, lam, corrupt=(corrupt == name), include_self=bool(k % 2 == 0)
            )
            worst = max(worst, err)
        report[name] = worst
    return report


def oracle_case(name, rng, n, d, tau, lam, include_self=True):
    """|vectorized - oracle| for one random instance."""
    zi, z2, zt = _unit(rng, n, d), _unit(rng, n, d), _unit(rng, n, d)
    if rng.random() < 0.3 and n > 1:
        # duplicated rows create multi-member positive sets at high lambda
        zi[1] = zi[0]
        z2[1] = z2[0]
        zt[1] = zt[0]
    if name == "info_nce":
        return abs(losses.info_nce(zi, zt, tau).value - oracle.oracle_info_nce(zi, zt, tau))
    if name == "simcon":
        p_i, p_t = losses.positive_masks(zi @ zi.T, zt @ zt.T, lam)
        fast = losses.simcon(zi, zt, p_i, p_t, tau, include_self=include_self).value
        slow = oracle.oracle_simcon(zi, zt, p_i.mask, p_t.mask, tau, include_self=include_self)
        return abs(fast - slow)
    head = init_projection_head(rng.integers(2**32), d)
    if name == "mv_simcon":
        fast = losses.mv_simcon(zi, z2, zt, tau, lam, include_self=include_self).value
        slow = oracle.oracle_mv_simcon(zi, z2, zt, tau, lam, include_self=include_self)
        return abs(fast - slow)
    if name == "ncs_loss":
        return abs(losses.ncs_loss(zi, z2, head).value - oracle.oracle_ncs(zi, z2, head))
    if name == "total_loss":
        fast = losses.total_loss(zi, z2, zt, tau, lam, head, include_self=include_self).value
        slow = oracle.oracle_total(zi, z2, zt, tau, lam, head, include_self=include_self)
        return abs(fast - slow)
    raise ValueError(f"unknown loss {name!r}")


def run_oracle_diff(trials=100, seed=0, max_batch=16, max_dim=32, names=LOSS_NAMES):
    """Max absolute vectorized-vs-oracle difference per loss."""
    if trials < 1:
        raise ValueError("trials must be >= 1")
    rng = np.random.default_rng(seed)
    report = {}
    for name in names:
        worst = 0.0
        for k in range(trials):
            n = int(rng.integers(1, max_batch + 1))
            d = int(rng.integers(2, max_dim + 1))
            tau = TAUS[k % len(TAUS)]
            lam = LAMBDAS[(k // len(TAUS)) % len(LAMBDAS)]
            worst = max(worst, oracle_case(name, rng, n, d, tau, lam, include_self=(k % 4 != 3)))
        report[name] = worst
    return report
