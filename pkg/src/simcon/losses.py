"""Contrastive objectives with analytic gradients.

Every loss returns a :class:`LossOutput` holding the scalar value, the
gradient with respect to each embedding input, the gradient with respect
to the temperature, and a few diagnostics. All arithmetic is float64 and
stays in the log domain, so small temperatures do not overflow.

Notation used in the comments: for an anchor modality A and a cross
modality C, ``X = A C^T / tau`` are the cross-modal logits and
``Y = A A^T / tau`` the intra-modal ones.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import EmptyPositiveSet, NonFinite, ShapeMismatch
from .numerics import as_matrix, cosine_similarity_matrix, logsumexp

TAU_MIN = 1e-3
TAU_MAX = 1.0
TAU_INIT = 0.07


@dataclass
class Temperature:
    """Softmax temperature, stored through the unconstrained scale
    ``s = -log(tau)`` that the optimizer updates."""

    tau: float = TAU_INIT
    learnable: bool = True

    def __post_init__(self):
        if not self.tau > 0:
            raise ValueError(f"temperature must be positive, got {self.tau}")

    def __float__(self):
        return float(self.tau)

    @property
    def scale(self) -> float:
        return -math.log(self.tau)

    @classmethod
    def from_scale(cls, s: float, learnable: bool = True) -> "Temperature":
        s = min(max(s, -math.log(TAU_MAX)), -math.log(TAU_MIN))
        return cls(math.exp(-s), learnable)


@dataclass(frozen=True)
class PositiveMask:
    mask: np.ndarray
    lambda_used: float

    def __array__(self, dtype=None, copy=None):
        if dtype is not None:
            return self.mask.astype(dtype)
        return self.mask.copy() if copy else self.mask

    @property
    def positives_per_anchor(self) -> np.ndarray:
        return self.mask.sum(axis=1)


@dataclass
class LossOutput:
    value: float
    grads: dict[str, np.ndarray]
    grad_tau: float = 0.0
    head_grads: list | None = None
    diagnostics: dict[str, float] = field(default_factory=dict)

    def __float__(self):
        return self.value


@dataclass(frozen=True)
class NcsSpec:
    """Projection head for the view-consistency loss. The stop-gradient on
    the target branch is fixed, not configurable."""

    head: object
    stop_grad_target: bool = field(default=True, init=False)


def _tau(temp) -> float:
    tau = float(temp)
    if not tau > 0:
        raise ValueError(f"temperature must be positive, got {tau}")
    return tau


def _check_pair(a: np.ndarray, b: np.ndarray):
    if a.shape != b.shape:
        raise ShapeMismatch(f"embedding shapes differ: {a.shape} vs {b.shape}")
    if a.shape[0] < 1:
        raise ShapeMismatch("empty batch")
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
        raise NonFinite("embeddings contain non-finite entries")


def _mask_array(mask, n: int) -> np.ndarray:
    m = np.asarray(mask)
    if m.shape != (n, n):
        raise ShapeMismatch(f"mask shape {m.shape} does not match batch size {n}")
    m = m.astype(np.float64)
    counts = m.sum(axis=1)
    empty = np.flatnonzero(counts == 0)
    if empty.size:
        raise EmptyPositiveSet(int(empty[0]))
    return m


# ---------------------------------------------------------------------------
# InfoNCE


def _nce_direction(anchor, cross, tau):
    n = anchor.shape[0]
    x = anchor @ cross.T / tau
    lse = logsumexp(x, axis=1)
    value = float(np.mean(lse - np.diag(x)))
    gx = np.exp(x - lse[:, None])
    gx[np.diag_indices(n)] -= 1.0
    gx /= n
    g_anchor = gx @ cross / tau
    g_cross = gx.T @ anchor / tau
    g_tau = -float(np.sum(gx * x)) / tau
    return value, g_anchor, g_cross, g_tau


def info_nce(z_i, z_t, temp) -> LossOutput:
    """Symmetric image/text InfoNCE with unit weights on both directions."""
    zi, zt = as_matrix(z_i), as_matrix(z_t)
    _check_pair(zi, zt)
    tau = _tau(temp)
    v_it, gi_a, gt_c, gtau_it = _nce_direction(zi, zt, tau)
    v_ti, gt_a, gi_c, gtau_ti = _nce_direction(zt, zi, tau)
    return LossOutput(
        value=v_it + v_ti,
        grads={"z_i": gi_a + gi_c, "z_t": gt_a + gt_c},
        grad_tau=gtau_it + gtau_ti,
        diagnostics={"loss_i2t": v_it, "loss_t2i": v_ti},
    )


# ---------------------------------------------------------------------------
# positive masks


def _heaviside_mask(s: np.ndarray, lam: float) -> PositiveMask:
    # H(x) = 1 for x >= 0, so ties with lambda count as positives.
    return PositiveMask((s - lam >= 0).astype(np.float64), float(lam))


def _check_lambda(lam: float):
    if not -1.0 <= lam <= 1.0:
        raise ValueError(f"lambda must lie in [-1, 1], got {lam}")


def positive_masks(s_ii, s_tt, lam: float) -> tuple[PositiveMask, PositiveMask]:
    s_ii, s_tt = as_matrix(s_ii), as_matrix(s_tt)
    if s_ii.shape != s_tt.shape or s_ii.shape[0] != s_ii.shape[1]:
        raise ShapeMismatch(f"need equal square matrices, got {s_ii.shape}, {s_tt.shape}")
    _check_lambda(lam)
    return _heaviside_mask(s_ii, lam), _heaviside_mask(s_tt, lam)


def joint_positive_mask(s_11, s_22, lam: float) -> PositiveMask:
    """Positive if the pair clears the threshold in either image view."""
    s_11, s_22 = as_matrix(s_11), as_matrix(s_22)
    if s_11.shape != s_22.shape or s_11.shape[0] != s_11.shape[1]:
        raise ShapeMismatch(f"need equal square matrices, got {s_11.shape}, {s_22.shape}")
    _check_lambda(lam)
    return _heaviside_mask(np.maximum(s_11, s_22), lam)


# ---------------------------------------------------------------------------
# SimCon


def _lse_rows(v):
    # row-wise log-sum-exp tolerating -inf entries (masked terms)
    shift = v.max(axis=1, keepdims=True)
    return np.log(np.sum(np.exp(v - shift), axis=1)) + shift[:, 0]


def _simcon_direction(anchor, cross, mask, tau, intra=True, include_self=True):
    """One direction of SimCon: anchors in ``anchor`` matched against the
    cross-modal rows plus, when ``intra`` is set, the anchor modality itself.
    ``include_self=False`` drops the constant exp(1/tau) self-similarity
    term of the intra-modal block from numerator and denominator.

    Returns (value, grad_anchor, grad_cross, grad_tau, diagnostics).
    """
    n = anchor.shape[0]
    counts = mask.sum(axis=1)
    x = anchor @ cross.T / tau
    if intra:
        y = anchor @ anchor.T / tau
        if not include_self:
            y[np.diag_indices(n)] = -np.inf
        den = _lse_rows(np.concatenate([x, y], axis=1))
        num = np.logaddexp(x, y)
    else:
        den = logsumexp(x, axis=1)
        num = x
    weights = mask / counts[:, None]
    # mean over anchors of (1/|P_i|) sum_p (den_i - num_ip); rows of weights sum to 1
    value = float(np.mean(den - np.sum(weights * num, axis=1)))

    gx = np.exp(x - den[:, None]) - weights * np.exp(x - num)
    gx /= n
    g_anchor = gx @ cross / tau
    g_cross = gx.T @ anchor / tau
    g_tau = -float(np.sum(gx * x)) / tau
    diag = {"positives": float(counts.mean())}
    if intra:
        gy = np.exp(y - den[:, None]) - weights * np.exp(y - num)
        gy /= n
        g_anchor += (gy + gy.T) @ anchor / tau
        finite_y = np.where(np.isfinite(y), y, 0.0)
        g_tau -= float(np.sum(gy * finite_y)) / tau
        # share of each anchor's positive numerator mass held by its own
        # constant self-similarity term exp(1/tau)
        pos_lse = _lse_rows(np.where(mask > 0, num, -np.inf))
        diag["diag_share"] = float(np.mean(np.exp(np.diag(y) - pos_lse)))
    return value, g_anchor, g_cross, g_tau, diag


def simcon(
    z_i, z_t, p_i, p_t, temp, intra_modal_mask: bool = False, include_self: bool = True
) -> LossOutput:
    """Image-to-text plus text-to-image SimCon for fixed positive masks.

    ``intra_modal_mask`` drops the image-image and text-text exponent
    terms; with identity masks this reproduces :func:`info_nce`.
    ``include_self`` keeps the j = i intra-modal term, as in the
    published form of the loss.
    """
    zi, zt = as_matrix(z_i), as_matrix(z_t)
    _check_pair(zi, zt)
    tau = _tau(temp)
    n = zi.shape[0]
    mi, mt = _mask_array(p_i, n), _mask_array(p_t, n)
    intra = not intra_modal_mask
    v_it, gi_a, gt_c, gtau_it, d_it = _simcon_direction(zi, zt, mi, tau, intra, include_self)
    v_ti, gt_a, gi_c, gtau_ti, d_ti = _simcon_direction(zt, zi, mt, tau, intra, include_self)
    diagnostics = {
        "loss_i2t": v_it,
        "loss_t2i": v_ti,
        "positives_image": d_it["positives"],
        "positives_text": d_ti["positives"],
    }
    if intra:
        diagnostics["diag_share_image"] = d_it["diag_share"]
        diagnostics["diag_share_text"] = d_ti["diag_share"]
    return LossOutput(
        value=v_it + v_ti,
        grads={"z_i": gi_a + gi_c, "z_t": gt_a + gt_c},
        grad_tau=gtau_it + gtau_ti,
        diagnostics=diagnostics,
    )


def mv_simcon_masks(z_i1, z_i2, z_t, lam: float, joint_positives: bool = True):
    """Positive masks for the two-view loss, built from detached
    similarities. Returns (mask for view 1, mask for view 2, text mask);
    with joint positives both view masks are the same object."""
    s11 = cosine_similarity_matrix(z_i1, z_i1)
    s22 = cosine_similarity_matrix(z_i2, z_i2)
    stt = cosine_similarity_matrix(z_t, z_t)
    p1, p_t = positive_masks(s11, stt, lam)
    if joint_positives:
        pj = joint_positive_mask(s11, s22, lam)
        return pj, pj, p_t
    p2 = _heaviside_mask(s22, lam)
    return p1, p2, p_t


def mv_simcon(
    z_i1,
    z_i2,
    z_t,
    temp,
    lam: float,
    joint_positives: bool = True,
    masks=None,
    include_self: bool = True,
) -> LossOutput:
    """SimCon over two image views sharing one text batch.

    ``masks`` overrides the (view 1, view 2, text) masks, which gradient
    checks use to hold the thresholding fixed. With ``joint_positives``
    off, each view uses its own image mask.
    """
    z1, z2, zt = as_matrix(z_i1), as_matrix(z_i2), as_matrix(z_t)
    _check_pair(z1, zt)
    _check_pair(z2, zt)
    tau = _tau(temp)
    n = zt.shape[0]
    if masks is None:
        masks = mv_simcon_masks(z1, z2, zt, lam, joint_positives)
    m1, m2, mt = (_mask_array(m, n) for m in masks)

    v1_it, g1_a, gt_c1, gtau1, d1 = _simcon_direction(z1, zt, m1, tau, True, include_self)
    v2_it, g2_a, gt_c2, gtau2, d2 = _simcon_direction(z2, zt, m2, tau, True, include_self)
    v1_ti, gt_a1, g1_c, gtau3, d3 = _simcon_direction(zt, z1, mt, tau, True, include_self)
    v2_ti, gt_a2, g2_c, gtau4, _ = _simcon_direction(zt, z2, mt, tau, True, include_self)
    value = v1_it + v2_it + v1_ti + v2_ti
    return LossOutput(
        value=value,
        grads={
            "z_i1": g1_a + g1_c,
            "z_i2": g2_a + g2_c,
            "z_t": gt_c1 + gt_c2 + gt_a1 + gt_a2,
        },
        grad_tau=gtau1 + gtau2 + gtau3 + gtau4,
        diagnostics={
            "loss_i2t": v1_it + v2_it,
            "loss_t2i": v1_ti + v2_ti,
            "positives_image": 0.5 * (d1["positives"] + d2["positives"]),
            "positives_text": d3["positives"],
            "diag_share_image": 0.5 * (d1["diag_share"] + d2["diag_share"]),
            "diag_share_text": d3["diag_share"],
        },
    )


# ---------------------------------------------------------------------------
# negative cosine similarity between views


def ncs_loss(z_i1, z_i2, spec, weights=(0.5, 0.5), sg_targets=None) -> LossOutput:
    """Symmetrized negative cosine similarity between projected views.

    Each term compares the normalized head output of one view with the
    other view treated as a constant. ``sg_targets`` supplies those
    constants explicitly (defaults to the inputs themselves); gradient
    checks use it to freeze the stop-gradient branch.
    """
    from .encoders import project, project_backward

    z1, z2 = as_matrix(z_i1), as_matrix(z_i2)
    if z1.shape != z2.shape:
        raise ShapeMismatch(f"view shapes differ: {z1.shape} vs {z2.shape}")
    head = spec.head if isinstance(spec, NcsSpec) else spec
    t1, t2 = (z1, z2) if sg_targets is None else (as_matrix(t) for t in sg_targets)
    if t1.shape != z1.shape or t2.shape != z2.shape:
        raise ShapeMismatch("stop-gradient targets must match the view shapes")
    n = z1.shape[0]
    w1, w2 = weights

    q1, cache1 = project(head, z1, with_cache=True)
    q2, cache2 = project(head, z2, with_cache=True)
    q1, q2 = np.asarray(q1), np.asarray(q2)
    cos1 = np.einsum("ij,ij->i", q1, t2)
    cos2 = np.einsum("ij,ij->i", q2, t1)
    value = -float(np.mean(w1 * cos1 + w2 * cos2))

    hg1, gz1 = project_backward(head, cache1, -w1 * t2 / n)
    hg2, gz2 = project_backward(head, cache2, -w2 * t1 / n)
    head_grads = [(a[0] + b[0], a[1] + b[1]) for a, b in zip(hg1, hg2)]
    return LossOutput(
        value=value,
        grads={"z_i1": gz1, "z_i2": gz2},
        grad_tau=0.0,
        head_grads=head_grads,
        diagnostics={"loss_ncs": value, "cos_12": float(cos1.mean()), "cos_21": float(cos2.mean())},
    )


def total_loss(
    z_i1,
    z_i2,
    z_t,
    temp,
    lam: float,
    spec,
    joint_positives: bool = True,
    masks=None,
    sg_targets=None,
    include_self: bool = True,
) -> LossOutput:
    """Two-view SimCon plus the view-consistency term, unit weights."""
    mv = mv_simcon(
        z_i1, z_i2, z_t, temp, lam, joint_positives=joint_positives, masks=masks,
        include_self=include_self,
    )
    ncs = ncs_loss(z_i1, z_i2, spec, sg_targets=sg_targets)
    diagnostics = dict(mv.diagnostics)
    diagnostics["loss_mv_simcon"] = mv.value
    diagnostics["loss_ncs"] = ncs.value
    return LossOutput(
        value=mv.value + ncs.value,
        grads={
            "z_i1": mv.grads["z_i1"] + ncs.grads["z_i1"],
            "z_i2": mv.grads["z_i2"] + ncs.grads["z_i2"],
            "z_t": mv.grads["z_t"],
        },
        grad_tau=mv.grad_tau,
        head_grads=ncs.head_grads,
        diagnostics=diagnostics,
    )
