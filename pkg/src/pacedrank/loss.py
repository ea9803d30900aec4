"""Hinge ranking losses over tetrads, the paced objective, and gradients.

For a query k with aligned counterpart k and negative j, the per-tetrad
loss is max(0, y * (S_kj - S_kk) + margin). The full objective adds a ridge
penalty on the two transformation matrices (biases are not penalized) and
subtracts the selection regularizers: lam * |v|_1 (easiness) and
gamma * sum_k sqrt(sum_j v_kj) (diversity across query groups).

All reductions run in a fixed order (group-major, then within-group), so
objective and gradient values are identical across runs and thread counts.
Tetrads with zero weight are skipped entirely and therefore cannot perturb
either value even at the bit level.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import (
    Dataset,
    EmbeddingParams,
    GroupedVector,
    ImportanceVector,
    LossConfig,
    PacingState,
    Tetrad,
    TetradSet,
)
from .embed import embed_images, embed_texts, inner_scores, normalized_scores, similarity
from .errors import AlignmentError, ConfigInvalid, IndexOutOfRange, NonFiniteValue

DIRECTIONS = ("i2t", "t2i")


class LossVector(GroupedVector):
    """Per-tetrad hinge losses, grouped per query."""

    def __post_init__(self) -> None:
        super().__post_init__()
        if len(self.values):
            if not np.isfinite(self.values).all():
                raise NonFiniteValue("losses must be finite")
            if (self.values < 0.0).any():
                raise ConfigInvalid("losses must be nonnegative")


@dataclass(frozen=True)
class Gradient:
    """Partial derivatives with the same shapes as EmbeddingParams."""

    dW1: np.ndarray
    db1: np.ndarray
    dW2: np.ndarray
    db2: np.ndarray

    def norm_sq(self) -> float:
        return float(
            np.sum(self.dW1 * self.dW1)
            + np.sum(self.db1 * self.db1)
            + np.sum(self.dW2 * self.dW2)
            + np.sum(self.db2 * self.db2)
        )

    def is_finite(self) -> bool:
        return bool(
            np.isfinite(self.dW1).all()
            and np.isfinite(self.db1).all()
            and np.isfinite(self.dW2).all()
            and np.isfinite(self.db2).all()
        )


def _oriented(params: EmbeddingParams, dataset: Dataset, direction: str):
    """View the problem so that queries are always on the image side.

    For the text-query direction the two modalities swap roles; gradients
    computed in the swapped view are swapped back by the caller.
    """
    if direction == "i2t":
        return params, dataset, False
    if direction == "t2i":
        swapped_params = EmbeddingParams(params.W2, params.b2, params.W1, params.b1)
        swapped_data = Dataset(dataset.texts, dataset.images, dataset.ids)
        return swapped_params, swapped_data, True
    raise ConfigInvalid(f"direction must be one of {DIRECTIONS}, got {direction!r}")


def _check_tetrads(tetrads: TetradSet, n: int) -> None:
    if tetrads.n != n:
        raise IndexOutOfRange(
            f"tetrad set built for {tetrads.n} items but dataset has {n}"
        )


def _check_aligned(tetrads: TetradSet, v: GroupedVector) -> None:
    if v.total != tetrads.total or not np.array_equal(v.offsets, tetrads.offsets):
        raise AlignmentError("weight vector does not line up with the tetrad set")


def ridge_value(params: EmbeddingParams) -> float:
    """0.5 * (sum of squared entries of W1 and W2); biases are excluded."""
    return 0.5 * (float(np.sum(params.W1 * params.W1)) + float(np.sum(params.W2 * params.W2)))


def tetrad_loss(
    params: EmbeddingParams,
    dataset: Dataset,
    t: Tetrad,
    cfg: LossConfig,
    direction: str = "i2t",
    normalized: bool = False,
) -> float:
    """Hinge loss of a single tetrad: max(0, y*(S_kj - S_kk) + margin)."""
    params2, data2, _ = _oriented(params, dataset, direction)
    n = data2.n
    if not (0 <= t.query_index < n) or not (0 <= t.negative_index < n):
        raise IndexOutOfRange(
            f"tetrad ({t.query_index}, {t.negative_index}) outside dataset of size {n}"
        )
    x = data2.images[t.query_index]
    s_aligned = similarity(params2, x, data2.texts[t.query_index], normalized)
    s_negative = similarity(params2, x, data2.texts[t.negative_index], normalized)
    return max(0.0, t.label * (s_negative - s_aligned) + cfg.margin)


def _scores(params2: EmbeddingParams, data2: Dataset, normalized: bool) -> np.ndarray:
    H = embed_images(params2, data2.images)
    G = embed_texts(params2, data2.texts)
    return normalized_scores(H, G) if normalized else inner_scores(H, G)


def all_losses(
    params: EmbeddingParams,
    dataset: Dataset,
    tetrads: TetradSet,
    cfg: LossConfig,
    direction: str = "i2t",
    normalized: bool = False,
) -> LossVector:
    """Hinge losses for every tetrad, from a single score-matrix evaluation."""
    params2, data2, _ = _oriented(params, dataset, direction)
    _check_tetrads(tetrads, data2.n)
    S = _scores(params2, data2, normalized)
    ks = tetrads.flat_queries
    js = tetrads.flat_negatives
    args = S[ks, js] - S[ks, ks] + cfg.margin
    return LossVector(np.maximum(0.0, args), tetrads.offsets)


def weighted_sum_from(losses: LossVector, v: ImportanceVector) -> float:
    """Sum of v * loss over all tetrads, skipping zero weights exactly.

    Per-group dot products over the strictly positive weights accumulate in
    group order, so removing zero-weight tetrads cannot change the result.
    """
    if losses.total != v.total or not np.array_equal(losses.offsets, v.offsets):
        raise AlignmentError("losses and weights are not aligned")
    total = 0.0
    for k in range(v.n_groups):
        vk = v.group(k)
        mask = vk > 0.0
        if mask.any():
            total += float(np.dot(vk[mask], losses.group(k)[mask]))
    return total


def weighted_loss_sum(
    params: EmbeddingParams,
    dataset: Dataset,
    tetrads: TetradSet,
    v: ImportanceVector,
    cfg: LossConfig,
    direction: str = "i2t",
    normalized: bool = False,
) -> float:
    """The smooth loss term sum_k sum_j v_kj * l_kj (no ridge, no regularizers)."""
    _check_aligned(tetrads, v)
    return weighted_sum_from(all_losses(params, dataset, tetrads, cfg, direction, normalized), v)


def selection_penalty(v: ImportanceVector, pacing: PacingState) -> float:
    """-lam * |v|_1 - gamma * sum_k sqrt(group mass), accumulated in group order."""
    mass_total = 0.0
    diversity = 0.0
    for k in range(v.n_groups):
        mass = float(np.sum(v.group(k)))
        mass_total += mass
        diversity += float(np.sqrt(mass))
    return -pacing.lam * mass_total - pacing.gamma * diversity


def objective(
    params: EmbeddingParams,
    dataset: Dataset,
    tetrads: TetradSet,
    v: ImportanceVector,
    pacing: PacingState,
    cfg: LossConfig,
    direction: str = "i2t",
    normalized: bool = False,
) -> float:
    """Full paced objective: ridge + weighted losses + selection penalty."""
    _check_aligned(tetrads, v)
    return (
        ridge_value(params)
        + weighted_loss_sum(params, dataset, tetrads, v, cfg, direction, normalized)
        + selection_penalty(v, pacing)
    )


def grad_loss_term(
    params: EmbeddingParams,
    dataset: Dataset,
    tetrads: TetradSet,
    v: ImportanceVector,
    cfg: LossConfig,
    direction: str = "i2t",
    normalized: bool = False,
) -> Gradient:
    """Gradient of the weighted hinge term alone (no ridge).

    A tetrad contributes iff its hinge argument is strictly positive; at the
    kink the contribution is 0. The chain rule runs through the sigmoid
    (sigma' = sigma * (1 - sigma)) into W1/b1 on the query side and W2/b2 on
    the item side of the oriented view.
    """
    _check_aligned(tetrads, v)
    params2, data2, swapped = _oriented(params, dataset, direction)
    _check_tetrads(tetrads, data2.n)
    X, Z = data2.images, data2.texts
    n = data2.n
    H = embed_images(params2, X)
    G = embed_texts(params2, Z)
    S = normalized_scores(H, G) if normalized else inner_scores(H, G)

    ks = tetrads.flat_queries
    js = tetrads.flat_negatives
    args = S[ks, js] - S[ks, ks] + cfg.margin
    coef = np.where(args > 0.0, v.values, 0.0)

    C = np.zeros((n, n))
    C[ks, js] = coef
    s_row = C.sum(axis=1)

    if not normalized:
        dH_pre = C @ G - s_row[:, None] * G
        dG_pre = C.T @ H - s_row[:, None] * H
    else:
        nh = np.sqrt(np.sum(H * H, axis=1))
        ng = np.sqrt(np.sum(G * G, axis=1))
        H_hat = H / nh[:, None]
        G_hat = G / ng[:, None]
        diag = np.diagonal(S)
        row_cs = (C * S).sum(axis=1)
        col_cs = (C * S).sum(axis=0)
        w_h = (row_cs - s_row * diag) / (nh * nh)
        w_g = (col_cs - s_row * diag) / (ng * ng)
        dH_pre = (C @ G_hat - s_row[:, None] * G_hat) / nh[:, None] - w_h[:, None] * H
        dG_pre = (C.T @ H_hat - s_row[:, None] * H_hat) / ng[:, None] - w_g[:, None] * G

    dH = dH_pre * H * (1.0 - H)
    dG = dG_pre * G * (1.0 - G)
    dW_query = dH.T @ X
    db_query = dH.sum(axis=0)
    dW_item = dG.T @ Z
    db_item = dG.sum(axis=0)

    if swapped:
        return Gradient(dW_item, db_item, dW_query, db_query)
    return Gradient(dW_query, db_query, dW_item, db_item)


def grad_params(
    params: EmbeddingParams,
    dataset: Dataset,
    tetrads: TetradSet,
    v: ImportanceVector,
    cfg: LossConfig,
    direction: str = "i2t",
    normalized: bool = False,
) -> Gradient:
    """Gradient of ridge + weighted hinge term with respect to all parameters."""
    g = grad_loss_term(params, dataset, tetrads, v, cfg, direction, normalized)
    return Gradient(params.W1 + g.dW1, g.db1, params.W2 + g.dW2, g.db2)
