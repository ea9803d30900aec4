"""Finite-difference verification of the analytic gradient.

The numeric side perturbs every parameter entry by +-h and differences the
smooth objective (ridge + weighted hinge sum); the analytic side is the
vectorized backprop. Instances are drawn so that no hinge argument sits
within a small band of its kink, where the subgradient convention would
make the comparison meaningless.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import (
    Dataset,
    EmbeddingParams,
    ImportanceVector,
    LossConfig,
    TetradSet,
    build_tetrads,
    validate_dataset,
)
from .loss import all_losses, grad_params, ridge_value, weighted_sum_from

KINK_BAND = 1e-6


@dataclass(frozen=True)
class GradCheckInstance:
    dataset: Dataset
    params: EmbeddingParams
    tetrads: TetradSet
    v: ImportanceVector
    cfg: LossConfig
    direction: str
    normalized: bool


def _smooth(params, inst: GradCheckInstance) -> float:
    losses = all_losses(params, inst.dataset, inst.tetrads, inst.cfg, inst.direction, inst.normalized)
    return ridge_value(params) + weighted_sum_from(losses, inst.v)


def make_instance(
    seed: int,
    n: int = 6,
    p: int = 5,
    q: int = 5,
    d: int = 3,
    direction: str = "i2t",
    normalized: bool = False,
) -> GradCheckInstance:
    """Seeded random instance with hinge arguments pushed off their kinks."""
    rng = np.random.default_rng(seed)
    dataset = validate_dataset(rng.standard_normal((n, p)), rng.standard_normal((n, q)))
    params = EmbeddingParams.from_arrays(
        rng.standard_normal((d, p)) * 0.5,
        rng.standard_normal(d) * 0.1,
        rng.standard_normal((d, q)) * 0.5,
        rng.standard_normal(d) * 0.1,
    )
    tetrads = build_tetrads(dataset)
    v = ImportanceVector(rng.uniform(0.0, 1.0, tetrads.total), tetrads.offsets)
    margin = 0.05
    for _ in range(100):
        cfg = LossConfig(margin=margin)
        if _min_kink_distance(params, dataset, tetrads, cfg, direction, normalized) > KINK_BAND:
            return GradCheckInstance(dataset, params, tetrads, v, cfg, direction, normalized)
        margin += 1e-3
    raise RuntimeError("could not find a kink-free margin")


def _min_kink_distance(params, dataset, tetrads, cfg, direction, normalized) -> float:
    from .embed import embed_images, embed_texts, inner_scores, normalized_scores
    from .loss import _oriented

    params2, data2, _ = _oriented(params, dataset, direction)
    H = embed_images(params2, data2.images)
    G = embed_texts(params2, data2.texts)
    S = normalized_scores(H, G) if normalized else inner_scores(H, G)
    ks, js = tetrads.flat_queries, tetrads.flat_negatives
    args = S[ks, js] - S[ks, ks] + cfg.margin
    return float(np.min(np.abs(args))) if len(args) else np.inf


def numeric_gradient(inst: GradCheckInstance, h: float = 1e-5):
    """Central finite differences of the smooth objective, entry by entry."""
    parts = []
    base = inst.params
    for name in ("W1", "b1", "W2", "b2"):
        arr = getattr(base, name)
        grad = np.zeros_like(arr)
        flat = grad.reshape(-1)
        src = arr.reshape(-1)
        for i in range(src.size):
            plus = src.copy()
            plus[i] += h
            minus = src.copy()
            minus[i] -= h
            p_plus = _replace(base, name, plus.reshape(arr.shape))
            p_minus = _replace(base, name, minus.reshape(arr.shape))
            flat[i] = (_smooth(p_plus, inst) - _smooth(p_minus, inst)) / (2.0 * h)
        parts.append(grad)
    return tuple(parts)


def _replace(params: EmbeddingParams, name: str, value: np.ndarray) -> EmbeddingParams:
    fields = {"W1": params.W1, "b1": params.b1, "W2": params.W2, "b2": params.b2}
    fields[name] = value
    return EmbeddingParams(fields["W1"], fields["b1"], fields["W2"], fields["b2"])


def max_relative_error(inst: GradCheckInstance, h: float = 1e-5, corrupt: float = 0.0) -> float:
    """Max over entries of |analytic - numeric| / max(1, |numeric|).

    The corrupt offset exists as a negative control: it shifts the analytic
    gradient so the check must fail.
    """
    analytic = grad_params(inst.params, inst.dataset, inst.tetrads, inst.v, inst.cfg, inst.direction, inst.normalized)
    numeric = numeric_gradient(inst, h)
    worst = 0.0
    for a, ncomp in zip((analytic.dW1, analytic.db1, analytic.dW2, analytic.db2), numeric):
        a = a + corrupt
        err = np.abs(a - ncomp) / np.maximum(1.0, np.abs(ncomp))
        worst = max(worst, float(err.max()))
    return worst


def run_gradient_check(
    n_instances: int = 20,
    base_seed: int = 0,
    h: float = 1e-5,
    corrupt: float = 0.0,
) -> float:
    """Worst relative error across seeded instances (small dims, n <= 8).

    Instance dimensions cycle through p, q <= 8, d <= 4, n <= 8 and cover
    both retrieval directions plus the normalized-similarity mode.
    """
    worst = 0.0
    for i in range(n_instances):
        seed = base_seed + i
        rng = np.random.default_rng(seed ^ 0x5EED)
        inst = make_instance(
            seed,
            n=int(rng.integers(4, 9)),
            p=int(rng.integers(2, 9)),
            q=int(rng.integers(2, 9)),
            d=int(rng.integers(1, 5)),
            direction="t2i" if i % 4 == 3 else "i2t",
            normalized=(i % 5 == 4),
        )
        worst = max(worst, max_relative_error(inst, h=h, corrupt=corrupt))
    return worst
