"""Retrieval and ranking-quality metrics.

Ground truth is the pair structure: for each query, exactly the aligned
counterpart is relevant. Average precision supports two normalizations:
"by_relevant" divides by min(#relevant, R) (the common mAP convention) and
"by_r" divides by R itself. Ties in retrieval break toward the lower item
index, so every ranking here is deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence, Union

import numpy as np

from .core import Dataset, EmbeddingParams
from .embed import embed_images, embed_texts, inner_scores, normalized_scores, map_image, map_text
from .errors import ConfigInvalid, DimensionMismatch, InvalidCutoff

MODES = ("by_relevant", "by_r")
DIRECTIONS = ("i2t", "t2i")


@dataclass(frozen=True)
class RankedList:
    """Items sorted by descending score for one query."""

    query_index: Optional[int]
    indices: np.ndarray
    scores: np.ndarray


@dataclass(frozen=True)
class EvalResult:
    """Per-query average precision plus the aggregate."""

    per_query: np.ndarray
    mean: float
    r: Union[int, str]
    direction: str
    mode: str
    query_ids: Optional[tuple[str, ...]] = None

    def to_text(self) -> str:
        """Flat text record: one 'query_id ap' line per query, then a trailer."""
        lines = ["# per-query average precision"]
        for i, ap in enumerate(self.per_query):
            qid = self.query_ids[i] if self.query_ids is not None else str(i)
            lines.append(f"{qid} {ap:.17g}")
        lines.append(f"mAP {self.mean:.17g}")
        lines.append(f"R {self.r}")
        lines.append(f"direction {self.direction}")
        lines.append(f"mode {self.mode}")
        return "\n".join(lines) + "\n"


def _stable_descending(scores: np.ndarray) -> np.ndarray:
    # stable sort on negated scores: equal scores keep ascending index order
    return np.argsort(-scores, kind="stable")


def _check_mode(mode: str) -> None:
    if mode not in MODES:
        raise ConfigInvalid(f"mode must be one of {MODES}, got {mode!r}")


def _resolve_r(r: Union[int, str], n: int) -> int:
    if isinstance(r, str):
        if r != "all":
            raise InvalidCutoff(f"cutoff must be a positive integer or 'all', got {r!r}")
        return n
    r = int(r)
    if r < 1:
        raise InvalidCutoff("cutoff must be at least 1")
    return r


def average_precision(relevance: Sequence, r: Union[int, str], mode: str = "by_relevant") -> float:
    """AP of a ranked relevance list: sum of Prec(j)*Rel(j) over j <= R, normalized.

    Returns 0 when the list holds no relevant item.
    """
    _check_mode(mode)
    rel = np.asarray(relevance, dtype=np.float64)
    r_eff = _resolve_r(r, len(rel))
    total_relevant = int(np.sum(rel > 0))
    if total_relevant == 0:
        return 0.0
    top = rel[: min(r_eff, len(rel))]
    ranks = np.arange(1, len(top) + 1, dtype=np.float64)
    precision_at = np.cumsum(top) / ranks
    summed = float(np.sum(precision_at * top))
    if mode == "by_r":
        return summed / r_eff
    return summed / min(total_relevant, r_eff)


def retrieve(
    params: EmbeddingParams,
    query,
    corpus,
    direction: str = "i2t",
    top_k: Optional[int] = None,
    normalized: bool = False,
    query_index: Optional[int] = None,
) -> RankedList:
    """Rank a corpus of the opposite modality against one query vector."""
    if direction not in DIRECTIONS:
        raise ConfigInvalid(f"direction must be one of {DIRECTIONS}, got {direction!r}")
    corpus = np.asarray(corpus, dtype=np.float64)
    if corpus.ndim != 2:
        raise DimensionMismatch("corpus must be a feature matrix")
    if direction == "i2t":
        h = map_image(params, query)[None, :]
        E = embed_texts(params, corpus)
    else:
        h = map_text(params, query)[None, :]
        E = embed_images(params, corpus)
    scores = (normalized_scores(h, E) if normalized else inner_scores(h, E))[0]
    order = _stable_descending(scores)
    if top_k is not None:
        if top_k < 1:
            raise InvalidCutoff("top_k must be at least 1")
        order = order[:top_k]
    return RankedList(query_index, order, scores[order])


def mean_ap(
    params: EmbeddingParams,
    dataset_test: Dataset,
    direction: str = "i2t",
    r: Union[int, str] = "all",
    mode: str = "by_relevant",
    normalized: bool = False,
) -> EvalResult:
    """mAP over all queries of a paired test set; relevance is the aligned item."""
    if direction not in DIRECTIONS:
        raise ConfigInvalid(f"direction must be one of {DIRECTIONS}, got {direction!r}")
    _check_mode(mode)
    H = embed_images(params, dataset_test.images)
    G = embed_texts(params, dataset_test.texts)
    S = normalized_scores(H, G) if normalized else inner_scores(H, G)
    if direction == "t2i":
        S = S.T  # rows become text queries over image items
    n = dataset_test.n
    _resolve_r(r, n)  # validate early
    aps = np.empty(n)
    for k in range(n):
        order = _stable_descending(S[k])
        relevance = (order == k).astype(np.float64)
        aps[k] = average_precision(relevance, r if isinstance(r, str) else int(r), mode)
    return EvalResult(
        per_query=aps,
        mean=float(np.mean(aps)),
        r=r,
        direction=direction,
        mode=mode,
        query_ids=dataset_test.ids,
    )


def random_baseline(
    dataset_test: Dataset,
    direction: str = "i2t",
    r: Union[int, str] = "all",
    seed: int = 0,
    trials: int = 100,
    mode: str = "by_relevant",
) -> float:
    """Mean mAP of uniformly random rankings, the floor for trained models."""
    if direction not in DIRECTIONS:
        raise ConfigInvalid(f"direction must be one of {DIRECTIONS}, got {direction!r}")
    _check_mode(mode)
    if trials < 1:
        raise ConfigInvalid("trials must be at least 1")
    n = dataset_test.n
    _resolve_r(r, n)
    rng = np.random.default_rng(seed)
    trial_maps = np.empty(trials)
    for t in range(trials):
        aps = np.empty(n)
        for k in range(n):
            order = rng.permutation(n)
            relevance = (order == k).astype(np.float64)
            aps[k] = average_precision(relevance, r, mode)
        trial_maps[t] = float(np.mean(aps))
    return float(np.mean(trial_maps))
