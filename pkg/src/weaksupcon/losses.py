"""Contrastive losses with analytic gradients.

Every loss L2-normalizes the embedding rows first and works on cosine
similarities ``S = U U^T``. With ``G = dL/dS`` (entries treated as
independent), the gradient with respect to the unit rows is ``(G + G^T) U``
and is pulled back through ``z -> z / |z|`` with ``(I - u u^T) / |z|``.
"""
import enum
from dataclasses import dataclass, field

import numpy as np

from .errors import IndexOutOfRange, LonelyLabel, ShapeMismatch, SubsetNotPairClosed
from .numerics import masked_row_logsumexp, row_norms, stable_logsumexp

NEGATIVE = 0
POSITIVE = 1

DEFAULT_TAU = 0.5


class LossKind(str, enum.Enum):
    SIMCLR = "simclr"
    SUPCON = "supcon"
    SIMILARITY = "similarity"
    WEAKSUPCON = "weaksupcon"

    @classmethod
    def parse(cls, name):
        if isinstance(name, cls):
            return name
        try:
            return cls(str(name).strip().lower())
        except ValueError:
            choices = ", ".join(k.value for k in cls)
            raise ValueError(f"unknown loss kind {name!r} (expected one of: {choices})") from None


@dataclass(frozen=True)
class ContrastiveBatch:
    """2N projected views, their pairing involution, per-view bag labels, and tau."""

    embeddings: np.ndarray
    pair_of: np.ndarray
    bag_label: np.ndarray
    tau: float = DEFAULT_TAU

    def __post_init__(self):
        z = np.asarray(self.embeddings, dtype=np.float64)
        pair = np.asarray(self.pair_of, dtype=np.int64)
        lab = np.asarray(self.bag_label, dtype=np.int64)
        object.__setattr__(self, "embeddings", z)
        object.__setattr__(self, "pair_of", pair)
        object.__setattr__(self, "bag_label", lab)
        k = z.shape[0] if z.ndim == 2 else -1
        if k < 2 or k % 2:
            raise ShapeMismatch(f"need an even number (>= 2) of view rows, got shape {z.shape}")
        if pair.shape != (k,) or lab.shape != (k,):
            raise ShapeMismatch("pair_of and bag_label must have one entry per view")
        if pair.min() < 0 or pair.max() >= k:
            raise IndexOutOfRange("pair_of points outside the batch")
        idx = np.arange(k)
        if np.any(pair == idx) or np.any(pair[pair] != idx):
            raise ValueError("pair_of must be a fixed-point-free involution")
        if not np.all(np.isin(lab, (NEGATIVE, POSITIVE))):
            raise ValueError("bag_label entries must be 0 (negative) or 1 (positive)")
        if np.any(lab[pair] != lab):
            raise ValueError("paired views must share a bag label")
        if not np.all(np.isfinite(z)):
            raise ValueError("embeddings contain non-finite entries")
        if not self.tau > 0:
            raise ValueError("tau must be > 0")

    @property
    def n_views(self):
        return self.embeddings.shape[0]

    @classmethod
    def from_pairs(cls, embeddings, bag_label, tau=DEFAULT_TAU):
        """Batch whose rows are laid out as [view_a of 0..N-1, view_b of 0..N-1]."""
        k = len(embeddings)
        n = k // 2
        pair = np.concatenate([np.arange(n, k), np.arange(n)])
        return cls(embeddings, pair, bag_label, tau)


@dataclass
class LossOutput:
    value: float
    grad: np.ndarray
    info: dict = field(default_factory=dict)


def _unit_rows(z):
    norms = row_norms(z)
    return z / norms[:, None], norms


def _pull_back(G, U, norms):
    gU = (G + G.T) @ U
    radial = np.einsum("ij,ij->i", gU, U)
    return (gU - radial[:, None] * U) / norms[:, None]


def _index_set(subset, k):
    if isinstance(subset, (set, frozenset)):
        subset = sorted(subset)
    idx = np.unique(np.asarray(subset, dtype=np.int64).ravel())
    if idx.size and (idx[0] < 0 or idx[-1] >= k):
        raise IndexOutOfRange("subset index outside the batch")
    return idx


def simclr_pair_term(i, j, s, tau):
    """-log softmax of ``s[i, j] / tau`` over all ``k != i`` in the index set of ``s``."""
    s = np.asarray(s, dtype=np.float64)
    k = s.shape[0]
    if not (0 <= i < k and 0 <= j < k) or i == j:
        raise IndexOutOfRange(f"need distinct indices in [0, {k}), got ({i}, {j})")
    others = np.delete(s[i], i) / tau
    return stable_logsumexp(others) - s[i, j] / tau


def simclr_loss(batch, subset=None, denominator=None):
    """Sum of NT-Xent pair terms ``l(i, p(i))`` over the views in ``subset``.

    The softmax denominator of view ``i`` runs over ``denominator`` (default:
    ``subset`` itself) minus ``i``.
    """
    z, pair, tau = batch.embeddings, batch.pair_of, batch.tau
    k = z.shape[0]
    rows = np.arange(k) if subset is None else _index_set(subset, k)
    cols = rows if denominator is None else _index_set(denominator, k)
    grad = np.zeros_like(z)
    if rows.size and not np.all(np.isin(pair[rows], rows)):
        raise SubsetNotPairClosed("subset must contain both views of every sample")
    if rows.size and not np.all(np.isin(rows, cols)):
        raise ValueError("denominator set must contain the subset")
    if rows.size == 0:
        return LossOutput(0.0, grad, {"n_views": 0})
    U, norms = _unit_rows(z)
    S = np.clip(U @ U.T, -1.0, 1.0)
    logits = S[np.ix_(rows, cols)] / tau
    mask = rows[:, None] != cols[None, :]
    lse = masked_row_logsumexp(logits, mask)
    pos = S[rows, pair[rows]] / tau
    value = float((lse - pos).sum())
    soft = np.where(mask, np.exp(logits - lse[:, None]), 0.0)
    G = np.zeros((k, k))
    G[np.ix_(rows, cols)] = soft / tau
    G[rows, pair[rows]] -= 1.0 / tau
    grad = _pull_back(G, U, norms)
    return LossOutput(value, grad, {"n_views": int(rows.size)})


def supcon_loss(batch, labels=None, strict=False):
    """Supervised contrastive loss summed over anchors.

    Anchors whose label appears on no other view are skipped (and counted in
    ``info["skipped"]``) unless ``strict`` is set, which raises ``LonelyLabel``.
    """
    z, tau = batch.embeddings, batch.tau
    k = z.shape[0]
    labels = batch.bag_label if labels is None else np.asarray(labels)
    if labels.shape != (k,):
        raise ShapeMismatch("one label per view required")
    same = labels[:, None] == labels[None, :]
    off_diag = ~np.eye(k, dtype=bool)
    positives = same & off_diag
    n_pos = positives.sum(axis=1)
    lonely = n_pos == 0
    if strict and lonely.any():
        raise LonelyLabel(f"view {int(np.flatnonzero(lonely)[0])} has no same-label partner")
    U, norms = _unit_rows(z)
    S = np.clip(U @ U.T, -1.0, 1.0)
    logits = S / tau
    lse = masked_row_logsumexp(logits, off_diag)
    valid = ~lonely
    denom = np.where(valid, n_pos, 1)
    mean_pos = np.where(positives, logits, 0.0).sum(axis=1) / denom
    value = float((lse - mean_pos)[valid].sum())
    soft = np.where(off_diag, np.exp(logits - lse[:, None]), 0.0)
    G = (soft - positives / denom[:, None]) / tau
    G[lonely] = 0.0
    grad = _pull_back(G, U, norms)
    return LossOutput(value, grad, {"skipped": int(lonely.sum())})


def similarity_loss(batch, subset=None, mean_normalize=False):
    """Negative mean-scaled sum of pairwise cosines over ``subset``, over tau.

    The inner sum over partners is not averaged unless ``mean_normalize``.
    """
    z, tau = batch.embeddings, batch.tau
    k = z.shape[0]
    rows = np.arange(k) if subset is None else _index_set(subset, k)
    m = rows.size
    grad = np.zeros_like(z)
    if m < 2:
        return LossOutput(0.0, grad, {"n_views": int(m)})
    scale = 1.0 / (m * tau)
    if mean_normalize:
        scale /= m - 1
    U, norms = _unit_rows(z)
    Us = U[rows]
    S = np.clip(Us @ Us.T, -1.0, 1.0)
    value = -scale * float(S.sum() - np.trace(S))
    G = np.zeros((k, k))
    block = np.full((m, m), -scale)
    np.fill_diagonal(block, 0.0)
    G[np.ix_(rows, rows)] = block
    grad = _pull_back(G, U, norms)
    return LossOutput(value, grad, {"n_views": int(m)})


def weaksupcon_loss(batch, simclr_denominator="group", similarity_mean_normalize=False,
                    simclr_weight=1.0):
    """Similarity loss on negative-bag views plus SimCLR on positive-bag views."""
    if simclr_denominator not in ("group", "batch"):
        raise ValueError("simclr_denominator must be 'group' or 'batch'")
    neg = np.flatnonzero(batch.bag_label == NEGATIVE)
    pos = np.flatnonzero(batch.bag_label == POSITIVE)
    sim = similarity_loss(batch, neg, mean_normalize=similarity_mean_normalize)
    den = None if simclr_denominator == "group" else np.arange(batch.n_views)
    clr = simclr_loss(batch, pos, denominator=den)
    value = sim.value + simclr_weight * clr.value
    grad = sim.grad + simclr_weight * clr.grad
    return LossOutput(value, grad, {
        "similarity": sim.value,
        "simclr": clr.value,
        "n_neg_views": int(neg.size),
        "n_pos_views": int(pos.size),
    })


def loss_and_grad(kind, batch, *, simclr_denominator="group", similarity_mean_normalize=False,
                  simclr_weight=1.0, supcon_strict=False):
    kind = LossKind.parse(kind)
    if kind is LossKind.SIMCLR:
        return simclr_loss(batch)
    if kind is LossKind.SUPCON:
        # pseudo-labels: every view inherits its bag's label
        return supcon_loss(batch, batch.bag_label, strict=supcon_strict)
    if kind is LossKind.SIMILARITY:
        return similarity_loss(batch, mean_normalize=similarity_mean_normalize)
    return weaksupcon_loss(batch, simclr_denominator=simclr_denominator,
                           similarity_mean_normalize=similarity_mean_normalize,
                           simclr_weight=simclr_weight)
