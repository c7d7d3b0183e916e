"""
Losses and class-weight machinery for label alignment.

- cross_entropy: weighted mean of -log p[label] over the batch.
- source_class_weights / target_class_weights: weight(y) = max_y' c(y') / c(y),
  so every non-empty class carries the same total weight in its domain.
- weighted_label_loss: batch estimator of the weighted source loss.
- weighted_domain_loss: source and target terms, each averaged over its own
  rows, summed. The discriminator output is a 2-way softmax over
  {0 = target, 1 = source}.

The *_grad functions return gradients w.r.t. the logits of the softmax that
produced the probabilities (fused softmax + cross-entropy), ready for
Mlp.backward(..., wrt_logits=True).
"""
import logging
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from utils.errors import InvalidArgumentError

logger = logging.getLogger(__name__)

# Probabilities are clamped from below before taking the log.
LOG_CLAMP = 1e-12

SOURCE_DOMAIN = 1
TARGET_DOMAIN = 0


def _validate(probs: np.ndarray, labels: np.ndarray, weights: Optional[np.ndarray]):
    probs = np.asarray(probs)
    labels = np.asarray(labels)
    if probs.ndim != 2:
        raise InvalidArgumentError(f"probabilities must be 2-D, got shape {probs.shape}")
    n, k = probs.shape
    if n == 0:
        raise InvalidArgumentError("cannot compute a loss over an empty batch")
    if labels.shape != (n,):
        raise InvalidArgumentError(f"expected {n} labels, got shape {labels.shape}")
    if not np.issubdtype(labels.dtype, np.integer):
        raise InvalidArgumentError(f"labels must be integers, got {labels.dtype}")
    if labels.min() < 0 or labels.max() >= k:
        raise InvalidArgumentError(f"labels must lie in [0, {k}), got range [{labels.min()}, {labels.max()}]")
    if weights is None:
        weights = np.ones(n, dtype=probs.dtype)
    else:
        weights = np.asarray(weights, dtype=probs.dtype)
        if weights.shape != (n,):
            raise InvalidArgumentError(f"expected {n} instance weights, got shape {weights.shape}")
    return probs, labels, weights


def cross_entropy(
    probs: np.ndarray,
    labels: np.ndarray,
    instance_weights: Optional[np.ndarray] = None,
) -> float:
    """(1/B) * sum_i w_i * -log(max(probs[i, y_i], 1e-12))."""
    probs, labels, weights = _validate(probs, labels, instance_weights)
    picked = probs[np.arange(len(labels)), labels]
    return float(np.sum(weights * -np.log(np.maximum(picked, LOG_CLAMP))) / len(labels))


def cross_entropy_logit_grad(
    probs: np.ndarray,
    labels: np.ndarray,
    instance_weights: Optional[np.ndarray] = None,
) -> np.ndarray:
    """Gradient of cross_entropy w.r.t. the softmax logits: w_i (p_i - onehot_i) / B."""
    probs, labels, weights = _validate(probs, labels, instance_weights)
    grad = probs.copy()
    grad[np.arange(len(labels)), labels] -= 1.0
    grad *= (weights / len(labels))[:, None]
    return grad


# =============================================================================
# Class Weights
# =============================================================================

@dataclass
class ClassWeightTable:
    """Per-class weights; classes with zero count get weight 0 and are listed."""
    weights: np.ndarray
    counts: np.ndarray
    empty_classes: List[int] = field(default_factory=list)

    @property
    def num_classes(self) -> int:
        return len(self.weights)

    @classmethod
    def uniform(cls, num_classes: int) -> "ClassWeightTable":
        """All-ones table, used when class weighting is switched off."""
        return cls(
            weights=np.ones(num_classes),
            counts=np.zeros(num_classes, dtype=np.int64),
        )

    def lookup(self, labels: np.ndarray) -> np.ndarray:
        """Per-instance weights for the given class ids."""
        return self.weights[np.asarray(labels, dtype=np.int64)]


def _class_weight_table(labels: np.ndarray, num_classes: int, domain: str) -> ClassWeightTable:
    labels = np.asarray(labels)
    if labels.size == 0:
        raise InvalidArgumentError(f"cannot compute {domain} class weights from an empty label list")
    if num_classes < 1:
        raise InvalidArgumentError(f"num_classes must be >= 1, got {num_classes}")
    labels = labels.astype(np.int64, copy=False)
    if labels.min() < 0 or labels.max() >= num_classes:
        raise InvalidArgumentError(
            f"{domain} labels must lie in [0, {num_classes}), got range [{labels.min()}, {labels.max()}]"
        )

    counts = np.bincount(labels, minlength=num_classes)
    nonempty = counts > 0
    weights = np.zeros(num_classes, dtype=np.float64)
    # Ratio of counts equals the ratio of class fractions.
    weights[nonempty] = counts.max() / counts[nonempty]

    empty = np.flatnonzero(~nonempty).tolist()
    if empty:
        logger.warning(f"⚠️ {domain} classes with no instances get weight 0: {empty}")
    return ClassWeightTable(weights=weights, counts=counts, empty_classes=empty)


def source_class_weights(labels: np.ndarray, num_classes: int) -> ClassWeightTable:
    """w_S(y) = max_y' c_S(y') / c_S(y) over the true source labels."""
    return _class_weight_table(labels, num_classes, "source")


def target_class_weights(pseudo: np.ndarray, num_classes: int) -> ClassWeightTable:
    """Same rule as source_class_weights, over target pseudo-label counts."""
    return _class_weight_table(pseudo, num_classes, "target")


def pseudo_labels(probs: np.ndarray) -> np.ndarray:
    """Row-wise argmax; ties go to the lowest class index."""
    probs = np.asarray(probs)
    if probs.ndim != 2:
        raise InvalidArgumentError(f"probabilities must be 2-D, got shape {probs.shape}")
    return np.argmax(probs, axis=1)


# =============================================================================
# Batches & Weighted Losses
# =============================================================================

@dataclass
class LabeledBatch:
    """Source rows with their labels and class weights."""
    features: np.ndarray
    labels: np.ndarray
    instance_weights: np.ndarray

    def __post_init__(self):
        n = len(self.features)
        if len(self.labels) != n or len(self.instance_weights) != n:
            raise InvalidArgumentError(
                f"row counts disagree: features {n}, labels {len(self.labels)}, "
                f"weights {len(self.instance_weights)}"
            )
        if np.any(np.asarray(self.instance_weights) <= 0):
            raise InvalidArgumentError("instance weights must be positive")


@dataclass
class DomainBatch:
    """Concatenated source + target rows with domain ids (1 = source, 0 = target)."""
    features: np.ndarray
    domain_ids: np.ndarray
    instance_weights: np.ndarray

    def __post_init__(self):
        n = len(self.features)
        if len(self.domain_ids) != n or len(self.instance_weights) != n:
            raise InvalidArgumentError(
                f"row counts disagree: features {n}, domain ids {len(self.domain_ids)}, "
                f"weights {len(self.instance_weights)}"
            )
        if not np.isin(self.domain_ids, (SOURCE_DOMAIN, TARGET_DOMAIN)).all():
            raise InvalidArgumentError("domain ids must be 0 (target) or 1 (source)")

    @classmethod
    def concat(
        cls,
        source_features: np.ndarray,
        source_weights: np.ndarray,
        target_features: np.ndarray,
        target_weights: np.ndarray,
    ) -> "DomainBatch":
        """Source rows first, then target rows."""
        return cls(
            features=np.concatenate([source_features, target_features]),
            domain_ids=np.concatenate([
                np.full(len(source_features), SOURCE_DOMAIN, dtype=np.int64),
                np.full(len(target_features), TARGET_DOMAIN, dtype=np.int64),
            ]),
            instance_weights=np.concatenate([source_weights, target_weights]),
        )


def weighted_label_loss(classifier_probs: np.ndarray, batch: LabeledBatch) -> float:
    return cross_entropy(classifier_probs, batch.labels, batch.instance_weights)


def weighted_label_loss_grad(classifier_probs: np.ndarray, batch: LabeledBatch) -> np.ndarray:
    return cross_entropy_logit_grad(classifier_probs, batch.labels, batch.instance_weights)


def _domain_split(discriminator_probs: np.ndarray, batch: DomainBatch):
    probs = np.asarray(discriminator_probs)
    if probs.ndim != 2 or probs.shape[1] != 2:
        raise InvalidArgumentError(f"discriminator output must have 2 columns, got shape {probs.shape}")
    if probs.shape[0] != len(batch.domain_ids):
        raise InvalidArgumentError(
            f"{probs.shape[0]} discriminator rows for a batch of {len(batch.domain_ids)}"
        )
    source = np.asarray(batch.domain_ids) == SOURCE_DOMAIN
    if source.all() or not source.any():
        raise InvalidArgumentError("a domain batch needs at least one source and one target row")
    return probs, source, ~source


def weighted_domain_loss(discriminator_probs: np.ndarray, batch: DomainBatch) -> float:
    """Weighted source term + weighted target term, each a per-domain mean."""
    probs, source, target = _domain_split(discriminator_probs, batch)
    weights = np.asarray(batch.instance_weights)
    source_term = cross_entropy(
        probs[source], np.full(source.sum(), SOURCE_DOMAIN), weights[source]
    )
    target_term = cross_entropy(
        probs[target], np.full(target.sum(), TARGET_DOMAIN), weights[target]
    )
    return source_term + target_term


def weighted_domain_loss_grad(discriminator_probs: np.ndarray, batch: DomainBatch) -> np.ndarray:
    probs, source, target = _domain_split(discriminator_probs, batch)
    weights = np.asarray(batch.instance_weights)
    grad = np.empty_like(probs)
    grad[source] = cross_entropy_logit_grad(
        probs[source], np.full(source.sum(), SOURCE_DOMAIN), weights[source]
    )
    grad[target] = cross_entropy_logit_grad(
        probs[target], np.full(target.sum(), TARGET_DOMAIN), weights[target]
    )
    return grad
