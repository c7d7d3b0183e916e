"""
LAD training loop and the no-discriminator baseline.

One epoch is one pass over the source domain. Per source batch:
1. label pass: one SGD step on the weighted source loss (classifier only);
2. domain pass: the source batch and a target batch are concatenated, fed
   through classifier -> GRL -> discriminator, and one SGD step on the
   weighted domain loss updates the discriminator, while the reversed
   gradient pushes the classifier to make the domains indistinguishable.

Target weights are 1 during epoch 1 and are recomputed from pseudo-labels
(EVAL mode, dropout off) at the end of every epoch. Training always runs
exactly n_epochs; the returned predictions are those of the final epoch.
"""
import logging
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Tuple, Union

import numpy as np

from data.batching import batches
from data.datasets import FeatureDataset
from engines.network import grl_backward, grl_forward
from engines.objective import (
    SOURCE_DOMAIN,
    ClassWeightTable,
    DomainBatch,
    LabeledBatch,
    cross_entropy,
    pseudo_labels,
    source_class_weights,
    target_class_weights,
    weighted_domain_loss,
    weighted_domain_loss_grad,
    weighted_label_loss,
    weighted_label_loss_grad,
)
from engines.optimizer import sgd_nesterov_step
from memory.checkpoint import (
    CHECKPOINT_NAME,
    Checkpoint,
    TrainState,
    load_checkpoint,
    restore_checkpoint,
    save_checkpoint,
)
from models.schemas import HistorySnapshot, TrainConfig, TrainHistory
from orchestrator.model import LadModel, RunRngs
from utils.errors import DataError

logger = logging.getLogger(__name__)


@dataclass
class TrainResult:
    """Outcome of one training run."""
    model: LadModel
    history: TrainHistory
    predictions: np.ndarray
    target_weights: np.ndarray
    total_steps: int


class LadTrainer:
    """
    Runs LAD (or the baseline) for one TrainConfig.

    Example:
        trainer = LadTrainer(TrainConfig(n_epochs=300, seed=3))
        result = trainer.lad_train(source, target)
        print(result.history.final)
    """

    def __init__(self, config: TrainConfig, checkpoint_dir: Optional[Path] = None):
        self.config = config
        self.checkpoint_dir = Path(checkpoint_dir) if checkpoint_dir is not None else None

    # -------------------------------------------------------------------------
    # Entry points
    # -------------------------------------------------------------------------

    def lad_train(
        self,
        source: FeatureDataset,
        target: FeatureDataset,
        resume_from: Optional[Union[Path, str, Checkpoint]] = None,
    ) -> TrainResult:
        return self._fit(source, target, adversarial=True, resume_from=resume_from)

    def baseline_train(
        self,
        source: FeatureDataset,
        target: FeatureDataset,
        resume_from: Optional[Union[Path, str, Checkpoint]] = None,
    ) -> TrainResult:
        """Classifier-only training on the weighted source loss."""
        return self._fit(source, target, adversarial=False, resume_from=resume_from)

    # -------------------------------------------------------------------------
    # Steps
    # -------------------------------------------------------------------------

    def classifier_step(
        self,
        model: LadModel,
        features: np.ndarray,
        labels: np.ndarray,
        weights: np.ndarray,
        rng: np.random.Generator,
    ) -> float:
        """One SGD step on the weighted source loss; returns the pre-step loss."""
        batch = LabeledBatch(features=features, labels=labels, instance_weights=weights)
        trace = model.classifier.forward(features, rng)
        grad = weighted_label_loss_grad(trace.output, batch)
        grads = model.classifier.backward(trace, grad, wrt_logits=True, input_grad=False)
        sgd_nesterov_step(model.classifier.parameters(), grads.as_list(), model.classifier_opt)
        return weighted_label_loss(trace.output, batch)

    def adversarial_step(
        self,
        model: LadModel,
        source_features: np.ndarray,
        source_weights: np.ndarray,
        target_features: np.ndarray,
        target_weights: np.ndarray,
        rng: np.random.Generator,
    ) -> float:
        """One SGD step on the weighted domain loss; returns the pre-step loss."""
        batch = DomainBatch.concat(source_features, source_weights, target_features, target_weights)
        class_trace = model.classifier.forward(batch.features, rng)
        domain_trace = model.discriminator.forward(grl_forward(class_trace.output), rng)
        grad = weighted_domain_loss_grad(domain_trace.output, batch)
        domain_grads = model.discriminator.backward(domain_trace, grad, wrt_logits=True)

        grads = domain_grads.as_list()
        if model.reverse_gradient:
            class_grads = model.classifier.backward(
                class_trace, grl_backward(domain_grads.inputs), input_grad=False
            )
            grads += class_grads.as_list()
        sgd_nesterov_step(model.domain_parameters(), grads, model.domain_opt)
        return weighted_domain_loss(domain_trace.output, batch)

    # -------------------------------------------------------------------------
    # Target weights & diagnostics
    # -------------------------------------------------------------------------

    def recompute_target_weights(
        self,
        model: LadModel,
        target: Union[FeatureDataset, np.ndarray],
        epoch: Optional[int] = None,
    ) -> Tuple[np.ndarray, np.ndarray]:
        """
        Per-instance target weights to use during `epoch` (all 1 for epoch 1)
        plus the pseudo-labels they were derived from.
        """
        features = target.features if isinstance(target, FeatureDataset) else target
        return self._weights_from_probs(model.classifier.predict(features), model.num_classes, epoch)

    def _weights_from_probs(
        self,
        probs: np.ndarray,
        num_classes: int,
        epoch: Optional[int],
    ) -> Tuple[np.ndarray, np.ndarray]:
        pseudo = pseudo_labels(probs)
        if epoch == 1 or not self.config.use_class_weights:
            return np.ones(len(pseudo)), pseudo

        table = target_class_weights(pseudo, num_classes)
        predicted = np.flatnonzero(table.counts)
        if len(predicted) == 1:
            logger.warning(f"⚠️ Pseudo-labels collapsed onto class {int(predicted[0])}")
        return table.lookup(pseudo), pseudo

    def _snapshot(
        self,
        model: LadModel,
        epoch: int,
        source: FeatureDataset,
        target: FeatureDataset,
        elapsed: float,
        target_probs: Optional[np.ndarray] = None,
    ) -> HistorySnapshot:
        source_probs = model.classifier.predict(source.features)
        if target_probs is None:
            target_probs = model.classifier.predict(target.features)
        snapshot = HistorySnapshot(
            epoch=epoch,
            source_class_loss=cross_entropy(source_probs, source.labels),
            wallclock=elapsed,
        )
        if target.has_labels:
            snapshot.target_class_loss = cross_entropy(target_probs, target.labels)
            snapshot.target_accuracy = float(np.mean(pseudo_labels(target_probs) == target.labels))
        if model.adversarial:
            snapshot.discriminator_accuracy = _domain_accuracy(model, source_probs, target_probs)
        return snapshot

    # -------------------------------------------------------------------------
    # Loop
    # -------------------------------------------------------------------------

    def _fit(
        self,
        source: FeatureDataset,
        target: FeatureDataset,
        adversarial: bool,
        resume_from: Optional[Union[Path, str, Checkpoint]],
    ) -> TrainResult:
        config = self.config
        num_classes = _validate_domains(source, target)
        rngs = RunRngs.from_seed(config.seed)
        model = LadModel.build(source.dim, num_classes, config, rngs.init, with_discriminator=adversarial)

        dtype = model.classifier.dtype
        source_x = source.features.astype(dtype, copy=False)
        target_x = target.features.astype(dtype, copy=False)
        source_y = source.labels

        source_table = (
            source_class_weights(source_y, num_classes)
            if config.use_class_weights
            else ClassWeightTable.uniform(num_classes)
        )
        source_w = source_table.lookup(source_y)

        state = TrainState(
            epoch=0,
            total_steps=0,
            elapsed=0.0,
            target_weights=np.ones(len(target)),
            predictions=None,
            history=TrainHistory(),
        )
        if resume_from is not None:
            checkpoint = (
                resume_from if isinstance(resume_from, Checkpoint) else load_checkpoint(resume_from)
            )
            state = restore_checkpoint(checkpoint, model, rngs)
            logger.info(f"▶️ Resuming from epoch {state.epoch}")

        method = "LAD" if adversarial else "baseline"
        logger.info(
            f"🚀 {method} training: {len(source)} source / {len(target)} target rows, "
            f"K={num_classes}, epochs={config.n_epochs}, seed={config.seed}"
        )
        started = time.perf_counter() - state.elapsed

        for epoch in range(state.epoch + 1, config.n_epochs + 1):
            model.train()
            target_stream = (
                batches(len(target), config.batch_size, rngs.shuffle, cycling=True)
                if adversarial else None
            )
            for idx in batches(len(source), config.batch_size, rngs.shuffle):
                label_loss = self.classifier_step(
                    model, source_x[idx], source_y[idx], source_w[idx], rngs.dropout
                )
                if adversarial:
                    tidx = next(target_stream)
                    domain_loss = self.adversarial_step(
                        model, source_x[idx], source_w[idx],
                        target_x[tidx], state.target_weights[tidx], rngs.dropout,
                    )
                    logger.debug(f"step {state.total_steps}: L_S={label_loss:.5f} L_D={domain_loss:.5f}")
                else:
                    logger.debug(f"step {state.total_steps}: L_S={label_loss:.5f}")
                state.total_steps += 1

            model.eval()
            target_probs = model.classifier.predict(target_x)
            state.target_weights, state.predictions = self._weights_from_probs(
                target_probs, num_classes, epoch=epoch + 1
            )
            state.epoch = epoch
            state.elapsed = time.perf_counter() - started

            if epoch % config.record_every == 0 or epoch == config.n_epochs:
                snapshot = self._snapshot(model, epoch, source, target, state.elapsed, target_probs)
                state.history.record(snapshot)
                logger.info(
                    f"Epoch {epoch}/{config.n_epochs}: source loss {snapshot.source_class_loss:.4f}"
                    + (f", target acc {snapshot.target_accuracy:.3f}" if snapshot.target_accuracy is not None else "")
                    + (f", disc acc {snapshot.discriminator_accuracy:.3f}"
                       if snapshot.discriminator_accuracy is not None else "")
                )
            if config.checkpoint_every and epoch % config.checkpoint_every == 0:
                self._checkpoint(model, rngs, state)

        logger.info(f"✅ {method} training finished in {state.elapsed:.1f}s ({state.total_steps} steps)")
        return TrainResult(
            model=model,
            history=state.history,
            predictions=state.predictions,
            target_weights=state.target_weights,
            total_steps=state.total_steps,
        )

    def _checkpoint(self, model: LadModel, rngs: RunRngs, state: TrainState) -> None:
        if self.checkpoint_dir is None:
            logger.warning("⚠️ checkpoint_every is set but no checkpoint directory was given")
            return
        self.checkpoint_dir.mkdir(parents=True, exist_ok=True)
        save_checkpoint(self.checkpoint_dir / CHECKPOINT_NAME, model, rngs, state, self.config)


# =============================================================================
# Module-level helpers
# =============================================================================

def _validate_domains(source: FeatureDataset, target: FeatureDataset) -> int:
    """Check the pair of domains; returns the class count K."""
    if len(source) == 0 or len(target) == 0:
        raise DataError(f"empty domain: source has {len(source)} rows, target {len(target)}")
    if not source.has_labels:
        raise DataError(f"source dataset {source.name!r} has no labels")
    if source.dim != target.dim:
        raise DataError(f"feature-dimension mismatch: source {source.dim}, target {target.dim}")
    num_classes = source.num_classes
    if target.num_classes is not None and target.num_classes != num_classes:
        raise DataError(f"class count mismatch: source K={num_classes}, target K={target.num_classes}")
    return num_classes


def _domain_accuracy(model: LadModel, source_probs: np.ndarray, target_probs: np.ndarray) -> float:
    domain_probs = model.discriminator.predict(np.concatenate([source_probs, target_probs]))
    truth = np.concatenate([
        np.full(len(source_probs), SOURCE_DOMAIN),
        np.full(len(target_probs), 1 - SOURCE_DOMAIN),
    ])
    return float(np.mean(pseudo_labels(domain_probs) == truth))


def discriminator_accuracy(model: LadModel, source: FeatureDataset, target: FeatureDataset) -> float:
    """Fraction of instances whose domain D(C(x)) predicts correctly (EVAL mode)."""
    if not model.adversarial:
        raise DataError("model has no discriminator")
    return _domain_accuracy(
        model,
        model.classifier.predict(source.features),
        model.classifier.predict(target.features),
    )


def lad_train(source: FeatureDataset, target: FeatureDataset, config: TrainConfig, **kwargs) -> TrainResult:
    return LadTrainer(config, kwargs.pop("checkpoint_dir", None)).lad_train(source, target, **kwargs)


def baseline_train(source: FeatureDataset, target: FeatureDataset, config: TrainConfig, **kwargs) -> TrainResult:
    return LadTrainer(config, kwargs.pop("checkpoint_dir", None)).baseline_train(source, target, **kwargs)
