"""
LAD model container and per-run random streams.

Architecture:
- classifier:    feat_dim -> H -> H -> K, ReLU + dropout on hidden, softmax out
- discriminator: K -> H -> H -> 2, ReLU, no dropout, softmax over {target, source}

Two optimizer states mirror the two training passes of a step: the label
pass updates the classifier only; the domain pass updates the discriminator
and, through the gradient reversal layer, the classifier.
"""
import logging
from dataclasses import dataclass
from typing import Dict, List, Optional

import numpy as np

from engines.network import Mlp
from engines.optimizer import OptimizerState
from models.schemas import TrainConfig
from utils.errors import InvariantViolationError

logger = logging.getLogger(__name__)

DOMAIN_CLASSES = 2


@dataclass
class RunRngs:
    """Independent generators per purpose, spawned from one seed."""
    init: np.random.Generator
    shuffle: np.random.Generator
    dropout: np.random.Generator

    STREAMS = ("init", "shuffle", "dropout")

    @classmethod
    def from_seed(cls, seed: int) -> "RunRngs":
        children = np.random.SeedSequence(seed).spawn(len(cls.STREAMS))
        return cls(*(np.random.Generator(np.random.PCG64(child)) for child in children))

    def state(self) -> Dict[str, dict]:
        return {name: getattr(self, name).bit_generator.state for name in self.STREAMS}

    def restore(self, states: Dict[str, dict]) -> None:
        for name in self.STREAMS:
            getattr(self, name).bit_generator.state = states[name]


@dataclass
class LadModel:
    """Label classifier, optional domain discriminator and their optimizer states."""
    classifier: Mlp
    classifier_opt: OptimizerState
    discriminator: Optional[Mlp] = None
    domain_opt: Optional[OptimizerState] = None
    reverse_gradient: bool = True

    def __post_init__(self):
        if self.discriminator is None:
            return
        if self.discriminator.input_width != self.classifier.output_width:
            raise InvariantViolationError(
                f"discriminator input width {self.discriminator.input_width} != "
                f"classifier output width {self.classifier.output_width}"
            )
        if any(layer.dropout_rate for layer in self.discriminator.layers):
            raise InvariantViolationError("the discriminator must not use dropout")

    @classmethod
    def build(
        cls,
        feat_dim: int,
        num_classes: int,
        config: TrainConfig,
        rng: np.random.Generator,
        with_discriminator: bool = True,
    ) -> "LadModel":
        dtype = np.dtype(config.dtype)
        width = config.hidden_width
        classifier = Mlp.build(
            [feat_dim, width, width, num_classes], rng, dropout_rate=config.dropout_rate, dtype=dtype
        )
        model = cls(
            classifier=classifier,
            classifier_opt=OptimizerState.zeros_like(
                classifier.parameters(), config.learning_rate, config.momentum
            ),
            reverse_gradient=config.reverse_gradient,
        )
        if with_discriminator:
            model.discriminator = Mlp.build(
                [num_classes, width, width, DOMAIN_CLASSES], rng, dropout_rate=0.0, dtype=dtype
            )
            model.domain_opt = OptimizerState.zeros_like(
                model.domain_parameters(), config.learning_rate, config.momentum
            )
            model.__post_init__()
        logger.debug(
            f"Built model: classifier {feat_dim}->{width}->{width}->{num_classes}, "
            f"discriminator={'yes' if with_discriminator else 'no'}, dtype={dtype}"
        )
        return model

    @property
    def num_classes(self) -> int:
        return self.classifier.output_width

    @property
    def adversarial(self) -> bool:
        return self.discriminator is not None

    def domain_parameters(self) -> List[np.ndarray]:
        """Parameters moved by the domain pass: discriminator, then classifier if the GRL is active."""
        if self.discriminator is None:
            return []
        params = self.discriminator.parameters()
        if self.reverse_gradient:
            params = params + self.classifier.parameters()
        return params

    def eval(self) -> "LadModel":
        self.classifier.eval()
        if self.discriminator is not None:
            self.discriminator.eval()
        return self

    def train(self) -> "LadModel":
        self.classifier.train()
        if self.discriminator is not None:
            self.discriminator.train()
        return self
