"""
Dense neural-network engine used for both the label classifier and the
domain discriminator.

Arrays are plain two-dimensional numpy arrays (rows = batch, cols = features).
Each DenseLayer computes, in order:

    z = x @ W + b
    a = activation(z)
    out = dropout(a)        # inverted dropout, TRAIN mode only

Mlp.forward returns an ActivationTrace holding everything Mlp.backward needs,
so the network itself stays stateless between passes. The gradient reversal
layer is a pair of free functions (grl_forward / grl_backward) placed between
the classifier output and the discriminator input by the trainer.
"""
import logging
from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np

from models.schemas import Activation, Mode
from utils.errors import InvalidArgumentError, InvariantViolationError, ShapeError

logger = logging.getLogger(__name__)


# =============================================================================
# Elementwise Operations
# =============================================================================

def glorot_uniform_init(
    fan_in: int,
    fan_out: int,
    rng: np.random.Generator,
    dtype=np.float64,
) -> np.ndarray:
    """
    Sample a (fan_in, fan_out) weight matrix uniformly on [-L, L] with
    L = sqrt(6 / (fan_in + fan_out)). Biases are zero-initialized by the caller.
    """
    if fan_in < 1 or fan_out < 1:
        raise InvalidArgumentError(
            f"fan dimensions must be >= 1, got fan_in={fan_in}, fan_out={fan_out}"
        )
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out)).astype(dtype, copy=False)


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def softmax(logits: np.ndarray) -> np.ndarray:
    """Row-wise softmax with max subtraction."""
    shifted = logits - logits.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    return exp / exp.sum(axis=1, keepdims=True)


def dropout_forward(
    x: np.ndarray,
    rate: float,
    rng: Optional[np.random.Generator],
    mode: Mode,
) -> tuple[np.ndarray, Optional[np.ndarray]]:
    """
    Inverted dropout. Returns (output, mask); mask is None when dropout is a
    no-op (EVAL mode or rate 0), otherwise it already carries the 1/(1-rate)
    scale so backward is a plain multiplication.
    """
    if not 0.0 <= rate < 1.0:
        raise InvalidArgumentError(f"dropout rate must be in [0, 1), got {rate}")
    if Mode(mode) is Mode.EVAL or rate == 0.0:
        return x, None
    if rng is None:
        raise InvalidArgumentError("TRAIN-mode dropout needs a random generator")
    draw_dtype = x.dtype if x.dtype in (np.float32, np.float64) else np.float64
    keep = rng.random(x.shape, dtype=draw_dtype) >= rate
    mask = np.multiply(keep, 1.0 / (1.0 - rate), dtype=x.dtype)
    return x * mask, mask


def grl_forward(x: np.ndarray) -> np.ndarray:
    """Gradient reversal layer, forward: identity."""
    return x


def grl_backward(grad: np.ndarray) -> np.ndarray:
    """Gradient reversal layer, backward: negation (scale fixed at 1)."""
    return -grad


def _activate(activation: Activation, z: np.ndarray) -> np.ndarray:
    if activation is Activation.RELU:
        return relu(z)
    if activation is Activation.SOFTMAX:
        return softmax(z)
    return z


def _activation_backward(
    activation: Activation,
    grad: np.ndarray,
    z: np.ndarray,
    a: np.ndarray,
) -> np.ndarray:
    if activation is Activation.RELU:
        return grad * (z > 0)
    if activation is Activation.SOFTMAX:
        # Jacobian-vector product of softmax, row by row.
        return a * (grad - (grad * a).sum(axis=1, keepdims=True))
    return grad


# =============================================================================
# Layers & Traces
# =============================================================================

@dataclass
class DenseLayer:
    """Fully connected layer followed by an activation and optional dropout."""
    weights: np.ndarray
    bias: np.ndarray
    activation: Activation = Activation.IDENTITY
    dropout_rate: float = 0.0

    def __post_init__(self):
        self.activation = Activation(self.activation)
        if self.weights.ndim != 2:
            raise ShapeError(f"weights must be 2-D, got shape {self.weights.shape}")
        if self.bias.shape != (self.weights.shape[1],):
            raise ShapeError(
                f"bias shape {self.bias.shape} does not match fan_out {self.weights.shape[1]}"
            )
        if not 0.0 <= self.dropout_rate < 1.0:
            raise InvalidArgumentError(f"dropout rate must be in [0, 1), got {self.dropout_rate}")

    @property
    def fan_in(self) -> int:
        return self.weights.shape[0]

    @property
    def fan_out(self) -> int:
        return self.weights.shape[1]


@dataclass
class ActivationTrace:
    """Everything a forward pass leaves behind for backward."""
    inputs: List[np.ndarray]
    pre_activations: List[np.ndarray]
    activations: List[np.ndarray]
    masks: List[Optional[np.ndarray]]
    output: np.ndarray
    mode: Mode


@dataclass
class Gradients:
    """Parameter gradients per layer plus the gradient w.r.t. the network input (None when not requested)."""
    weights: List[np.ndarray]
    biases: List[np.ndarray]
    inputs: Optional[np.ndarray]

    def as_list(self) -> List[np.ndarray]:
        """Interleaved [dW0, db0, dW1, db1, ...], aligned with Mlp.parameters()."""
        out: List[np.ndarray] = []
        for gw, gb in zip(self.weights, self.biases):
            out.extend((gw, gb))
        return out


# =============================================================================
# Network
# =============================================================================

class Mlp:
    """
    Ordered stack of dense layers.

    Example:
        net = Mlp.build([8, 16, 16, 5], rng, dropout_rate=0.5)
        trace = net.forward(x, rng)
        grads = net.backward(trace, grad_logits, wrt_logits=True)
    """

    def __init__(self, layers: Sequence[DenseLayer], mode: Mode = Mode.TRAIN):
        if not layers:
            raise InvalidArgumentError("an Mlp needs at least one layer")
        for i in range(1, len(layers)):
            if layers[i - 1].fan_out != layers[i].fan_in:
                raise ShapeError(
                    f"layer {i - 1} fan_out {layers[i - 1].fan_out} does not chain "
                    f"into layer {i} fan_in {layers[i].fan_in}"
                )
        self.layers: List[DenseLayer] = list(layers)
        self.mode = Mode(mode)

    @classmethod
    def build(
        cls,
        sizes: Sequence[int],
        rng: np.random.Generator,
        hidden_activation: Activation = Activation.RELU,
        output_activation: Activation = Activation.SOFTMAX,
        dropout_rate: float = 0.0,
        dtype=np.float64,
    ) -> "Mlp":
        """
        Glorot-initialized stack with widths sizes[0] -> ... -> sizes[-1].
        Hidden layers get hidden_activation and dropout_rate; the output
        layer gets output_activation and no dropout.
        """
        if len(sizes) < 2:
            raise InvalidArgumentError(f"need at least input and output widths, got {list(sizes)}")
        layers = []
        last = len(sizes) - 2
        for i, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
            layers.append(DenseLayer(
                weights=glorot_uniform_init(fan_in, fan_out, rng, dtype=dtype),
                bias=np.zeros(fan_out, dtype=dtype),
                activation=output_activation if i == last else hidden_activation,
                dropout_rate=0.0 if i == last else dropout_rate,
            ))
        return cls(layers)

    # -------------------------------------------------------------------------
    # Properties
    # -------------------------------------------------------------------------

    @property
    def input_width(self) -> int:
        return self.layers[0].fan_in

    @property
    def output_width(self) -> int:
        return self.layers[-1].fan_out

    @property
    def dtype(self) -> np.dtype:
        return self.layers[0].weights.dtype

    def train(self) -> "Mlp":
        self.mode = Mode.TRAIN
        return self

    def eval(self) -> "Mlp":
        self.mode = Mode.EVAL
        return self

    def parameters(self) -> List[np.ndarray]:
        """Interleaved [W0, b0, W1, b1, ...]; the arrays are the live parameters."""
        params: List[np.ndarray] = []
        for layer in self.layers:
            params.extend((layer.weights, layer.bias))
        return params

    # -------------------------------------------------------------------------
    # Passes
    # -------------------------------------------------------------------------

    def forward(
        self,
        x: np.ndarray,
        rng: Optional[np.random.Generator] = None,
        mode: Optional[Mode] = None,
    ) -> ActivationTrace:
        """
        Run the network on a batch. mode overrides self.mode for this pass
        only; TRAIN-mode dropout draws its masks from rng.
        """
        mode = self.mode if mode is None else Mode(mode)
        h = np.asarray(x, dtype=self.dtype)
        if h.ndim != 2:
            raise ShapeError(f"layer 0: expected a 2-D batch, got shape {h.shape}")

        inputs, pre_activations, activations, masks = [], [], [], []
        for i, layer in enumerate(self.layers):
            if h.shape[1] != layer.fan_in:
                raise ShapeError(
                    f"layer {i}: expected {layer.fan_in} input columns, got {h.shape[1]}"
                )
            inputs.append(h)
            z = h @ layer.weights + layer.bias
            a = _activate(layer.activation, z)
            out, mask = dropout_forward(a, layer.dropout_rate, rng, mode)
            pre_activations.append(z)
            activations.append(a)
            masks.append(mask)
            h = out

        if not np.isfinite(h).all():
            logger.error(f"❌ Non-finite network output ({int((~np.isfinite(h)).sum())} entries)")
            raise InvariantViolationError("network output contains NaN or Inf; lower the learning rate")

        return ActivationTrace(
            inputs=inputs,
            pre_activations=pre_activations,
            activations=activations,
            masks=masks,
            output=h,
            mode=mode,
        )

    def backward(
        self,
        trace: ActivationTrace,
        grad_output: np.ndarray,
        wrt_logits: bool = False,
        input_grad: bool = True,
    ) -> Gradients:
        """
        Backpropagate grad_output through the trace.

        grad_output is d(loss)/d(output) by default; with wrt_logits=True it is
        d(loss)/d(z) of the last layer, which skips the output activation (the
        fused softmax + cross-entropy gradients of engines.objective).
        input_grad=False skips the product that only feeds d(loss)/d(input).
        """
        self._check_trace(trace)
        grad = np.asarray(grad_output, dtype=self.dtype)
        if grad.shape != trace.output.shape:
            raise ShapeError(
                f"grad_output shape {grad.shape} does not match output shape {trace.output.shape}"
            )
        last = len(self.layers) - 1
        if wrt_logits and trace.masks[last] is not None:
            raise InvalidArgumentError("wrt_logits is undefined when the output layer uses dropout")

        grad_w: List[np.ndarray] = [None] * len(self.layers)
        grad_b: List[np.ndarray] = [None] * len(self.layers)
        for i in range(last, -1, -1):
            layer = self.layers[i]
            if trace.masks[i] is not None:
                grad = grad * trace.masks[i]
            if not (wrt_logits and i == last):
                grad = _activation_backward(
                    layer.activation, grad, trace.pre_activations[i], trace.activations[i]
                )
            grad_w[i] = trace.inputs[i].T @ grad
            grad_b[i] = grad.sum(axis=0)
            if i > 0 or input_grad:
                grad = grad @ layer.weights.T

        return Gradients(weights=grad_w, biases=grad_b, inputs=grad if input_grad else None)

    def predict(self, x: np.ndarray) -> np.ndarray:
        """EVAL-mode output probabilities; does not touch self.mode."""
        return self.forward(x, mode=Mode.EVAL).output

    def _check_trace(self, trace: ActivationTrace) -> None:
        n = len(self.layers)
        if not (len(trace.inputs) == len(trace.pre_activations) == len(trace.masks) == n):
            raise InvariantViolationError(
                f"trace has {len(trace.inputs)} layers, network has {n}"
            )
        for i, layer in enumerate(self.layers):
            if (trace.inputs[i].shape[1] != layer.fan_in
                    or trace.pre_activations[i].shape[1] != layer.fan_out):
                raise InvariantViolationError(
                    f"stale trace: layer {i} shapes changed since the forward pass"
                )
