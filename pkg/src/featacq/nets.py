"""From-scratch dense network kernel.

Everything the acquisition policies need from a neural net lives here:
feed-forward layers with inverted dropout, backpropagation through both
parameters and inputs, Adam, dropout-sampled certainty estimates, a fixed
point binary feature code, and a denoising autoencoder that fills in the
bits of unbought features.

Arrays are float64 throughout. Weight matrices are (out x in) and a batch
is one row per sample. All randomness flows through an explicit seed or
`numpy.random.Generator`; identical seeds give bit-identical results.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import IO, Iterable, Sequence, Union

import numpy as np

from .core import AcquisitionState, DimensionMismatchError, FeatureCatalog

ACTIVATIONS = ("relu", "sigmoid", "softmax", "identity")

CHECKPOINT_VERSION = 1

RngLike = Union[np.random.Generator, int, None]


class NonFiniteInputError(ValueError):
    """Forward pass received NaN or infinity."""


class StaleCacheError(ValueError):
    """Backward pass got a cache that does not match the net."""


class NonFiniteLossError(ArithmeticError):
    """Training loss left the reals; aborts the epoch with context."""


class OutOfRangeError(ValueError):
    """Value outside the binary code's representable interval."""


def make_rng(rng: RngLike) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.Generator(np.random.PCG64(rng))


# --- layers and nets ----------------------------------------------------------


@dataclass
class Layer:
    weight: np.ndarray  # (out, in)
    bias: np.ndarray  # (out,)
    activation: str
    dropout_rate: float = 0.0


@dataclass
class DenseNet:
    layers: list[Layer]

    def __post_init__(self):
        if not self.layers:
            raise ValueError("net needs at least one layer")
        for i, layer in enumerate(self.layers):
            if layer.activation not in ACTIVATIONS:
                raise ValueError(f"unknown activation {layer.activation!r}")
            if not 0.0 <= layer.dropout_rate < 1.0:
                raise ValueError("dropout_rate must lie in [0, 1)")
            if layer.activation == "softmax":
                if i != len(self.layers) - 1:
                    raise ValueError("softmax is only valid as the final activation")
                if layer.dropout_rate != 0.0:
                    raise ValueError("softmax layer cannot carry dropout")
            if layer.weight.shape[0] != layer.bias.shape[0]:
                raise ValueError(f"layer {i}: bias width does not match weight rows")
            if i > 0 and layer.weight.shape[1] != self.layers[i - 1].weight.shape[0]:
                raise ValueError(f"layer {i} input width does not match layer {i - 1} output")

    @property
    def input_width(self) -> int:
        return int(self.layers[0].weight.shape[1])

    @property
    def output_width(self) -> int:
        return int(self.layers[-1].weight.shape[0])


def dense_net(
    widths: Sequence[int],
    activations: Sequence[str],
    dropout: float | Sequence[float] = 0.0,
    rng: RngLike = None,
) -> DenseNet:
    """Build a net with uniform(+-sqrt(6/(fan_in+fan_out))) weights and zero biases.

    ``widths`` runs input first: (in, hidden..., out). One activation and
    one dropout rate per layer.
    """
    if len(widths) < 2:
        raise ValueError("widths must list at least input and output")
    n_layers = len(widths) - 1
    if len(activations) != n_layers:
        raise ValueError(f"expected {n_layers} activations, got {len(activations)}")
    if isinstance(dropout, (int, float)):
        dropout = [float(dropout)] * n_layers
    if len(dropout) != n_layers:
        raise ValueError(f"expected {n_layers} dropout rates, got {len(dropout)}")
    gen = make_rng(rng)
    layers = []
    for i in range(n_layers):
        fan_in, fan_out = widths[i], widths[i + 1]
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        w = gen.uniform(-bound, bound, size=(fan_out, fan_in))
        layers.append(Layer(w, np.zeros(fan_out), activations[i], dropout[i]))
    return DenseNet(layers)


def _softmax(z: np.ndarray) -> np.ndarray:
    shifted = z - z.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _activate(z: np.ndarray, activation: str) -> np.ndarray:
    if activation == "relu":
        return np.maximum(z, 0.0)
    if activation == "sigmoid":
        return _sigmoid(z)
    if activation == "softmax":
        return _softmax(z)
    return z


def _activation_vjp(activation: str, a: np.ndarray, g: np.ndarray) -> np.ndarray:
    """Pull an output-side gradient g back through the activation, given its output a."""
    if activation == "relu":
        return g * (a > 0.0)
    if activation == "sigmoid":
        return g * a * (1.0 - a)
    if activation == "softmax":
        # full Jacobian product: a * (g - sum(a*g)), valid for any upstream g
        dot = np.sum(a * g, axis=-1, keepdims=True)
        return a * (g - dot)
    return g


@dataclass
class ForwardCache:
    mode: str
    x: np.ndarray  # (n, in) as fed to layer 0
    activations: list[np.ndarray]  # post-activation, post-dropout outputs per layer
    masks: list  # dropout keep-masks scaled by 1/keep, or None
    single: bool  # input was 1-D


def forward(
    net: DenseNet,
    x: np.ndarray,
    mode: str = "eval",
    rng: RngLike = None,
) -> tuple[np.ndarray, ForwardCache]:
    """Run the net on a sample or batch.

    Dropout fires in ``train`` and ``stochastic-eval`` modes and is scaled
    at drop time, so ``eval`` is a plain pass. The cache captures exactly
    the function that was evaluated (masks included) for `backward`.
    """
    if mode not in ("train", "eval", "stochastic-eval"):
        raise ValueError(f"unknown mode {mode!r}")
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != net.input_width:
        raise DimensionMismatchError(
            f"input has shape {x.shape}, net expects (*, {net.input_width})"
        )
    if not np.all(np.isfinite(x)):
        raise NonFiniteInputError("input contains NaN or infinity")
    dropping = mode in ("train", "stochastic-eval")
    gen = make_rng(rng) if dropping else None
    a = x
    activations: list[np.ndarray] = []
    masks: list = []
    for layer in net.layers:
        z = a @ layer.weight.T + layer.bias
        a = _activate(z, layer.activation)
        if dropping and layer.dropout_rate > 0.0:
            keep = 1.0 - layer.dropout_rate
            mask = (gen.random(a.shape) < keep) / keep
            a = a * mask
            masks.append(mask)
        else:
            masks.append(None)
        activations.append(a)
    cache = ForwardCache(mode=mode, x=x, activations=activations, masks=masks, single=single)
    out = activations[-1][0] if single else activations[-1]
    return out, cache


@dataclass
class Gradients:
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    x: np.ndarray


def backward(net: DenseNet, cache: ForwardCache, grad_out: np.ndarray) -> Gradients:
    """Backpropagate a gradient at the output to every parameter and the input.

    Differentiates the exact function the cached forward pass computed,
    dropout masks and all. Gradients over a batch are summed.
    """
    if len(cache.activations) != len(net.layers):
        raise StaleCacheError("cache depth does not match net")
    grad_out = np.asarray(grad_out, dtype=np.float64)
    if cache.single:
        grad_out = grad_out[None, :]
    if grad_out.shape != cache.activations[-1].shape:
        raise StaleCacheError(
            f"output gradient shape {grad_out.shape} does not match cached output "
            f"{cache.activations[-1].shape}"
        )
    n_layers = len(net.layers)
    grad_w: list[np.ndarray] = [None] * n_layers
    grad_b: list[np.ndarray] = [None] * n_layers
    g = grad_out
    for i in range(n_layers - 1, -1, -1):
        layer = net.layers[i]
        a = cache.activations[i]
        if a.shape[1] != layer.weight.shape[0]:
            raise StaleCacheError(f"cached layer {i} width does not match net")
        mask = cache.masks[i]
        if mask is not None:
            g = g * mask
            a = a / np.where(mask == 0.0, 1.0, mask)  # pre-dropout activation
        g = _activation_vjp(layer.activation, a, g)
        a_prev = cache.x if i == 0 else cache.activations[i - 1]
        grad_w[i] = g.T @ a_prev
        grad_b[i] = g.sum(axis=0)
        g = g @ layer.weight
    grad_x = g[0] if cache.single else g
    return Gradients(weights=grad_w, biases=grad_b, x=grad_x)


# --- losses -------------------------------------------------------------------


def _check_loss_shapes(out: np.ndarray, target: np.ndarray):
    if out.shape != target.shape:
        raise DimensionMismatchError(
            f"output shape {out.shape} does not match target {target.shape}"
        )


def cross_entropy(out: np.ndarray, target: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean per-sample cross entropy against one-hot (or soft) targets."""
    _check_loss_shapes(out, target)
    n = out.shape[0]
    p = np.clip(out, 1e-12, None)
    loss = float(-np.sum(target * np.log(p)) / n)
    grad = -(target / p) / n
    return loss, grad


def bernoulli_reconstruction(
    out: np.ndarray, target: np.ndarray, weight: np.ndarray | None = None
) -> tuple[float, np.ndarray]:
    """Mean per-element binary cross entropy, optionally element-weighted."""
    _check_loss_shapes(out, target)
    w = np.ones_like(out) if weight is None else np.asarray(weight, dtype=np.float64)
    _check_loss_shapes(out, w)
    denom = max(float(w.sum()), 1.0)
    p = np.clip(out, 1e-12, 1.0 - 1e-12)
    loss = float(-np.sum(w * (target * np.log(p) + (1.0 - target) * np.log(1.0 - p))) / denom)
    grad = w * (p - target) / (p * (1.0 - p)) / denom
    return loss, grad


def squared(
    out: np.ndarray, target: np.ndarray, weight: np.ndarray | None = None
) -> tuple[float, np.ndarray]:
    """Mean per-sample summed squared error; weights select elements."""
    _check_loss_shapes(out, target)
    w = np.ones_like(out) if weight is None else np.asarray(weight, dtype=np.float64)
    _check_loss_shapes(out, w)
    n = out.shape[0]
    diff = out - target
    loss = float(np.sum(w * diff * diff) / n)
    grad = 2.0 * w * diff / n
    return loss, grad


LOSSES = {
    "cross-entropy": cross_entropy,
    "bernoulli-reconstruction": bernoulli_reconstruction,
    "squared": squared,
}


# --- Adam ---------------------------------------------------------------------


@dataclass
class AdamConfig:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    batch_size: int = 64

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be >= 0")
        if not 0.0 <= self.beta1 < 1.0 or not 0.0 <= self.beta2 < 1.0:
            raise ValueError("betas must lie in [0, 1)")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")


@dataclass
class AdamState:
    t: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)


def init_adam(net: DenseNet) -> AdamState:
    zeros = lambda arr: np.zeros_like(arr)
    m = [(zeros(l.weight), zeros(l.bias)) for l in net.layers]
    v = [(zeros(l.weight), zeros(l.bias)) for l in net.layers]
    return AdamState(t=0, m=m, v=v)


def adam_step(net: DenseNet, grads: Gradients, state: AdamState, config: AdamConfig) -> None:
    state.t += 1
    b1, b2 = config.beta1, config.beta2
    corr1 = 1.0 - b1**state.t
    corr2 = 1.0 - b2**state.t
    for i, layer in enumerate(net.layers):
        for arr, g, m, v in (
            (layer.weight, grads.weights[i], state.m[i][0], state.v[i][0]),
            (layer.bias, grads.biases[i], state.m[i][1], state.v[i][1]),
        ):
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            arr -= config.learning_rate * (m / corr1) / (np.sqrt(v / corr2) + config.epsilon)


def minibatches(
    n: int, batch_size: int, rng: RngLike
) -> Iterable[np.ndarray]:
    """Deterministically shuffled index batches covering range(n)."""
    order = make_rng(rng).permutation(n)
    for start in range(0, n, batch_size):
        yield order[start : start + batch_size]


def train_epoch(
    net: DenseNet,
    batches: Iterable[tuple],
    loss: str,
    adam: AdamConfig,
    state: AdamState,
    rng: RngLike = None,
) -> float:
    """One pass over ``batches``: forward, loss, backward, Adam step each.

    A batch is (X, Y) or (X, Y, W) with W an element weight for the loss.
    Returns the sample-weighted mean batch loss. Mutates net and state.
    """
    if loss not in LOSSES:
        raise ValueError(f"unknown loss {loss!r}, expected one of {sorted(LOSSES)}")
    loss_fn = LOSSES[loss]
    gen = make_rng(rng)
    total = 0.0
    count = 0
    for b_idx, batch in enumerate(batches):
        x, y = batch[0], batch[1]
        w = batch[2] if len(batch) > 2 else None
        out, cache = forward(net, x, mode="train", rng=gen)
        if w is None:
            value, grad = loss_fn(out, y)
        else:
            value, grad = loss_fn(out, y, w)
        if not np.isfinite(value):
            raise NonFiniteLossError(f"loss became non-finite at batch {b_idx} ({loss})")
        grads = backward(net, cache, grad)
        adam_step(net, grads, state, adam)
        n = x.shape[0] if np.ndim(x) == 2 else 1
        total += value * n
        count += n
    return total / max(count, 1)


def fit(
    net: DenseNet,
    x: np.ndarray,
    y: np.ndarray,
    loss: str,
    adam: AdamConfig,
    epochs: int,
    rng: RngLike = None,
    weight: np.ndarray | None = None,
) -> list[float]:
    """Convenience loop: shuffled minibatch epochs over a fixed array pair."""
    gen = make_rng(rng)
    state = init_adam(net)
    history = []
    for _ in range(epochs):
        parts = []
        for idx in minibatches(x.shape[0], adam.batch_size, gen):
            if weight is None:
                parts.append((x[idx], y[idx]))
            else:
                parts.append((x[idx], y[idx], weight[idx]))
        history.append(train_epoch(net, parts, loss, adam, state, rng=gen))
    return history


def predict_proba(net: DenseNet, x: np.ndarray) -> np.ndarray:
    out, _ = forward(net, x, mode="eval")
    return out


# --- MC-dropout certainty -----------------------------------------------------


def mc_certainty(
    net: DenseNet, x: np.ndarray, samples: int = 30, rng: RngLike = None
) -> tuple[float, np.ndarray]:
    """Dropout-sampled confidence for a single input.

    Averages class probabilities over ``samples`` stochastic-eval passes and
    returns (max entry of the average, the averaged vector). With no dropout
    anywhere this reduces to a single deterministic pass.
    """
    if net.layers[-1].activation != "softmax":
        raise ValueError("certainty needs a softmax head")
    if samples < 1:
        raise ValueError("samples must be >= 1")
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise DimensionMismatchError("mc_certainty takes a single sample")
    if all(l.dropout_rate == 0.0 for l in net.layers):
        probs = predict_proba(net, x)
        return float(probs.max()), probs
    tiled = np.tile(x, (samples, 1))
    out, _ = forward(net, tiled, mode="stochastic-eval", rng=rng)
    mean = out.mean(axis=0)
    return float(mean.max()), mean


# --- fixed-point binary feature code ------------------------------------------


@dataclass(frozen=True)
class BinaryCode:
    """One value expressed as ``levels`` fractional bits, most significant first."""

    levels: int
    bits: tuple

    @property
    def weights(self) -> tuple:
        return tuple(2.0 ** -(m + 1) for m in range(self.levels))

    def decode(self) -> float:
        return float(np.dot(self.bits, self.weights))


def encode_binary(value: float | np.ndarray, levels: int) -> np.ndarray:
    """Quantize values in [0, 1 - 2^-levels] to their fractional bit expansion.

    bits = binary digits of round(value * 2^levels), most significant first;
    decoding lands within 2^-(levels+1) of the input.
    """
    if levels < 1:
        raise ValueError("levels must be >= 1")
    v = np.asarray(value, dtype=np.float64)
    top = 1.0 - 2.0**-levels
    if np.any(v < -1e-12) or np.any(v > top + 1e-12):
        raise OutOfRangeError(f"values must lie in [0, {top}]")
    q = np.rint(np.clip(v, 0.0, top) * 2**levels).astype(np.int64)
    shifts = np.arange(levels - 1, -1, -1)
    bits = (q[..., None] >> shifts) & 1
    return bits.astype(np.float64)


def decode_binary(bits: np.ndarray) -> np.ndarray:
    bits = np.asarray(bits, dtype=np.float64)
    levels = bits.shape[-1]
    weights = 2.0 ** -(np.arange(levels) + 1)
    return bits @ weights


@dataclass
class BitEncoder:
    """Maps catalog features to fixed-point bits via per-feature min-max ranges.

    Wide (one-hot) features are summarized by their active code index before
    scaling. Ranges come from training data; out-of-range values clip.
    """

    levels: int
    lo: np.ndarray  # (d,)
    hi: np.ndarray  # (d,)

    @classmethod
    def fit(cls, values: np.ndarray, catalog: FeatureCatalog, levels: int = 3) -> "BitEncoder":
        scalars = cls._scalars_static(values, catalog)
        lo = scalars.min(axis=0)
        hi = scalars.max(axis=0)
        hi = np.where(hi - lo < 1e-12, lo + 1.0, hi)  # constant column encodes to 0
        return cls(levels=levels, lo=lo, hi=hi)

    @staticmethod
    def _scalars_static(values: np.ndarray, catalog: FeatureCatalog) -> np.ndarray:
        values = np.atleast_2d(np.asarray(values, dtype=np.float64))
        if values.shape[1] != catalog.total_width:
            raise DimensionMismatchError(
                f"expected width {catalog.total_width}, got {values.shape[1]}"
            )
        out = np.empty((values.shape[0], len(catalog)))
        for j in range(len(catalog)):
            blk = values[:, catalog.block(j)]
            out[:, j] = blk[:, 0] if blk.shape[1] == 1 else blk.argmax(axis=1)
        return out

    def scalars(self, values: np.ndarray, catalog: FeatureCatalog) -> np.ndarray:
        return self._scalars_static(values, catalog)

    def encode(self, values: np.ndarray, catalog: FeatureCatalog) -> np.ndarray:
        """Encoded rows (n, total_width) -> hard bits (n, d*levels)."""
        scalars = self.scalars(values, catalog)
        top = 1.0 - 2.0**-self.levels
        scaled = np.clip((scalars - self.lo) / (self.hi - self.lo) * top, 0.0, top)
        bits = encode_binary(scaled, self.levels)
        return bits.reshape(scalars.shape[0], -1)

    def encode_state(self, state: AcquisitionState, catalog: FeatureCatalog) -> np.ndarray:
        """(d, levels) hard bits of the state's values; unacquired rows are garbage."""
        return self.encode(state.values[None, :], catalog).reshape(len(catalog), self.levels)


# --- denoising autoencoder over feature bits ----------------------------------


@dataclass
class DenoisingAutoencoder:
    """Fills in missing feature bits: corrupted bits in, Bernoulli probabilities out.

    Missing features enter as 0.5 per bit; training corrupts each feature's
    bit group to 0.5 with probability ``corruption_rate`` to mimic partially
    acquired states.
    """

    net: DenseNet
    corruption_rate: float = 0.5

    def __post_init__(self):
        if self.net.input_width != self.net.output_width:
            raise ValueError("autoencoder input and output widths must match")
        if self.net.layers[-1].activation != "sigmoid":
            raise ValueError("autoencoder needs a sigmoid head")
        if not 0.0 <= self.corruption_rate < 1.0:
            raise ValueError("corruption_rate must lie in [0, 1)")


def corrupt_bits(
    bits: np.ndarray,
    available: np.ndarray,
    levels: int,
    corruption_rate: float,
    rng: RngLike = None,
) -> np.ndarray:
    """Training-time corruption: whole bit groups fall back to 0.5.

    A group is blanked when its feature is unavailable or drawn for
    corruption; bits of available, uncorrupted features pass through.
    """
    bits = np.asarray(bits, dtype=np.float64)
    available = np.asarray(available, dtype=bool)
    n, d = available.shape
    if bits.shape != (n, d * levels):
        raise DimensionMismatchError("bits width must be d * levels")
    drop = make_rng(rng).random((n, d)) < corruption_rate
    blank = (~available) | drop
    out = bits.copy()
    out[np.repeat(blank, levels, axis=1)] = 0.5
    return out


def dae_missing_posteriors(
    dae: DenoisingAutoencoder,
    state: AcquisitionState,
    encoder: BitEncoder,
    catalog: FeatureCatalog,
) -> np.ndarray:
    """Per-feature, per-bit probabilities that each bit is 1 given the state.

    Acquired features bypass the net: their rows are their actual hard bits.
    """
    d, levels = len(catalog), encoder.levels
    if dae.net.input_width != d * levels:
        raise DimensionMismatchError(
            f"autoencoder width {dae.net.input_width} != {d} features x {levels} bits"
        )
    hard = encoder.encode_state(state, catalog)
    acquired = state.k.astype(bool)
    x = np.full((d, levels), 0.5)
    x[acquired] = hard[acquired]
    out = predict_proba(dae.net, x.reshape(-1)).reshape(d, levels)
    out[acquired] = hard[acquired]
    return out


# --- checkpoints ---------------------------------------------------------------


def net_to_dict(net: DenseNet) -> dict:
    return {
        "format_version": CHECKPOINT_VERSION,
        "kind": "dense-net",
        "layers": [
            {
                "activation": l.activation,
                "dropout_rate": l.dropout_rate,
                "weight": l.weight.tolist(),
                "bias": l.bias.tolist(),
            }
            for l in net.layers
        ],
    }


def net_from_dict(doc: dict) -> DenseNet:
    if doc.get("format_version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {doc.get('format_version')!r}")
    if doc.get("kind") != "dense-net":
        raise ValueError(f"not a dense-net checkpoint: {doc.get('kind')!r}")
    layers = [
        Layer(
            weight=np.array(l["weight"], dtype=np.float64),
            bias=np.array(l["bias"], dtype=np.float64),
            activation=l["activation"],
            dropout_rate=float(l["dropout_rate"]),
        )
        for l in doc["layers"]
    ]
    return DenseNet(layers)


def save_net(net: DenseNet, fh: IO[str]) -> None:
    json.dump(net_to_dict(net), fh)


def load_net(fh: IO[str]) -> DenseNet:
    return net_from_dict(json.load(fh))
