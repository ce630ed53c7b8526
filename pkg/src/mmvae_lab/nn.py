"""Minimal dense-network substrate.

Plain numpy, float64 everywhere. A network is a list of DenseLayer objects;
`forward` records a tape and `backward` replays it, accumulating gradients
into buffers owned by the layers. ParameterSet groups layers under string
paths and owns the Adam state. Small and auditable by design: no graph
construction, no broadcasting tricks beyond an optional leading batch axis.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

from .errors import ConfigError, TrainingError

ACTIVATIONS = ("tanh", "identity")


class RngState:
    """Seeded, portable random stream (PCG64) with explicit state.

    Identical seed gives an identical stream on every platform. The
    serialized form (``state_dict``) goes into checkpoints.
    """

    algorithm = "pcg64"

    def __init__(self, seed: int | tuple[int, ...]):
        self.seed = seed
        entropy = seed if isinstance(seed, tuple) else (int(seed),)
        self.generator = np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))

    @classmethod
    def derive(cls, *parts: int) -> "RngState":
        """Independent stream keyed by a tuple, e.g. (run_seed, epoch)."""
        return cls(tuple(int(p) for p in parts))

    def standard_normal(self, shape) -> np.ndarray:
        return self.generator.standard_normal(shape)

    def permutation(self, n: int) -> np.ndarray:
        return self.generator.permutation(n)

    def uniform(self, low: float, high: float, shape) -> np.ndarray:
        return self.generator.uniform(low, high, shape)

    def state_dict(self) -> dict:
        return {"algorithm": self.algorithm, "state": self.generator.bit_generator.state}

    def load_state_dict(self, state: dict) -> None:
        if state.get("algorithm") != self.algorithm:
            raise ConfigError(f"unknown rng algorithm {state.get('algorithm')!r}")
        self.generator.bit_generator.state = state["state"]


def gaussian_sample(rng: RngState, n: int) -> np.ndarray:
    """n independent standard-normal draws; advances the stream."""
    if n < 1:
        raise ConfigError(f"need n >= 1 draws, got {n}")
    return rng.standard_normal(n)


class DenseLayer:
    """Affine map plus pointwise activation, with gradient buffers.

    weights has shape (out, in); biases shape (out,). Gradient buffers
    mirror the parameter shapes exactly and are accumulated into by
    `backward`, zeroed by the optimizer step.
    """

    def __init__(self, weights: np.ndarray, biases: np.ndarray, activation: str = "tanh"):
        weights = np.asarray(weights, dtype=np.float64)
        biases = np.asarray(biases, dtype=np.float64)
        if activation not in ACTIVATIONS:
            raise ConfigError(f"unknown activation {activation!r}")
        if weights.ndim != 2 or biases.ndim != 1 or weights.shape[0] != biases.shape[0]:
            raise ConfigError(
                f"inconsistent layer shapes: weights {weights.shape}, biases {biases.shape}"
            )
        if not (np.isfinite(weights).all() and np.isfinite(biases).all()):
            raise ConfigError("layer parameters must be finite")
        self.weights = weights
        self.biases = biases
        self.activation = activation
        self.grad_weights = np.zeros_like(weights)
        self.grad_biases = np.zeros_like(biases)

    @property
    def in_size(self) -> int:
        return self.weights.shape[1]

    @property
    def out_size(self) -> int:
        return self.weights.shape[0]

    @classmethod
    def initialized(cls, in_size: int, out_size: int, activation: str, rng: RngState) -> "DenseLayer":
        # Uniform in +-sqrt(6/(fan_in+fan_out)), biases zero; keeps tanh
        # pre-activations in its responsive range for inputs in [-1, 1].
        a = np.sqrt(6.0 / (in_size + out_size))
        w = rng.uniform(-a, a, (out_size, in_size))
        return cls(w, np.zeros(out_size), activation)


@dataclass
class _TapeEntry:
    layer: DenseLayer
    x: np.ndarray        # layer input, shape (..., in)
    out: np.ndarray      # post-activation output, shape (..., out)


@dataclass
class Tape:
    entries: list[_TapeEntry] = field(default_factory=list)
    consumed: bool = False


def layer_forward(layer: DenseLayer, x: np.ndarray, tape: Tape | None = None,
                  out: np.ndarray | None = None) -> np.ndarray:
    """One layer; x has shape (in,) or (batch, in). Records onto tape if given."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != layer.in_size:
        raise ConfigError(f"input size {x.shape[-1]} != layer in-size {layer.in_size}")
    y = np.matmul(x, layer.weights.T, out=out)
    y += layer.biases
    if layer.activation == "tanh":
        np.tanh(y, out=y)
    if tape is not None:
        tape.entries.append(_TapeEntry(layer, x, y))
    return y


def layer_backward(entry: _TapeEntry, dy: np.ndarray) -> np.ndarray:
    """Accumulate parameter gradients for one tape entry; return d(input)."""
    layer = entry.layer
    if layer.activation == "tanh":
        dpre = entry.out * entry.out
        np.subtract(1.0, dpre, out=dpre)
        dpre *= dy
    else:
        dpre = dy
    if dpre.ndim == 1:
        layer.grad_weights += np.outer(dpre, entry.x)
        layer.grad_biases += dpre
    else:
        layer.grad_weights += dpre.T @ entry.x
        layer.grad_biases += dpre.sum(axis=0)
    return dpre @ layer.weights


def forward(layers: list[DenseLayer], x: np.ndarray) -> tuple[np.ndarray, Tape]:
    """Evaluate a layer stack; returns output and the tape for backward."""
    tape = Tape()
    h = x
    for layer in layers:
        h = layer_forward(layer, h, tape)
    return h, tape


def backward(tape: Tape, dy: np.ndarray) -> np.ndarray:
    """Propagate dy back through a forward tape; returns d(stack input).

    A tape can be consumed once; reuse indicates a stale caller.
    """
    if tape.consumed:
        raise ValueError("tape already consumed by a previous backward call")
    if not tape.entries:
        raise ValueError("empty tape: no matching forward call")
    if np.asarray(dy).shape != tape.entries[-1].out.shape:
        raise ValueError(
            f"output-gradient shape {np.asarray(dy).shape} does not match "
            f"forward output {tape.entries[-1].out.shape}"
        )
    tape.consumed = True
    for entry in reversed(tape.entries):
        dy = layer_backward(entry, dy)
    return dy


class ParameterSet:
    """Ordered, path-addressed collection of DenseLayers plus Adam state."""

    def __init__(self):
        self._layers: dict[str, DenseLayer] = {}
        self._moments: dict[str, tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]] = {}
        self.step_count = 0

    def add(self, path: str, layer: DenseLayer) -> DenseLayer:
        if path in self._layers:
            raise ConfigError(f"duplicate parameter path {path!r}")
        self._layers[path] = layer
        self._moments[path] = (
            np.zeros_like(layer.weights), np.zeros_like(layer.weights),
            np.zeros_like(layer.biases), np.zeros_like(layer.biases),
        )
        return layer

    def __getitem__(self, path: str) -> DenseLayer:
        return self._layers[path]

    def items(self) -> Iterator[tuple[str, DenseLayer]]:
        return iter(self._layers.items())

    def paths(self) -> list[str]:
        return list(self._layers)

    def n_parameters(self) -> int:
        return sum(l.weights.size + l.biases.size for l in self._layers.values())

    def zero_grads(self) -> None:
        for layer in self._layers.values():
            layer.grad_weights[...] = 0.0
            layer.grad_biases[...] = 0.0

    def flat_parameters(self) -> np.ndarray:
        """Concatenated view of all parameters in path order (copy)."""
        return np.concatenate(
            [np.concatenate([l.weights.ravel(), l.biases.ravel()]) for l in self._layers.values()]
        )

    def check_finite(self, epoch: int | None = None) -> None:
        for path, layer in self._layers.items():
            if not (np.isfinite(layer.weights).all() and np.isfinite(layer.biases).all()):
                raise TrainingError(f"non-finite parameters at {path!r}", epoch=epoch)


def adam_step(params: ParameterSet, lr: float = 1e-3, beta1: float = 0.9,
              beta2: float = 0.999, eps: float = 1e-8, epoch: int | None = None) -> ParameterSet:
    """Bias-corrected Adam update from the accumulated gradients.

    Advances the moment state, applies the update in place, zeroes the
    gradient buffers, and verifies the result stays finite.
    """
    for path, layer in params.items():
        if not (np.isfinite(layer.grad_weights).all() and np.isfinite(layer.grad_biases).all()):
            raise TrainingError(f"non-finite gradient at {path!r}", epoch=epoch)
    params.step_count += 1
    t = params.step_count
    corr1 = 1.0 - beta1 ** t
    corr2 = 1.0 - beta2 ** t
    for path, layer in params.items():
        mw, vw, mb, vb = params._moments[path]
        for p, g, m, v in ((layer.weights, layer.grad_weights, mw, vw),
                           (layer.biases, layer.grad_biases, mb, vb)):
            m *= beta1
            m += (1.0 - beta1) * g
            v *= beta2
            v += (1.0 - beta2) * g * g
            p -= lr * (m / corr1) / (np.sqrt(v / corr2) + eps)
    params.zero_grads()
    params.check_finite(epoch=epoch)
    return params
