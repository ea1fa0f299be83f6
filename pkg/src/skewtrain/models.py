"""Small fully connected networks with an exposed penultimate layer.

The classifier is a plain MLP: affine layers with ReLU between them,
logits from the last affine layer, and the post-activation output of
the layer before it ("penultimate features") exposed for collapse
diagnostics. A projector head of the same construction maps those
features to an embedding space for self-supervised objectives.

Parameters live as named float64 arrays; forward passes register them
as leaves on a caller-supplied tape so gradients come back per name.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .autodiff import Tape, Var, add_row_bias, op_apply

CHECKPOINT_FORMAT_VERSION = 1


@dataclass
class MLPParams:
    """Weights and biases for an MLP given as [d_in, h1, ..., K]."""

    layer_sizes: list[int]
    weights: list[np.ndarray]
    biases: list[np.ndarray]


@dataclass
class ProjectorParams:
    """Weights and biases for the projector head, e.g. [64, 32, 32]."""

    layer_sizes: list[int]
    weights: list[np.ndarray]
    biases: list[np.ndarray]


@dataclass
class ForwardOutput:
    """Logits plus penultimate features, and the parameter leaves used."""

    logits: Var
    penultimate: Var
    leaves: dict[str, Var]


def _init_stack(layer_sizes, seed, init):
    if len(layer_sizes) < 2:
        raise ValueError(f"need at least input and output sizes, got {layer_sizes}")
    if any(s < 1 for s in layer_sizes):
        raise ValueError(f"layer sizes must be positive, got {layer_sizes}")
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(layer_sizes[:-1], layer_sizes[1:]):
        if init == "he_normal":
            w = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(fan_in, fan_out))
        elif init == "uniform_small":
            w = rng.uniform(-0.05, 0.05, size=(fan_in, fan_out))
        else:
            raise ValueError(f"unknown init {init!r}")
        weights.append(np.ascontiguousarray(w))
        biases.append(np.zeros(fan_out))
    return list(layer_sizes), weights, biases


def mlp_init(layer_sizes: list[int], seed: int, init: str = "he_normal") -> MLPParams:
    """Seeded init; he_normal draws N(0, 2/fan_in), biases start at zero."""
    sizes, w, b = _init_stack(layer_sizes, seed, init)
    return MLPParams(sizes, w, b)


def projector_init(layer_sizes: list[int], seed: int, init: str = "he_normal") -> ProjectorParams:
    sizes, w, b = _init_stack(layer_sizes, seed, init)
    return ProjectorParams(sizes, w, b)


def params_to_named(params, prefix: str) -> dict[str, np.ndarray]:
    """Flatten a parameter stack to {prefix.w0, prefix.b0, ...}."""
    named = {}
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        named[f"{prefix}.w{i}"] = w
        named[f"{prefix}.b{i}"] = b
    return named


def named_to_mlp(named: dict[str, np.ndarray], layer_sizes: list[int], prefix: str = "mlp") -> MLPParams:
    n = len(layer_sizes) - 1
    weights = [np.asarray(named[f"{prefix}.w{i}"], dtype=np.float64) for i in range(n)]
    biases = [np.asarray(named[f"{prefix}.b{i}"], dtype=np.float64) for i in range(n)]
    return MLPParams(list(layer_sizes), weights, biases)


def named_to_projector(named: dict[str, np.ndarray], layer_sizes: list[int], prefix: str = "proj") -> ProjectorParams:
    n = len(layer_sizes) - 1
    weights = [np.asarray(named[f"{prefix}.w{i}"], dtype=np.float64) for i in range(n)]
    biases = [np.asarray(named[f"{prefix}.b{i}"], dtype=np.float64) for i in range(n)]
    return ProjectorParams(list(layer_sizes), weights, biases)


def forward_stack(x: Var, leaves: dict[str, Var], n_layers: int, prefix: str):
    """Affine chain with ReLU between layers; returns (output, last hidden post-ReLU)."""
    h = x
    penultimate = None
    for i in range(n_layers):
        z = add_row_bias(op_apply("matmul", [h, leaves[f"{prefix}.w{i}"]]), leaves[f"{prefix}.b{i}"])
        if i < n_layers - 1:
            h = z.relu()
            penultimate = h
        else:
            h = z
    return h, penultimate


def mlp_forward(params: MLPParams, x, tape: Tape) -> ForwardOutput:
    """Run the MLP on a (B, d_in) batch, recording onto the given tape.

    The penultimate Var is the post-ReLU output of the last hidden
    layer. With no hidden layers it is the input batch itself.
    """
    x_arr = np.asarray(x, dtype=np.float64)
    if x_arr.ndim != 2 or x_arr.shape[1] != params.layer_sizes[0]:
        raise ValueError(
            f"input shape {x_arr.shape} does not match d_in={params.layer_sizes[0]}"
        )
    leaves = {}
    for name, arr in params_to_named(params, "mlp").items():
        leaves[name] = tape.leaf(arr, name=name)
    x_var = tape.constant(x_arr)
    n = len(params.layer_sizes) - 1
    logits, penultimate = forward_stack(x_var, leaves, n, "mlp")
    if penultimate is None:
        penultimate = x_var
    return ForwardOutput(logits=logits, penultimate=penultimate, leaves=leaves)


def projector_forward(params: ProjectorParams, features: Var, tape: Tape) -> tuple[Var, dict[str, Var]]:
    """Map penultimate features (already on the tape) to embeddings."""
    if features.shape[1] != params.layer_sizes[0]:
        raise ValueError(
            f"feature width {features.shape[1]} does not match projector input {params.layer_sizes[0]}"
        )
    leaves = {}
    for name, arr in params_to_named(params, "proj").items():
        leaves[name] = tape.leaf(arr, name=name)
    out, _ = forward_stack(features, leaves, len(params.layer_sizes) - 1, "proj")
    return out, leaves


def mlp_predict(params: MLPParams, x: np.ndarray):
    """Tape-free inference: (labels, softmax probabilities, penultimate).

    Plain numpy mirror of mlp_forward for evaluation loops and grids.
    """
    h = np.asarray(x, dtype=np.float64)
    if h.ndim != 2 or h.shape[1] != params.layer_sizes[0]:
        raise ValueError(f"input shape {h.shape} does not match d_in={params.layer_sizes[0]}")
    penultimate = h
    n = len(params.weights)
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        h = h @ w + b
        if i < n - 1:
            h = np.maximum(h, 0.0)
            penultimate = h
    shifted = h - h.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    probs = e / e.sum(axis=1, keepdims=True)
    return probs.argmax(axis=1), probs, penultimate


def save_checkpoint(path, named: dict[str, np.ndarray], meta: dict | None = None) -> None:
    """Write named tensors as JSON: format_version, meta, name/shape/values."""
    tensors = []
    for name in sorted(named):
        arr = np.asarray(named[name], dtype=np.float64)
        tensors.append({
            "name": name,
            "shape": list(arr.shape),
            "values": arr.reshape(-1).tolist(),
        })
    doc = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "meta": meta or {},
        "tensors": tensors,
    }
    with open(path, "w") as fh:
        json.dump(doc, fh)


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    """Read a checkpoint back; rejects unknown format versions."""
    with open(path) as fh:
        doc = json.load(fh)
    version = doc.get("format_version")
    if version != CHECKPOINT_FORMAT_VERSION:
        raise ValueError(f"unsupported checkpoint format_version {version!r}")
    named = {}
    for entry in doc["tensors"]:
        arr = np.array(entry["values"], dtype=np.float64).reshape(entry["shape"])
        named[entry["name"]] = arr
    return named, doc.get("meta", {})
