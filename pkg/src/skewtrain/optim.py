"""SGD with momentum, cosine schedule, EMA, and sharpness-aware steps.

Parameters are named float64 arrays; every update is functional (new
dicts, inputs untouched) so trajectories are bit-reproducible and easy
to compare across optimizer variants.

The sharpness-aware step is two-phase: compute the ascent-loss gradient
at the current point, move rho_eff along its normalized direction,
compute the descent-loss gradient there, then apply a plain SGD update
at the original point. The class-conditional variant (sam_a_*) scales
per-example ascent losses by a per-class radius and uses the batch mean
radius as rho_eff.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .data import ClassProfile

SAM_MODES = ("off", "sam", "sam_a_paper", "sam_a_inverse")


@dataclass
class TrainConfig:
    lr0: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 2e-4
    epochs: int = 200
    warmup_epochs: int = 5
    batch_size: int = 32

    def __post_init__(self):
        if self.lr0 <= 0:
            raise ValueError("lr0 must be > 0")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must be in [0, 1)")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be >= 0")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if not 0 <= self.warmup_epochs < self.epochs:
            raise ValueError("warmup_epochs must be in [0, epochs)")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")


@dataclass
class SamSpec:
    rho: float = 0.05
    mode: str = "off"

    def __post_init__(self):
        if self.rho < 0:
            raise ValueError("rho must be >= 0")
        if self.mode not in SAM_MODES:
            raise ValueError(f"mode must be one of {SAM_MODES}, got {self.mode!r}")


@dataclass
class OptimState:
    velocity: dict[str, np.ndarray]
    ema: dict[str, np.ndarray]
    ema_decay: float


@dataclass
class StepInfo:
    ascent_loss: float
    descent_loss: float
    rho_eff: float
    ascent_skipped: bool


Params = dict[str, np.ndarray]


def init_state(params: Params, ema_decay: float = 0.999) -> OptimState:
    """Zero velocity; EMA starts as a copy of the initial parameters."""
    if not 0.0 <= ema_decay <= 1.0:
        raise ValueError("ema_decay must be in [0, 1]")
    return OptimState(
        velocity={k: np.zeros_like(v) for k, v in params.items()},
        ema={k: v.copy() for k, v in params.items()},
        ema_decay=ema_decay,
    )


def _check_keys(params: Params, other: dict, what: str):
    if set(params) != set(other):
        raise ValueError(f"{what} keys do not match parameter keys")


def sgd_update(params: Params, grads: Params, lr: float, config: TrainConfig, state: OptimState):
    """One momentum step with coupled weight decay.

    g <- grad + weight_decay * theta
    v <- momentum * v + g
    theta <- theta - lr * v
    """
    _check_keys(params, grads, "gradient")
    _check_keys(params, state.velocity, "velocity")
    new_params: Params = {}
    new_vel: Params = {}
    for name, theta in params.items():
        g = grads[name] + config.weight_decay * theta
        v = config.momentum * state.velocity[name] + g
        new_params[name] = theta - lr * v
        new_vel[name] = v
    return new_params, OptimState(new_vel, state.ema, state.ema_decay)


def cosine_lr(epoch: int, config: TrainConfig) -> float:
    """Linear warmup to lr0, then cosine decay toward zero."""
    if not 0 <= epoch < config.epochs:
        raise ValueError(f"epoch {epoch} outside [0, {config.epochs})")
    if epoch < config.warmup_epochs:
        return config.lr0 * (epoch + 1) / config.warmup_epochs
    span = config.epochs - config.warmup_epochs
    return config.lr0 * 0.5 * (1.0 + math.cos(math.pi * (epoch - config.warmup_epochs) / span))


def ema_update(state: OptimState, params: Params, decay: float | None = None) -> OptimState:
    """ema <- decay * ema + (1 - decay) * theta."""
    d = state.ema_decay if decay is None else decay
    if not 0.0 <= d <= 1.0:
        raise ValueError("decay must be in [0, 1]")
    _check_keys(params, state.ema, "ema")
    new_ema = {k: d * state.ema[k] + (1.0 - d) * params[k] for k in params}
    return OptimState(state.velocity, new_ema, state.ema_decay)


def rho_per_class(profile: ClassProfile, spec: SamSpec) -> np.ndarray:
    """Per-class ascent radii for the class-conditional modes.

    paper mode:   rho_c = rho / (1 - p_c)
    inverse mode: rho_c = min(10 * rho, rho * (1/K) / p_c)
    """
    if spec.mode not in ("sam_a_paper", "sam_a_inverse"):
        raise ValueError(f"per-class radii undefined for mode {spec.mode!r}")
    p = profile.proportions
    if profile.num_classes < 2:
        raise ValueError("class-conditional radii need at least two classes")
    if spec.mode == "sam_a_paper":
        return spec.rho / (1.0 - p)
    # Group the proportion ratio first: with exactly uniform classes
    # (1/K) / p_c is exactly 1.0, so rho_c lands bitwise on rho.
    return np.minimum(10.0 * spec.rho, spec.rho * ((1.0 / profile.num_classes) / p))


def sam_ascent_weights(
    batch_labels: np.ndarray, profile: ClassProfile, spec: SamSpec
) -> np.ndarray | None:
    """Per-example ascent-loss weights s_i = rho_{y_i} / rho, or None.

    Plain sam uses the unweighted batch loss; with rho = 0 the step
    degenerates to SGD so weights are irrelevant and None is returned.
    """
    if spec.mode in ("off", "sam") or spec.rho == 0.0:
        return None
    labels = np.asarray(batch_labels, dtype=np.int64)
    return rho_per_class(profile, spec)[labels] / spec.rho


def sam_perturb(
    params: Params,
    batch_labels: np.ndarray | None,
    profile: ClassProfile | None,
    grads: Params,
    spec: SamSpec,
):
    """Move rho_eff along the normalized ascent gradient.

    Returns (perturbed_params, rho_eff, ascent_skipped). The
    perturbation has L2 norm exactly rho_eff over the flattened
    parameter vector; a zero gradient norm skips the move and flags it.
    """
    if spec.mode == "off":
        raise ValueError("sam_perturb called with mode 'off'")
    _check_keys(params, grads, "gradient")
    if spec.mode == "sam":
        rho_eff = spec.rho
    else:
        if batch_labels is None or profile is None:
            raise ValueError("class-conditional modes need batch labels and a profile")
        labels = np.asarray(batch_labels, dtype=np.int64)
        if labels.size == 0:
            raise ValueError("empty batch")
        if spec.rho == 0.0:
            rho_eff = 0.0
        else:
            radii = rho_per_class(profile, spec)[labels]
            # The mean of an all-equal vector is that value; summing
            # would round it (128 copies of 0.1 average to 0.1 plus an
            # ulp), which matters when this path must degenerate to
            # plain sam exactly.
            if np.all(radii == radii[0]):
                rho_eff = float(radii[0])
            else:
                rho_eff = float(radii.mean())
    if rho_eff == 0.0:
        return dict(params), 0.0, False
    norm = math.sqrt(sum(float(np.square(g).sum()) for g in grads.values()))
    if norm == 0.0:
        return dict(params), rho_eff, True
    scale = rho_eff / norm
    return {k: params[k] + scale * grads[k] for k in params}, rho_eff, False


def sam_step(
    params: Params,
    state: OptimState,
    lr: float,
    config: TrainConfig,
    spec: SamSpec,
    loss_and_grads,
    batch_labels: np.ndarray | None = None,
    profile: ClassProfile | None = None,
):
    """Two forward/backward passes, one SGD update, one EMA update.

    loss_and_grads(params, example_weights) -> (loss_value, grads);
    example_weights is None except for the class-conditional ascent
    pass, where the callee should average s_i * l_i / sum(s_i).
    """
    if spec.mode == "off":
        raise ValueError("sam_step called with mode 'off'; use sgd_update")
    weights = sam_ascent_weights(batch_labels, profile, spec) if batch_labels is not None else None
    if spec.mode in ("sam_a_paper", "sam_a_inverse") and weights is None and spec.rho > 0:
        raise ValueError("class-conditional modes need batch labels and a profile")
    ascent_loss, ascent_grads = loss_and_grads(params, weights)
    perturbed, rho_eff, skipped = sam_perturb(params, batch_labels, profile, ascent_grads, spec)
    descent_loss, descent_grads = loss_and_grads(perturbed, None)
    new_params, new_state = sgd_update(params, descent_grads, lr, config, state)
    new_state = ema_update(new_state, new_params)
    info = StepInfo(
        ascent_loss=float(ascent_loss),
        descent_loss=float(descent_loss),
        rho_eff=rho_eff,
        ascent_skipped=skipped,
    )
    return new_params, new_state, info
