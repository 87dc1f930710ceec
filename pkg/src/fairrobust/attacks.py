"""Inner maximisation: PGD under ell-inf / ell-2 and the exact linear attack."""

from __future__ import annotations

from dataclasses import dataclass, field, asdict

import numpy as np

from .models import LinearClassifier, Model, cross_entropy_grad, kl_boundary_grad, predict

NORMS = ("linf", "l2")
ATTACK_LOSSES = ("ce", "kl")


@dataclass(frozen=True)
class AttackConfig:
    """PGD settings. ``step_size=None`` resolves to 2.5*eps/steps (linf) or 0.1 (l2)."""

    norm: str = "linf"
    epsilon: float = 8 / 255
    steps: int = 20
    step_size: float | None = None
    random_init: bool = True
    restarts: int = 1
    loss: str = "ce"
    clip_min: float | None = None
    clip_max: float | None = None

    def __post_init__(self):
        if self.norm not in NORMS:
            raise ValueError(f"norm must be one of {NORMS}, got {self.norm!r}")
        if not self.epsilon > 0:
            raise ValueError(f"epsilon must be positive, got {self.epsilon}")
        if int(self.steps) != self.steps or self.steps < 1:
            raise ValueError(f"steps must be a positive integer, got {self.steps}")
        if int(self.restarts) != self.restarts or self.restarts < 1:
            raise ValueError(f"restarts must be a positive integer, got {self.restarts}")
        if self.step_size is not None and not self.step_size > 0:
            raise ValueError(f"step_size must be positive, got {self.step_size}")
        if self.loss not in ATTACK_LOSSES:
            raise ValueError(f"loss must be one of {ATTACK_LOSSES}, got {self.loss!r}")
        if (self.clip_min is None) != (self.clip_max is None):
            raise ValueError("clip_min and clip_max go together")
        if self.clip_min is not None and not self.clip_min < self.clip_max:
            raise ValueError("clip_min must be below clip_max")

    @property
    def resolved_step_size(self) -> float:
        if self.step_size is not None:
            return float(self.step_size)
        return 2.5 * self.epsilon / self.steps if self.norm == "linf" else 0.1

    def resolved(self) -> "AttackConfig":
        return AttackConfig(**{**asdict(self), "step_size": self.resolved_step_size})

    def to_dict(self) -> dict:
        return asdict(self.resolved())


@dataclass
class AttackOutcome:
    """Per-row attack events; arrays when built from a batch."""

    clean_correct: np.ndarray
    adv_correct: np.ndarray
    flipped: np.ndarray = field(default=None)

    def __post_init__(self):
        bad = np.asarray(self.clean_correct) & ~np.asarray(self.adv_correct) & ~np.asarray(self.flipped)
        if np.any(bad):
            raise ValueError("clean-correct, adversarially wrong rows must be flipped")


def _radius(eps, n: int) -> np.ndarray:
    return np.broadcast_to(np.asarray(eps, dtype=np.float64), (n,)).reshape(n, 1)


def project(delta: np.ndarray, eps: np.ndarray, norm: str) -> np.ndarray:
    if norm == "linf":
        return np.clip(delta, -eps, eps)
    nrm = np.linalg.norm(delta, axis=1, keepdims=True)
    scale = np.minimum(1.0, eps / np.maximum(nrm, 1e-300))
    return delta * scale


def _random_start(rng: np.random.Generator, shape, eps: np.ndarray, norm: str) -> np.ndarray:
    if norm == "linf":
        return rng.uniform(-1.0, 1.0, shape) * eps
    direction = rng.standard_normal(shape)
    direction /= np.maximum(np.linalg.norm(direction, axis=1, keepdims=True), 1e-300)
    radius = rng.uniform(0.0, 1.0, (shape[0], 1)) ** (1.0 / shape[1])
    return direction * radius * eps


def _clip_box(x: np.ndarray, cfg: AttackConfig) -> np.ndarray:
    if cfg.clip_min is None:
        return x
    return np.clip(x, cfg.clip_min, cfg.clip_max)


def attack_loss(model: Model, x, x_adv, y, kind: str = "ce", want_input: bool = True):
    """Per-row attack objective and its gradient with respect to ``x_adv``."""
    if kind == "ce":
        lg = cross_entropy_grad(model, x_adv, y, want_input=want_input, want_params=False)
    else:
        lg = kl_boundary_grad(model, x, x_adv, want_input=want_input, want_params=False)
    return lg.row_losses, lg.input_grad


def pgd_attack(model: Model, x, y, cfg: AttackConfig, rng: np.random.Generator, epsilon=None) -> np.ndarray:
    """Projected gradient ascent on the attack loss; returns the best iterate per row.

    ``epsilon`` overrides ``cfg.epsilon`` and may be a per-row array (used for
    per-class training margins); the default ell-inf step then scales with
    each row's radius. The best candidate over all iterates and
    restarts is kept, so adding restarts never lowers the attained loss.
    """
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    y = np.atleast_1d(np.asarray(y)).astype(np.int64)
    if x.shape[1] != model.input_dim:
        raise ValueError(f"input dimension {x.shape[1]} does not match model input {model.input_dim}")
    n = x.shape[0]
    eps = _radius(cfg.epsilon if epsilon is None else epsilon, n)
    if not np.any(eps > 0):
        return x[0].copy() if single else x.copy()
    if cfg.step_size is None and cfg.norm == "linf" and epsilon is not None:
        alpha = 2.5 * eps / cfg.steps
    else:
        alpha = cfg.resolved_step_size
    best = x.copy()
    best_loss = np.full(n, -np.inf)
    for _ in range(cfg.restarts):
        delta = _random_start(rng, x.shape, eps, cfg.norm) if cfg.random_init else np.zeros_like(x)
        x_adv = _clip_box(x + delta, cfg)
        for step in range(cfg.steps + 1):
            loss, g = attack_loss(model, x, x_adv, y, cfg.loss, want_input=step < cfg.steps)
            better = loss > best_loss
            best[better] = x_adv[better]
            best_loss[better] = loss[better]
            if step == cfg.steps:
                break
            if cfg.norm == "linf":
                x_adv = x_adv + alpha * np.sign(g)
            else:
                gn = np.linalg.norm(g, axis=1, keepdims=True)
                x_adv = x_adv + alpha * g / np.maximum(gn, 1e-300)
            x_adv = _clip_box(x + project(x_adv - x, eps, cfg.norm), cfg)
    return best[0] if single else best


def exact_linear_attack(model: LinearClassifier, x, y_signed, epsilon, norm: str = "linf") -> np.ndarray:
    """Worst-case perturbation of a linear model: push the margin against the label."""
    if not isinstance(model, LinearClassifier):
        raise TypeError("exact_linear_attack needs a LinearClassifier")
    w = model.weights
    if not np.any(w):
        raise ValueError("weight vector is zero")
    x = np.asarray(x, dtype=np.float64)
    ys = np.asarray(y_signed, dtype=np.float64)
    if np.any(np.asarray(epsilon) < 0):
        raise ValueError("epsilon must be non-negative")
    if x.ndim == 2:
        ys = ys.reshape(-1, 1)
        epsilon = np.broadcast_to(np.asarray(epsilon, dtype=np.float64), (x.shape[0],)).reshape(-1, 1)
    if norm == "linf":
        direction = np.sign(w)
    elif norm == "l2":
        direction = w / np.linalg.norm(w)
    else:
        raise ValueError(f"unknown norm {norm!r}")
    return x - epsilon * ys * direction


def classify_outcome(model: Model, x, x_adv, y) -> AttackOutcome:
    y = np.asarray(y)
    clean = predict(model, x)
    adv = predict(model, x_adv)
    return AttackOutcome(clean == y, adv == y, clean != adv)
