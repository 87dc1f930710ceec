"""Outer minimisation: natural, PGD-AT, TRADES, baseline reweight and FRL.

All methods share one epoch loop. A per-row objective is evaluated on fixed
chunks of each batch (attack plus gradient), chunk gradients are summed
pairwise in chunk order, and the parameter step is plain SGD with optional
momentum. Given the seed, the result is bit-identical for any thread count.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .attacks import AttackConfig, exact_linear_attack, pgd_attack
from .distributions import Dataset
from .evaluation import ClasswiseReport, eval_classwise, fairness_violations
from .models import LinearClassifier, Model, cross_entropy_grad, init_model, kl_boundary_grad
from .parallel import chunk_bounds, map_chunks, single_blas, tree_sum
from .rng import derive_seed, generator

METHODS = ("natural", "pgd_at", "trades", "baseline_reweight", "frl")
FRL_VARIANTS = ("reweight", "remargin", "both")
TRAIN_CHUNK = 2048


class TrainingDiverged(RuntimeError):
    def __init__(self, message, model=None, history=None):
        super().__init__(message)
        self.model = model
        self.history = history


@dataclass(frozen=True)
class ModelSpec:
    kind: str = "mlp"
    hidden: tuple = (32,)
    activation: str = "tanh"

    def __post_init__(self):
        if self.kind not in ("linear", "mlp"):
            raise ValueError(f"model kind must be 'linear' or 'mlp', got {self.kind!r}")
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))

    def build(self, input_dim: int, class_count: int, seed: int) -> Model:
        if self.kind == "linear":
            if class_count != 2:
                raise ValueError("linear models are binary")
            return init_model("linear", [input_dim], seed)
        return init_model("mlp", [input_dim, *self.hidden, class_count], seed, self.activation)


@dataclass(frozen=True)
class TrainConfig:
    """Optimiser and schedule. ``batch_size=None`` means full batch."""

    method: str = "pgd_at"
    epochs: int = 20
    lr: float = 0.1
    momentum: float = 0.0
    lr_decay_factor: float = 1.0
    lr_decay_every: int = 40
    trades_inv_lambda: float = 1.0
    batch_size: int | None = None
    seed: int = 0
    reweight_factor: float = 2.0

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}, got {self.method!r}")
        if not self.lr > 0:
            raise ValueError("lr must be positive")
        if int(self.epochs) != self.epochs or self.epochs < 0:
            raise ValueError("epochs must be a non-negative integer")
        if not 0 < self.lr_decay_factor <= 1:
            raise ValueError("lr_decay_factor must lie in (0, 1]")
        if self.lr_decay_every < 1:
            raise ValueError("lr_decay_every must be >= 1")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must lie in [0, 1)")
        if not self.trades_inv_lambda > 0:
            raise ValueError("trades_inv_lambda must be positive")
        if self.batch_size is not None and self.batch_size < 1:
            raise ValueError("batch_size must be positive")
        if not self.reweight_factor > 0:
            raise ValueError("reweight_factor must be positive")


@dataclass(frozen=True)
class FrlConfig:
    tau1: float = 0.05
    tau2: float = 0.05
    alpha1: float = 0.05
    alpha2: float = 0.05
    alpha2_star: float = 0.05
    eps_max: float | None = None
    variant: str = "both"
    literal_eq10: bool = False
    attack_loss: str = "kl"
    boundary_scale: float = 1.0
    iterations: int = 20

    def __post_init__(self):
        if self.variant not in FRL_VARIANTS:
            raise ValueError(f"variant must be one of {FRL_VARIANTS}, got {self.variant!r}")
        for name in ("tau1", "tau2"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        for name in ("alpha1", "alpha2", "alpha2_star", "boundary_scale"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.eps_max is not None and not self.eps_max > 0:
            raise ValueError("eps_max must be positive")
        if self.attack_loss not in ("ce", "kl"):
            raise ValueError("attack_loss must be 'ce' or 'kl'")
        if self.iterations < 0:
            raise ValueError("iterations must be non-negative")


@dataclass(frozen=True)
class FrlState:
    phi_nat: np.ndarray
    phi_bndy: np.ndarray
    eps_class: np.ndarray
    tau1: float
    tau2: float
    alpha1: float
    alpha2: float
    alpha2_star: float
    eps_max: float

    def __post_init__(self):
        for name in ("phi_nat", "phi_bndy", "eps_class"):
            a = np.array(getattr(self, name), dtype=np.float64)
            a.setflags(write=False)
            object.__setattr__(self, name, a)
        if np.any(self.phi_nat < 0) or np.any(self.phi_bndy < 0):
            raise ValueError("multipliers must be non-negative")
        if np.any(self.eps_class <= 0) or np.any(self.eps_class > self.eps_max):
            raise ValueError("per-class margins must lie in (0, eps_max]")

    @classmethod
    def initial(cls, class_count: int, eps: float, cfg: FrlConfig) -> "FrlState":
        eps_max = cfg.eps_max if cfg.eps_max is not None else 2.0 * eps
        return cls(np.zeros(class_count), np.zeros(class_count), np.full(class_count, float(eps)),
                   cfg.tau1, cfg.tau2, cfg.alpha1, cfg.alpha2, cfg.alpha2_star, eps_max)

    @property
    def class_count(self) -> int:
        return self.phi_nat.shape[0]


@dataclass
class HistoryRecord:
    iteration: int
    epoch: int
    phi_nat: np.ndarray
    phi_bndy: np.ndarray
    eps_class: np.ndarray
    report: ClasswiseReport
    satisfied: bool


@dataclass
class TrainHistory:
    records: list = field(default_factory=list)

    def append(self, rec: HistoryRecord) -> None:
        if self.records and rec.epoch < self.records[-1].epoch:
            raise ValueError("history epochs must be non-decreasing")
        self.records.append(rec)

    def __len__(self) -> int:
        return len(self.records)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        if not self.records:
            w.writerow(["iteration", "epoch", "satisfied"])
            return buf.getvalue()
        c = self.records[0].phi_nat.shape[0]
        head = ["iteration", "epoch", "satisfied"]
        for name in ("phi_nat", "phi_bndy", "eps", "std", "bndy", "rob"):
            head += [f"{name}_{i}" for i in range(c)]
        head += ["std_avg", "bndy_avg", "rob_avg"]
        w.writerow(head)
        for r in self.records:
            row = [r.iteration, r.epoch, int(r.satisfied)]
            for arr in (r.phi_nat, r.phi_bndy, r.eps_class, r.report.standard_rate,
                        r.report.boundary_rate, r.report.robust_rate):
                row += [repr(float(v)) for v in arr]
            row += [repr(r.report.average(m)) for m in ("standard", "boundary", "robust")]
            w.writerow(row)
        return buf.getvalue()


# --- the shared epoch loop ---------------------------------------------------

@dataclass(frozen=True)
class Objective:
    """Per-row loss ``nat_w[y] * CE(.) + scale * bndy_w[y] * KL(.)``.

    ``kind="natural"``: CE on clean rows. ``kind="adversarial"``: CE on
    attacked rows (PGD-AT). ``kind="boundary"``: CE on clean rows plus the KL
    boundary term at per-class radii ``eps_class`` (TRADES / FRL).
    """

    kind: str
    nat_weights: np.ndarray
    bndy_weights: np.ndarray | None = None
    eps_class: np.ndarray | None = None
    attack: AttackConfig | None = None
    boundary_scale: float = 1.0


def _attack_rows(model: Model, x, y, eps_rows, attack: AttackConfig, rng) -> np.ndarray:
    if not np.any(eps_rows > 0):
        return x
    if isinstance(model, LinearClassifier) and attack.loss == "ce":
        return exact_linear_attack(model, x, 2 * y - 1, eps_rows, attack.norm)
    return pgd_attack(model, x, y, attack, rng, epsilon=eps_rows)


def _chunk_grad(model: Model, obj: Objective, x, y, seed: int, path: tuple):
    nat_w = obj.nat_weights[y]
    if obj.kind == "natural":
        lg = cross_entropy_grad(model, x, y, nat_w, want_input=False)
        return lg.grad, lg.loss
    eps_rows = obj.eps_class[y]
    x_adv = _attack_rows(model, x, y, eps_rows, obj.attack, generator(seed, *path))
    if obj.kind == "adversarial":
        lg = cross_entropy_grad(model, x_adv, y, nat_w, want_input=False)
        return lg.grad, lg.loss
    ce = cross_entropy_grad(model, x, y, nat_w, want_input=False)
    kl = kl_boundary_grad(model, x, x_adv, obj.boundary_scale * obj.bndy_weights[y], want_input=False)
    return ce.grad + kl.grad, ce.loss + kl.loss


class Trainer:
    """Carries model, momentum buffer and the global epoch counter."""

    def __init__(self, model: Model, data: Dataset, cfg: TrainConfig, seed: int | None = None, stream: str = "train"):
        self.model = model
        self.data = data
        self.cfg = cfg
        self.seed = cfg.seed if seed is None else seed
        self.stream = stream
        self.epoch_index = 0
        self.velocity = np.zeros(model.param_count)
        self.last_loss = math.nan

    def lr(self) -> float:
        return self.cfg.lr * self.cfg.lr_decay_factor ** (self.epoch_index // self.cfg.lr_decay_every)

    def run_epoch(self, obj: Objective) -> float:
        n = len(self.data)
        bs = n if self.cfg.batch_size is None else min(self.cfg.batch_size, n)
        if self.cfg.batch_size is None:
            order = np.arange(n)
        else:
            order = generator(self.seed, self.stream, "shuffle", self.epoch_index).permutation(n)
        X, Y = self.data.features, self.data.labels
        lr = self.lr()
        total = 0.0
        for bi, (s, e) in enumerate(chunk_bounds(n, bs)):
            idx = order[s:e]
            xb, yb = X[idx], Y[idx]
            model = self.model

            def work(ci, bounds, model=model, xb=xb, yb=yb, bi=bi):
                cs, ce = bounds
                return _chunk_grad(model, obj, xb[cs:ce], yb[cs:ce], self.seed,
                                   (self.stream, "attack", self.epoch_index, bi, ci))

            results = map_chunks(work, chunk_bounds(e - s, TRAIN_CHUNK))
            grad = tree_sum([r[0] for r in results]) / (e - s)
            loss = sum(r[1] for r in results) / (e - s)
            if not (math.isfinite(loss) and np.all(np.isfinite(grad))):
                raise TrainingDiverged(f"non-finite loss at epoch {self.epoch_index}, batch {bi}", self.model)
            self.velocity = self.cfg.momentum * self.velocity + grad
            params = self.model.params() - lr * self.velocity
            if not np.all(np.isfinite(params)):
                raise TrainingDiverged(f"non-finite parameters at epoch {self.epoch_index}", self.model)
            self.model = self.model.with_params(params)
            total += loss * (e - s)
        self.epoch_index += 1
        self.last_loss = total / n
        return self.last_loss


def _initial_model(train: Dataset, model_spec, seed: int) -> Model:
    if isinstance(model_spec, ModelSpec):
        return model_spec.build(train.dim, train.class_count, derive_seed(seed, "init"))
    return model_spec


def _unit(c: int) -> np.ndarray:
    return np.ones(c)


def _run(train: Dataset, model_spec, cfg: TrainConfig, obj: Objective, epochs: int | None = None,
         stream: str = "train", log: list | None = None) -> Model:
    with single_blas():
        trainer = Trainer(_initial_model(train, model_spec, cfg.seed), train, cfg, stream=stream)
        for _ in range(cfg.epochs if epochs is None else epochs):
            loss = trainer.run_epoch(obj)
            if log is not None:
                log.append(loss)
    return trainer.model


def _attack_radius(attack: AttackConfig, epsilon) -> float:
    return attack.epsilon if epsilon is None else float(epsilon)


def train_natural(train: Dataset, model_spec, cfg: TrainConfig, class_weights=None, log: list | None = None) -> Model:
    """Minimise the (optionally class-weighted) mean cross-entropy on clean data.

    ``log`` collects the mean training loss of every epoch.
    """
    w = _unit(train.class_count) if class_weights is None else np.asarray(class_weights, dtype=np.float64)
    return _run(train, model_spec, cfg, Objective("natural", w), log=log)


def train_pgd_at(train: Dataset, model_spec, cfg: TrainConfig, attack: AttackConfig, class_weights=None,
                 epsilon=None, epochs: int | None = None, log: list | None = None) -> Model:
    """Cross-entropy on adversarial rows (PGD, or the exact attack for linear models).

    ``epsilon`` overrides the attack radius; ``0`` reduces to natural training.
    """
    c = train.class_count
    w = _unit(c) if class_weights is None else np.asarray(class_weights, dtype=np.float64)
    eps = np.full(c, _attack_radius(attack, epsilon))
    atk = replace(attack, loss="ce")
    return _run(train, model_spec, cfg, Objective("adversarial", w, eps_class=eps, attack=atk), epochs, log=log)


def train_trades(train: Dataset, model_spec, cfg: TrainConfig, attack: AttackConfig, epochs: int | None = None,
                 log: list | None = None) -> Model:
    """Clean CE plus ``(1/lambda) * KL(f(x) || f(x_adv))`` with KL-maximising PGD."""
    c = train.class_count
    obj = Objective("boundary", _unit(c), _unit(c), np.full(c, attack.epsilon), replace(attack, loss="kl"),
                    cfg.trades_inv_lambda)
    return _run(train, model_spec, cfg, obj, epochs, log=log)


# --- FRL ---------------------------------------------------------------------

def frl_update_multipliers(state: FrlState, report: ClasswiseReport, update_boundary: bool = True) -> FrlState:
    """One projected dual ascent step on the classwise constraints."""
    if report.class_count != state.class_count:
        raise ValueError("report and state disagree on the number of classes")
    v_nat = report.standard_rate - report.average("standard") - state.tau1
    phi_nat = np.maximum(0.0, state.phi_nat + state.alpha1 * v_nat)
    phi_bndy = state.phi_bndy
    if update_boundary:
        v_bndy = report.boundary_rate - report.average("boundary") - state.tau2
        phi_bndy = np.maximum(0.0, state.phi_bndy + state.alpha2 * v_bndy)
    return replace(state, phi_nat=phi_nat, phi_bndy=phi_bndy)


def frl_update_margins(state: FrlState, report: ClasswiseReport, literal: bool = False) -> FrlState:
    """Multiplicative margin update, capped at ``eps_max``.

    Default uses the violation relative to the class average; ``literal``
    drops the average (``R_bndy(i) - tau2``).
    """
    if report.class_count != state.class_count:
        raise ValueError("report and state disagree on the number of classes")
    viol = report.boundary_rate - state.tau2
    if not literal:
        viol = viol - report.average("boundary")
    eps = np.minimum(state.eps_class * np.exp(state.alpha2_star * viol), state.eps_max)
    eps = np.maximum(eps, np.finfo(np.float64).tiny)
    return replace(state, eps_class=eps)


def class_weights_from_multipliers(state: FrlState, class_count: int | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Per-class loss weights read off the Lagrangian, floored at 0, mean 1."""
    c = state.class_count if class_count is None else class_count
    if c != state.class_count:
        raise ValueError("class_count does not match the state")

    def weights(phi):
        coef = np.maximum(1.0 / c + phi - phi.sum() / c, 0.0)
        mean = coef.mean()
        return coef / mean if mean > 0 else np.ones(c)

    return weights(state.phi_nat), weights(state.phi_bndy)


def frl_train(train: Dataset, val: Dataset, model_spec, cfg: TrainConfig, attack_eval: AttackConfig,
              frl: FrlConfig, state0: FrlState | None = None, pretrained: Model | None = None,
              pretrain_epochs: int | None = None, train_attack: AttackConfig | None = None):
    """Alternate validation, dual/margin updates and one epoch of weighted training.

    Starts from ``pretrained`` or from a PGD-AT model trained with the same
    seed for ``pretrain_epochs`` (default ``cfg.epochs``). Stops once every
    constraint is met or after ``frl.iterations`` outer iterations. Returns
    ``(model, history, state)``.
    """
    if val.class_count != train.class_count:
        raise ValueError("train and validation sets disagree on the number of classes")
    train_attack = train_attack or attack_eval
    c = train.class_count
    model = pretrained
    if model is None:
        model = train_pgd_at(train, model_spec, cfg, train_attack, epochs=pretrain_epochs)
    state = state0 or FrlState.initial(c, attack_eval.epsilon, frl)
    atk = replace(train_attack, loss=frl.attack_loss)
    history = TrainHistory()
    with single_blas():
        trainer = Trainer(model, train, cfg, stream="frl")
        for it in range(frl.iterations + 1):
            report = eval_classwise(trainer.model, val, attack_eval, seed=derive_seed(cfg.seed, "frl-eval", it))
            satisfied = not fairness_violations(report, state.tau1, state.tau2).any_violated
            history.append(HistoryRecord(it, trainer.epoch_index, state.phi_nat, state.phi_bndy,
                                         state.eps_class, report, satisfied))
            if satisfied or it == frl.iterations:
                break
            if frl.variant in ("reweight", "both"):
                state = frl_update_multipliers(state, report)
            else:
                state = frl_update_multipliers(state, report, update_boundary=False)
            if frl.variant in ("remargin", "both"):
                state = frl_update_margins(state, report, literal=frl.literal_eq10)
            nat_w, bndy_w = class_weights_from_multipliers(state)
            obj = Objective("boundary", nat_w, bndy_w, state.eps_class, atk, frl.boundary_scale)
            try:
                trainer.run_epoch(obj)
            except TrainingDiverged as exc:
                exc.history = history
                raise
    return trainer.model, history, state


def train_baseline_reweight(train: Dataset, val: Dataset, model_spec, cfg: TrainConfig, attack: AttackConfig,
                            pretrained: Model | None = None, pretrain_epochs: int | None = None,
                            epochs: int | None = None, log: list | None = None) -> Model:
    """Up-weight the class with the highest training robust error, then retrain with PGD-AT.

    The worst class is found on the training data under a fixed pre-trained
    robust model (ties: lowest index); its rows get weight
    ``cfg.reweight_factor``. Retraining starts from the same initialisation as
    :func:`train_pgd_at`, so factor 1 reproduces it exactly. ``val`` is unused
    and accepted for call symmetry with :func:`frl_train`.
    """
    base = pretrained or train_pgd_at(train, model_spec, cfg, attack, epochs=pretrain_epochs)
    report = eval_classwise(base, train, attack, seed=derive_seed(cfg.seed, "baseline-eval"))
    worst, _ = report.worst("robust")
    w = np.ones(train.class_count)
    w[worst] = cfg.reweight_factor
    return train_pgd_at(train, model_spec, cfg, attack, class_weights=w, epochs=epochs, log=log)


def ablation_sweep(train: Dataset, evaluation: Dataset, pretrained: Model, cfg: TrainConfig, target_class: int,
                   mode: str, ratios, attack: AttackConfig, epochs: int | None = None, train_attack: AttackConfig | None = None):
    """Retrain from one start with only the target class's boundary weight or margin scaled.

    Returns ``[(ratio, report), ...]`` evaluated on ``evaluation``.
    """
    if mode not in ("weight", "margin"):
        raise ValueError("mode must be 'weight' or 'margin'")
    ratios = [float(r) for r in ratios]
    if not ratios or min(ratios) < 1:
        raise ValueError("ratios must be non-empty and each >= 1")
    if not 0 <= target_class < train.class_count:
        raise ValueError("target_class out of range")
    c = train.class_count
    atk = replace(train_attack or attack, loss="kl")
    out = []
    for r in ratios:
        bndy_w = np.ones(c)
        eps = np.full(c, atk.epsilon)
        if mode == "weight":
            bndy_w[target_class] = r
        else:
            eps[target_class] = r * atk.epsilon
        obj = Objective("boundary", np.ones(c), bndy_w, eps, atk, cfg.trades_inv_lambda)
        model = _run(train, pretrained, cfg, obj, epochs, stream="ablation")
        rep = eval_classwise(model, evaluation, attack, seed=derive_seed(cfg.seed, "ablation-eval"))
        out.append((r, rep))
    return out
