"""Classwise error reports, Monte-Carlo and grid oracles, gradient checks."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass

import numpy as np

from .analytic import DomainError, std_normal_cdf
from .attacks import AttackConfig, exact_linear_attack, pgd_attack
from .distributions import BLOCK_ROWS, Dataset, MixtureSpec
from .models import LinearClassifier, Model, cross_entropy_grad, kl_boundary_grad, predict
from .parallel import chunk_bounds, map_chunks
from .rng import generator

BOUNDARY_MODES = ("exact", "flip")
EVAL_CHUNK = 1024


def binomial_band(counts, n) -> np.ndarray:
    """Normal-approximation standard error, variance floored at 1/n."""
    n = np.asarray(n, dtype=np.float64)
    p = np.asarray(counts, dtype=np.float64) / n
    var = np.maximum(p * (1.0 - p), 1.0 / n)
    return np.sqrt(var / n)


@dataclass(frozen=True)
class ClasswiseReport:
    """Per-class counts of standard, boundary and robust errors.

    ``robust = standard + boundary`` holds per class by construction and is
    re-checked here.
    """

    standard_count: np.ndarray
    boundary_count: np.ndarray
    robust_count: np.ndarray
    sample_count: np.ndarray
    estimator: str = "pgd"
    boundary_mode: str = "exact"

    def __post_init__(self):
        arrays = {}
        for name in ("standard_count", "boundary_count", "robust_count", "sample_count"):
            a = np.array(getattr(self, name), dtype=np.int64).reshape(-1)
            a.setflags(write=False)
            arrays[name] = a
            object.__setattr__(self, name, a)
        sizes = {a.shape for a in arrays.values()}
        if len(sizes) != 1:
            raise ValueError("per-class arrays differ in length")
        if np.any(arrays["sample_count"] <= 0):
            raise ValueError("every class needs at least one sample")
        if not np.array_equal(arrays["robust_count"], arrays["standard_count"] + arrays["boundary_count"]):
            raise ValueError("robust_count must equal standard_count + boundary_count per class")
        if np.any(arrays["robust_count"] > arrays["sample_count"] * (2 if self.boundary_mode == "flip" else 1)):
            raise ValueError("error counts exceed sample counts")

    @property
    def class_count(self) -> int:
        return self.sample_count.shape[0]

    def rate(self, metric: str) -> np.ndarray:
        return getattr(self, f"{metric}_count") / self.sample_count

    @property
    def standard_rate(self) -> np.ndarray:
        return self.rate("standard")

    @property
    def boundary_rate(self) -> np.ndarray:
        return self.rate("boundary")

    @property
    def robust_rate(self) -> np.ndarray:
        return self.rate("robust")

    def average(self, metric: str) -> float:
        return float(getattr(self, f"{metric}_count").sum() / self.sample_count.sum())

    def worst(self, metric: str) -> tuple[int, float]:
        """Worst class and its rate; ties go to the lowest index."""
        r = self.rate(metric)
        i = int(np.argmax(r))
        return i, float(r[i])

    def band(self, metric: str) -> np.ndarray:
        return binomial_band(getattr(self, f"{metric}_count"), self.sample_count)

    def to_dict(self) -> dict:
        out = {
            "estimator": self.estimator,
            "boundary_mode": self.boundary_mode,
            "classes": [],
            "average": {},
            "worst": {},
        }
        for c in range(self.class_count):
            row = {"class": c, "samples": int(self.sample_count[c])}
            for m in ("standard", "boundary", "robust"):
                row[f"{m}_count"] = int(getattr(self, f"{m}_count")[c])
                row[f"{m}_rate"] = float(self.rate(m)[c])
            out["classes"].append(row)
        for m in ("standard", "boundary", "robust"):
            out["average"][m] = self.average(m)
            cls, rate = self.worst(m)
            out["worst"][m] = {"class": cls, "rate": rate}
        return out

    @classmethod
    def from_dict(cls, doc: dict) -> "ClasswiseReport":
        rows = doc["classes"]
        return cls(
            [r["standard_count"] for r in rows],
            [r["boundary_count"] for r in rows],
            [r["robust_count"] for r in rows],
            [r["samples"] for r in rows],
            doc.get("estimator", "pgd"),
            doc.get("boundary_mode", "exact"),
        )

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["class", "samples", "standard_count", "standard_rate", "boundary_count",
                    "boundary_rate", "robust_count", "robust_rate"])
        for c in range(self.class_count):
            w.writerow([c, int(self.sample_count[c])] + sum(
                ([int(getattr(self, f"{m}_count")[c]), repr(float(self.rate(m)[c]))]
                 for m in ("standard", "boundary", "robust")), []))
        w.writerow(["avg", int(self.sample_count.sum())] + sum(
            ([int(getattr(self, f"{m}_count").sum()), repr(self.average(m))]
             for m in ("standard", "boundary", "robust")), []))
        return buf.getvalue()


def report_from_predictions(clean_pred, adv_pred, labels, class_count: int,
                            boundary_mode: str = "exact", estimator: str = "pgd") -> ClasswiseReport:
    """Count errors per class.

    ``exact``: boundary = clean-correct but adversarially wrong, so robust is
    the true "some perturbation fools the model" count. ``flip``: boundary =
    prediction changed under attack (the literal flip event), and robust is
    defined as standard + boundary.
    """
    if boundary_mode not in BOUNDARY_MODES:
        raise ValueError(f"boundary_mode must be one of {BOUNDARY_MODES}")
    labels = np.asarray(labels)
    clean_wrong = clean_pred != labels
    if boundary_mode == "exact":
        bndy = ~clean_wrong & (adv_pred != labels)
    else:
        bndy = adv_pred != clean_pred
    std = np.bincount(labels, weights=clean_wrong, minlength=class_count).astype(np.int64)
    bnd = np.bincount(labels, weights=bndy, minlength=class_count).astype(np.int64)
    n = np.bincount(labels, minlength=class_count)
    return ClasswiseReport(std, bnd, std + bnd, n, estimator, boundary_mode)


def adversarial_inputs(model: Model, x, y, attack: AttackConfig, seed: int, epsilon=None, stream: str = "eval") -> np.ndarray:
    """Attack every row; linear models get the exact worst case, others PGD.

    Rows are processed in fixed chunks with per-chunk random streams, so the
    result does not depend on the worker count.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y)
    if isinstance(model, LinearClassifier) and epsilon is None:
        return exact_linear_attack(model, x, 2 * y - 1, attack.epsilon, attack.norm)
    eps = None if epsilon is None else np.broadcast_to(np.asarray(epsilon, dtype=np.float64), (x.shape[0],))
    bounds = chunk_bounds(x.shape[0], EVAL_CHUNK)

    def run(i, b):
        s, e = b
        return pgd_attack(model, x[s:e], y[s:e], attack, generator(seed, stream, i),
                          epsilon=None if eps is None else eps[s:e])

    parts = map_chunks(run, bounds)
    return np.vstack(parts) if parts else x.copy()


def eval_classwise(model: Model, data: Dataset, attack: AttackConfig, seed: int = 0,
                   boundary_mode: str = "exact") -> ClasswiseReport:
    if np.any(data.class_sizes() == 0):
        raise ValueError("evaluation data is missing a class")
    clean = predict(model, data.features)
    x_adv = adversarial_inputs(model, data.features, data.labels, attack, seed)
    adv = predict(model, x_adv)
    est = "exact-linear" if isinstance(model, LinearClassifier) else f"pgd-{attack.steps}"
    return report_from_predictions(clean, adv, data.labels, data.class_count, boundary_mode, est)


def _as_classifier(classifier) -> Model:
    if isinstance(classifier, tuple):
        w, b = classifier
        return LinearClassifier(np.asarray(w, dtype=np.float64), float(b))
    return classifier


def mc_classwise_errors(spec: MixtureSpec, classifier, eps: float, n_samples: int, seed: int,
                        attack: AttackConfig | None = None) -> ClasswiseReport:
    """Monte-Carlo classwise errors on fresh draws from ``spec``.

    Linear classifiers are attacked with the exact ell-inf worst case (no
    PGD); other models with PGD from ``attack`` (default: 20 steps). Draws
    are streamed in blocks; the data equal ``sample_binary_mixture(spec,
    n_samples, seed)``.
    """
    if n_samples < 10_000:
        raise ValueError("n_samples must be at least 1e4")
    if eps < 0:
        raise ValueError("eps must be non-negative")
    model = _as_classifier(classifier)
    if model.input_dim != spec.dim:
        raise DomainError(f"classifier input {model.input_dim} does not match spec dimension {spec.dim}")
    linear = isinstance(model, LinearClassifier)
    if not linear and eps > 0:
        attack = attack or AttackConfig(epsilon=eps, steps=20)
        attack = AttackConfig(**{**attack.__dict__, "epsilon": eps})
    theta = spec.theta
    counts = {m: np.zeros(2, dtype=np.int64) for m in ("standard", "boundary")}
    sizes = np.array([n_samples // 2, n_samples - n_samples // 2])
    shift = eps * float(np.abs(model.weights).sum()) if linear else 0.0
    for label in (0, 1):
        mean = theta if label == 1 else -theta
        std = spec.class_std(label)
        ys = 2 * label - 1
        n = int(sizes[label])
        for b, start in enumerate(range(0, n, BLOCK_ROWS)):
            rows = min(BLOCK_ROWS, n - start)
            x = mean + std * generator(seed, f"class-{label}", b).standard_normal((rows, spec.dim))
            if linear:
                margin = x @ model.weights + model.intercept
                clean_ok = (margin > 0) == (label == 1)
                adv_margin = margin - ys * shift
                adv_ok = (adv_margin > 0) == (label == 1)
            else:
                clean_ok = predict(model, x) == label
                if eps > 0:
                    x_adv = pgd_attack(model, x, np.full(rows, label), attack, generator(seed, "mc-attack", label, b))
                    adv_ok = predict(model, x_adv) == label
                else:
                    adv_ok = clean_ok
            counts["standard"][label] += int(np.count_nonzero(~clean_ok))
            counts["boundary"][label] += int(np.count_nonzero(clean_ok & ~adv_ok))
    est = "mc-exact-linear" if linear else f"mc-pgd-{attack.steps if attack else 0}"
    return ClasswiseReport(counts["standard"], counts["boundary"], counts["standard"] + counts["boundary"],
                           sizes, est, "exact")


def grid_search_intercept(spec: MixtureSpec, eps: float, objective: str, b_lo: float, b_hi: float,
                          grid_points: int = 10_000) -> float:
    """Grid minimiser of the exact average error of ``sign(1.x + b)``.

    No sampling: each grid point uses the Gaussian tail of the projection.
    Ties go to the smallest ``b``.
    """
    if not b_lo < b_hi:
        raise ValueError("b_lo must be below b_hi")
    if grid_points < 100:
        raise ValueError("grid_points must be at least 100")
    if objective not in ("standard", "robust"):
        raise ValueError("objective must be 'standard' or 'robust'")
    if eps < 0:
        raise ValueError("eps must be non-negative")
    p = spec.dim
    grid = np.linspace(b_lo, b_hi, grid_points)
    proj = float(np.ones(p) @ spec.theta)
    scale = math.sqrt(p) * spec.sigma
    shift = eps * p if objective == "robust" else 0.0
    err_minus = std_normal_cdf((grid - proj + shift) / scale)
    err_plus = std_normal_cdf((-grid - proj + shift) / (spec.k_ratio * scale))
    return float(grid[int(np.argmin(err_minus + err_plus))])


@dataclass(frozen=True)
class ViolationReport:
    standard_slack: np.ndarray
    boundary_slack: np.ndarray

    @property
    def standard_violated(self) -> np.ndarray:
        return self.standard_slack > 0

    @property
    def boundary_violated(self) -> np.ndarray:
        return self.boundary_slack > 0

    @property
    def any_violated(self) -> bool:
        return bool(self.standard_violated.any() or self.boundary_violated.any())


def fairness_violations(report: ClasswiseReport, tau1: float, tau2: float) -> ViolationReport:
    """Slack of each classwise constraint ``rate_i - average - tau``."""
    return ViolationReport(
        report.standard_rate - report.average("standard") - tau1,
        report.boundary_rate - report.average("boundary") - tau2,
    )


def relu_kink_nearby(model: Model, x, margin: float) -> bool:
    from .models import MlpClassifier, _forward_cache
    if not isinstance(model, MlpClassifier) or model.activation != "relu":
        return False
    xb = np.atleast_2d(np.asarray(x, dtype=np.float64))
    _, (_, pre) = _forward_cache(model, xb)
    return any(np.any(np.abs(z) < margin) for z in pre)


def _rel_err(analytic: np.ndarray, numeric: np.ndarray, floor: float) -> float:
    if analytic.size == 0:
        return 0.0
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric) / denom))


def finite_difference_check(model: Model, loss_kind: str, x, y=None, x_adv=None, step: float = 1e-5,
                            floor: float = 1e-6, check_inputs: bool = True):
    """Largest relative gap between analytic and central-difference gradients.

    Covers every parameter and, with ``check_inputs``, every input coordinate
    (``x`` for cross-entropy, ``x_adv`` for KL). Relative errors use
    ``max(|analytic|, |numeric|, floor)`` as denominator. Returns ``None`` for
    a ReLU net with a pre-activation within ``10 * step`` of its kink.
    """
    if not step > 0:
        raise ValueError("step must be positive")
    x = np.asarray(x, dtype=np.float64)
    if loss_kind == "ce":
        def loss(m, xi):
            return cross_entropy_grad(m, xi, y, want_input=False, want_params=False).loss
        lg = cross_entropy_grad(model, x, y)
        probe = x
    elif loss_kind == "kl":
        x_adv = np.asarray(x_adv, dtype=np.float64)
        def loss(m, xa):
            return kl_boundary_grad(m, x, xa, want_input=False, want_params=False).loss
        lg = kl_boundary_grad(model, x, x_adv)
        probe = x_adv
    else:
        raise ValueError(f"unknown loss kind {loss_kind!r}")
    margin = 10 * step
    if relu_kink_nearby(model, x, margin) or (loss_kind == "kl" and relu_kink_nearby(model, x_adv, margin)):
        return None

    theta = model.params()
    num = np.empty_like(theta)
    for i in range(theta.size):
        tp = theta.copy()
        tp[i] += step
        tm = theta.copy()
        tm[i] -= step
        num[i] = (loss(model.with_params(tp), probe) - loss(model.with_params(tm), probe)) / (2 * step)
    worst = _rel_err(lg.grad, num, floor)
    if check_inputs:
        flat = probe.reshape(-1)
        num_x = np.empty_like(flat)
        for i in range(flat.size):
            xp = flat.copy()
            xp[i] += step
            xm = flat.copy()
            xm[i] -= step
            num_x[i] = (loss(model, xp.reshape(probe.shape)) - loss(model, xm.reshape(probe.shape))) / (2 * step)
        worst = max(worst, _rel_err(np.asarray(lg.input_grad).reshape(-1), num_x, floor))
    return worst
