"""Theory tables over parameter grids and the two-Gaussian boundary scene."""

from __future__ import annotations

import csv
import io
import itertools
import json
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
from skimage.measure import find_contours

from . import analytic
from .analytic import DomainError
from .attacks import AttackConfig
from .distributions import Dataset, MixtureSpec, sample_binary_mixture, save_csv_dataset
from .evaluation import mc_classwise_errors
from .models import LinearClassifier, logits
from .parallel import map_chunks
from .rng import derive_seed
from .training import ModelSpec, TrainConfig, train_natural, train_pgd_at

SKIP_MARGIN = "margin exceeds mean scale"


@dataclass(frozen=True)
class TheoryRow:
    d: int
    m: int
    eta: float
    gamma: float
    sigma: float
    k_ratio: float
    eps: float
    b_nat: float = math.nan
    b_rob: float = math.nan
    nat_std_minus: float = math.nan
    nat_std_plus: float = math.nan
    rob_std_minus: float = math.nan
    rob_std_plus: float = math.nan
    rob_rob_minus: float = math.nan
    rob_rob_plus: float = math.nan
    delta_minus: float = math.nan
    delta_plus: float = math.nan
    gap_holds: bool | None = None
    skip_reason: str = ""

    @property
    def skipped(self) -> bool:
        return bool(self.skip_reason)


COLUMNS = [f.name for f in fields(TheoryRow)]
COLUMN_NOTES = {
    "b_nat": "optimal intercept, clean objective",
    "b_rob": "optimal intercept, robust objective",
    "nat_std_minus": "class -1 standard error of the natural model",
    "rob_std_minus": "class -1 standard error of the robust model",
    "rob_rob_minus": "class -1 robust error of the robust model",
    "delta_minus": "rob_std_minus - nat_std_minus",
    "delta_plus": "rob_std_plus - nat_std_plus",
    "gap_holds": "robust-feature mixtures only: delta_plus > delta_minus",
}


def theory_row(spec: MixtureSpec, eps: float) -> TheoryRow:
    base = dict(d=spec.d, m=spec.m, eta=spec.eta, gamma=spec.gamma, sigma=spec.sigma, k_ratio=spec.k_ratio, eps=eps)
    if eps >= spec.eta:
        return TheoryRow(**base, skip_reason=SKIP_MARGIN)
    try:
        if spec.m > 0:
            res = analytic.theorem3_errors(spec, eps)
            nat, rob, robr = res.natural_std, res.robust_std, res.robust_rob
            b_nat, b_rob, gap = res.natural_bias, res.robust_bias, res.gap_holds
        else:
            nat = analytic.classwise_std_error_natural(spec)
            rob = analytic.classwise_std_error_robust(spec, eps)
            robr = analytic.classwise_rob_error_robust(spec, eps)
            b_nat, b_rob, gap = analytic.natural_intercept(spec), analytic.robust_intercept(spec, eps), None
    except DomainError as exc:
        return TheoryRow(**base, skip_reason=str(exc))
    return TheoryRow(**base, b_nat=b_nat, b_rob=b_rob,
                     nat_std_minus=nat.err_minus, nat_std_plus=nat.err_plus,
                     rob_std_minus=rob.err_minus, rob_std_plus=rob.err_plus,
                     rob_rob_minus=robr.err_minus, rob_rob_plus=robr.err_plus,
                     delta_minus=rob.err_minus - nat.err_minus, delta_plus=rob.err_plus - nat.err_plus,
                     gap_holds=gap)


@dataclass(frozen=True)
class TheoryGrid:
    """Cartesian grid; ``eps_ratios`` are multiples of ``eta``."""

    d: tuple = (2, 10, 50)
    k_ratio: tuple = (1.5, 2.0, 3.0)
    eps_ratios: tuple = tuple(round(0.1 * i, 1) for i in range(1, 10))
    eta: tuple = (1.0,)
    sigma: tuple = (1.0,)
    m: tuple = (0,)
    gamma: tuple = (0.0,)

    def points(self):
        for d, k, r, eta, s, m, g in itertools.product(self.d, self.k_ratio, self.eps_ratios, self.eta,
                                                        self.sigma, self.m, self.gamma):
            yield MixtureSpec(d=d, eta=eta, sigma=s, k_ratio=k, m=m, gamma=g), r * eta


def theory_table(points) -> list[TheoryRow]:
    """One row per ``(spec, eps)``; infeasible points become skipped rows."""
    points = list(points)
    return map_chunks(lambda i, p: theory_row(*p), points)


def _fmt(v) -> str:
    if isinstance(v, bool) or v is None:
        return "" if v is None else str(v).lower()
    if isinstance(v, float):
        return "" if math.isnan(v) else repr(v)
    return str(v)


def theory_table_csv(rows: list[TheoryRow]) -> str:
    buf = io.StringIO()
    notes = "; ".join(f"{k}: {v}" for k, v in COLUMN_NOTES.items())
    buf.write(f"# columns: {','.join(COLUMNS)} | {notes}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(COLUMNS)
    for r in rows:
        w.writerow([_fmt(getattr(r, c)) for c in COLUMNS])
    return buf.getvalue()


def read_theory_csv(text: str) -> list[dict]:
    lines = [ln for ln in text.splitlines() if not ln.startswith("#")]
    return list(csv.DictReader(lines))


# --- boundary scene ------------------------------------------------------------

@dataclass(frozen=True)
class SceneConfig:
    per_class: int = 5000
    eta: float = 2.0
    sigma: float = 1.0
    k_ratio: float = math.sqrt(2.0)
    eps: float = 0.5
    linear_epochs: int = 1000
    linear_lr: float = 0.5
    linear_momentum: float = 0.9
    mlp_hidden: tuple = (32,)
    mlp_activation: str = "tanh"
    mlp_epochs: int = 40
    mlp_lr: float = 0.1
    mlp_momentum: float = 0.9
    mlp_batch: int = 256
    mlp_attack_steps: int = 5
    mc_samples: int = 200_000
    mc_samples_mlp: int = 40_000
    extent: float = 6.0
    resolution: int = 400

    def __post_init__(self):
        object.__setattr__(self, "mlp_hidden", tuple(int(h) for h in self.mlp_hidden))
        if self.per_class < 1 or self.resolution < 2 or not self.extent > 0:
            raise ValueError("per_class, resolution and extent must be positive")

    @property
    def spec(self) -> MixtureSpec:
        return MixtureSpec(d=2, eta=self.eta, sigma=self.sigma, k_ratio=self.k_ratio)


def linear_boundary(model: LinearClassifier, extent: float) -> np.ndarray:
    """Segment of ``w.x + b = 0`` clipped to the square ``[-extent, extent]^2``."""
    (w1, w2), b = model.weights, model.intercept
    pts = []
    for x in (-extent, extent):
        if w2 != 0:
            y = -(b + w1 * x) / w2
            if -extent <= y <= extent:
                pts.append((x, y))
    for y in (-extent, extent):
        if w1 != 0:
            x = -(b + w2 * y) / w1
            if -extent <= x <= extent:
                pts.append((x, y))
    pts = sorted(set(pts))
    return np.array(pts[:1] + pts[-1:], dtype=np.float64).reshape(-1, 2)


def contour_boundary(model, extent: float, resolution: int) -> list[np.ndarray]:
    """Zero level set of the logit margin on a regular grid (marching squares)."""
    axis = np.linspace(-extent, extent, resolution)
    gx, gy = np.meshgrid(axis, axis, indexing="ij")
    z = logits(model, np.column_stack([gx.ravel(), gy.ravel()]))
    margin = (z[:, 1] - z[:, 0]).reshape(resolution, resolution)
    step = axis[1] - axis[0]
    return [(-extent + c * step) for c in find_contours(margin, 0.0)]


def _write_polylines(path: Path, lines: list[np.ndarray]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["segment", "x", "y"])
        for i, line in enumerate(lines):
            if not np.all(np.isfinite(line)):
                raise ValueError("boundary polyline has non-finite coordinates")
            for x, y in line:
                w.writerow([i, repr(float(x)), repr(float(y))])


@dataclass
class SceneResult:
    models: dict
    errors: dict
    files: list = field(default_factory=list)


def fig2_scene(seed: int, out_dir, cfg: SceneConfig | None = None) -> SceneResult:
    """Sample the two-Gaussian data, train four models, write polylines and MC errors.

    Writes ``samples.csv``, ``boundary_<model>.csv`` and ``errors.json``;
    the caller adds ``manifest.json``.
    """
    cfg = cfg or SceneConfig()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    spec = cfg.spec
    data: Dataset = sample_binary_mixture(spec, 2 * cfg.per_class, derive_seed(seed, "scene", "data"))
    save_csv_dataset(data, out / "samples.csv")

    lin_cfg = TrainConfig(method="natural", epochs=cfg.linear_epochs, lr=cfg.linear_lr,
                          momentum=cfg.linear_momentum, seed=derive_seed(seed, "scene", "linear"))
    mlp_cfg = TrainConfig(method="natural", epochs=cfg.mlp_epochs, lr=cfg.mlp_lr, momentum=cfg.mlp_momentum,
                          batch_size=cfg.mlp_batch, seed=derive_seed(seed, "scene", "mlp"))
    attack = AttackConfig(epsilon=cfg.eps, steps=cfg.mlp_attack_steps)
    mlp = ModelSpec("mlp", cfg.mlp_hidden, cfg.mlp_activation)
    models = {
        "logistic_natural": train_natural(data, ModelSpec("linear"), lin_cfg),
        "logistic_adversarial": train_pgd_at(data, ModelSpec("linear"), lin_cfg, attack),
        "mlp_natural": train_natural(data, mlp, mlp_cfg),
        "mlp_adversarial": train_pgd_at(data, mlp, mlp_cfg, attack),
    }

    files = [out / "samples.csv"]
    errors = {}
    mc_seed = derive_seed(seed, "scene", "mc")
    for name, model in models.items():
        if isinstance(model, LinearClassifier):
            lines = [linear_boundary(model, cfg.extent)]
            n_mc = cfg.mc_samples
        else:
            lines = contour_boundary(model, cfg.extent, cfg.resolution)
            n_mc = cfg.mc_samples_mlp
        path = out / f"boundary_{name}.csv"
        _write_polylines(path, lines)
        files.append(path)
        rep = mc_classwise_errors(spec, model, cfg.eps, n_mc, mc_seed,
                                  attack=AttackConfig(epsilon=cfg.eps, steps=20))
        entry = {"report": rep.to_dict()}
        if isinstance(model, LinearClassifier):
            entry["weights"] = model.weights.tolist()
            entry["intercept"] = model.intercept
            entry["normalized_intercept"] = model.normalized_intercept()
        errors[name] = entry
    errors["closed_form"] = {"b_nat": analytic.natural_intercept(spec),
                             "b_rob": analytic.robust_intercept(spec, cfg.eps)}
    (out / "errors.json").write_text(json.dumps(errors, indent=2, sort_keys=True))
    files.append(out / "errors.json")
    return SceneResult(models, errors, files)


def scene_config_dict(cfg: SceneConfig) -> dict:
    d = asdict(cfg)
    d["mlp_hidden"] = list(cfg.mlp_hidden)
    return d
