"""Oracle harness: closed forms against Monte-Carlo and exact grid search."""

from __future__ import annotations

import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import analytic
from .distributions import MixtureSpec
from .evaluation import binomial_band, grid_search_intercept, mc_classwise_errors
from .rng import derive_seed

CHECKS = ("mc", "intercept", "shift_direction", "monotone", "feature_gap")


@dataclass(frozen=True)
class VerifyConfig:
    mc_d: int = 10
    mc_eta: float = 0.5
    mc_k_ratio: float = 2.0
    mc_eps: tuple = (0.0, 0.1, 0.2)
    mc_samples: int = 2_000_000
    mc_bands: float = 3.0
    grid_points: int = 10_000
    grid_tolerance_steps: float = 2.0
    intercept_d: tuple = (2, 10)
    intercept_k: tuple = (1.5, 2.0, 3.0)
    intercept_eta: float = 1.0
    intercept_eps: float = 0.4
    feature_d: int = 5
    feature_m: int = 500
    feature_eta: float = 0.4
    feature_gamma: float = 0.02
    feature_k_ratio: float = 2.0
    feature_eps: float = 0.1
    feature_samples: int = 1_000_000
    monotone_points: int = 100

    def __post_init__(self):
        for name in ("mc_eps", "intercept_d", "intercept_k"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        if self.mc_samples < 10_000 or self.feature_samples < 10_000:
            raise ValueError("Monte-Carlo sample counts must be at least 1e4")
        if self.grid_points < 100 or self.monotone_points < 3:
            raise ValueError("grid sizes too small")


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: list = field(default_factory=list)
    seconds: float = 0.0

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'} {self.name} ({self.seconds:.1f}s)"


def _compare(label: str, exact: float, rate: float, band: float, k: float) -> dict:
    dev = abs(exact - rate)
    return {"case": label, "closed_form": exact, "mc": rate, "band": band, "deviation": dev, "ok": bool(dev <= k * band)}


def mc_agreement(cfg: VerifyConfig, seed: int) -> list[dict]:
    """Classwise errors of the natural and robust all-ones classifiers vs sampling."""
    spec = MixtureSpec(d=cfg.mc_d, eta=cfg.mc_eta, k_ratio=cfg.mc_k_ratio)
    ones = np.ones(spec.d)
    b_nat = analytic.natural_intercept(spec)
    nat_std = analytic.classwise_std_error_natural(spec)
    rows = []
    for eps in cfg.mc_eps:
        mc_seed = derive_seed(seed, "verify", "mc", repr(eps))
        rep = mc_classwise_errors(spec, (ones, b_nat), eps, cfg.mc_samples, mc_seed)
        _, nat_rob = analytic.linear_classwise_errors(spec, ones, b_nat, eps)
        cases = [("natural", "standard", nat_std), ("natural", "robust", nat_rob)]
        reps = {"natural": rep}
        if eps > 0:
            b_rob = analytic.robust_intercept(spec, eps)
            reps["robust"] = mc_classwise_errors(spec, (ones, b_rob), eps, cfg.mc_samples, mc_seed)
            cases += [("robust", "standard", analytic.classwise_std_error_robust(spec, eps)),
                      ("robust", "robust", analytic.classwise_rob_error_robust(spec, eps))]
        for model, metric, pair in cases:
            r = reps[model]
            bands = r.band(metric)
            rates = r.rate(metric)
            for c, exact in enumerate((pair.err_minus, pair.err_plus)):
                rows.append(_compare(f"eps={eps} {model} {metric} class{c}", exact, float(rates[c]),
                                     float(bands[c]), cfg.mc_bands))
    return rows


def intercept_agreement(cfg: VerifyConfig) -> list[dict]:
    """Closed-form intercepts against the exact error grid on ``[-d eta, d eta]``."""
    specs = [("scene", MixtureSpec(d=2, eta=2.0, k_ratio=math.sqrt(2.0)), 0.5)]
    for d in cfg.intercept_d:
        for k in cfg.intercept_k:
            specs.append((f"d={d} K={k}", MixtureSpec(d=d, eta=cfg.intercept_eta, k_ratio=k), cfg.intercept_eps))
    rows = []
    for label, spec, eps in specs:
        lo, hi = -spec.d * spec.eta, spec.d * spec.eta
        step = (hi - lo) / (cfg.grid_points - 1)
        for objective, exact, e in (("standard", analytic.natural_intercept(spec), 0.0),
                                    ("robust", analytic.robust_intercept(spec, eps), eps)):
            found = grid_search_intercept(spec, e, objective, lo, hi, cfg.grid_points)
            steps = abs(found - exact) / step
            rows.append({"case": f"{label} {objective}", "closed_form": exact, "grid": found,
                         "grid_steps": steps, "ok": bool(steps <= cfg.grid_tolerance_steps)})
    return rows


def shift_direction_grid(points=None) -> list[dict]:
    """Robust training lowers the narrow class's standard error and raises the wide one's."""
    from .tables import TheoryGrid, theory_table

    rows = []
    for r in theory_table(points if points is not None else TheoryGrid().points()):
        ok = (not r.skipped) and r.rob_std_minus < r.nat_std_minus and r.rob_std_plus > r.nat_std_plus
        rows.append({"case": f"d={r.d} K={r.k_ratio} eps={r.eps}", "delta_minus": r.delta_minus,
                     "delta_plus": r.delta_plus, "skip": r.skip_reason, "ok": bool(ok)})
    return rows


def monotone_intercept(cfg: VerifyConfig) -> list[dict]:
    rows = []
    for d in (2, 10, 50):
        for k in (1.5, 2.0, 3.0):
            etas = np.linspace(0.01, 2.0, cfg.monotone_points)
            g = np.array([analytic.natural_intercept(MixtureSpec(d=d, eta=float(e), k_ratio=k)) for e in etas])
            diffs = np.diff(g)
            rows.append({"case": f"d={d} K={k}", "min_difference": float(diffs.min()), "ok": bool(np.all(diffs > 0))})
    return rows


def feature_gap(cfg: VerifyConfig, seed: int) -> list[dict]:
    """Mixture with non-robust features: analytic verdict plus sampling agreement."""
    spec = MixtureSpec(d=cfg.feature_d, eta=cfg.feature_eta, k_ratio=cfg.feature_k_ratio,
                       m=cfg.feature_m, gamma=cfg.feature_gamma)
    eps = cfg.feature_eps
    res = analytic.theorem3_errors(spec, eps)
    rows = [{"case": "gap", "rise_plus": res.rise_plus, "rise_minus": res.rise_minus, "ok": bool(res.gap_holds)}]
    mc_seed = derive_seed(seed, "verify", "feature")
    models = (("natural", res.natural_weights, res.natural_bias, res.natural_std, res.natural_rob),
              ("robust", res.robust_weights, res.robust_bias, res.robust_std, res.robust_rob))
    mc_std = {}
    for name, w, b, std_pair, rob_pair in models:
        rep = mc_classwise_errors(spec, (w, b), eps, cfg.feature_samples, mc_seed)
        for metric, pair in (("standard", std_pair), ("robust", rob_pair)):
            for c, exact in enumerate((pair.err_minus, pair.err_plus)):
                rows.append(_compare(f"{name} {metric} class{c}", exact, float(rep.rate(metric)[c]),
                                     float(rep.band(metric)[c]), cfg.mc_bands))
        mc_std[name] = (rep.rate("standard"), rep.standard_count, rep.sample_count)
    rise = mc_std["robust"][0] - mc_std["natural"][0]
    band = np.hypot(binomial_band(mc_std["robust"][1], mc_std["robust"][2]),
                    binomial_band(mc_std["natural"][1], mc_std["natural"][2]))
    gap = float(rise[1] - rise[0])
    gap_band = float(np.hypot(band[0], band[1]))
    rows.append({"case": "gap (sampled)", "gap": gap, "band": gap_band, "ok": bool(gap > cfg.mc_bands * gap_band)})
    return rows


def run_checks(cfg: VerifyConfig, seed: int = 0, only=None) -> list[CheckResult]:
    names = CHECKS if not only else tuple(only)
    unknown = [n for n in names if n not in CHECKS]
    if unknown:
        raise ValueError(f"unknown checks {unknown}; choose from {CHECKS}")
    runners = {
        "mc": lambda: mc_agreement(cfg, seed),
        "intercept": lambda: intercept_agreement(cfg),
        "shift_direction": lambda: shift_direction_grid(),
        "monotone": lambda: monotone_intercept(cfg),
        "feature_gap": lambda: feature_gap(cfg, seed),
    }
    out = []
    for name in names:
        t0 = time.perf_counter()
        rows = runners[name]()
        out.append(CheckResult(name, all(r["ok"] for r in rows), rows, time.perf_counter() - t0))
    return out


def verify_config_dict(cfg: VerifyConfig) -> dict:
    return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(cfg).items()}
