"""Experiment protocols on the four-class benchmark and the two-Gaussian scene.

Shared by the scripts and the acceptance suite so that both run the same
numbers from the same named seeds.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .attacks import AttackConfig
from .distributions import MulticlassMixtureSpec, sample_multiclass_mixture
from .evaluation import ClasswiseReport, eval_classwise
from .rng import derive_seed
from .tables import SceneConfig, fig2_scene
from .training import FrlConfig, ModelSpec, TrainConfig, ablation_sweep, frl_train, train_pgd_at


@dataclass(frozen=True)
class BenchmarkSetup:
    sigmas: tuple = (1.0, 1.0, 2.0, 2.0)
    distance: float = 4.0
    train_per_class: int = 2500
    val_per_class: int = 300
    test_per_class: int = 2000
    model: ModelSpec = field(default_factory=ModelSpec)
    train: TrainConfig = field(default_factory=lambda: TrainConfig(epochs=15, lr=0.1, momentum=0.9, batch_size=256))
    eval_attack: AttackConfig = field(default_factory=lambda: AttackConfig(epsilon=0.4, steps=20))
    train_attack: AttackConfig = field(default_factory=lambda: AttackConfig(epsilon=0.4, steps=5))
    finetune_lr: float = 1e-3
    frl_iterations: int = 20
    tau: float = 0.05
    ablation_target: int = 2
    ablation_epochs: int = 10
    weight_ratios: tuple = (1.0, 2.0, 3.0, 4.5)
    margin_ratios: tuple = (1.0, 1.5, 2.0, 2.5)


def benchmark_data(seed: int, setup: BenchmarkSetup):
    spec = MulticlassMixtureSpec.orthogonal(setup.sigmas, setup.distance)
    return (sample_multiclass_mixture(spec, setup.train_per_class, derive_seed(seed, "train", "data")),
            sample_multiclass_mixture(spec, setup.val_per_class, derive_seed(seed, "frl", "val")),
            sample_multiclass_mixture(spec, setup.test_per_class, derive_seed(seed, "test", "data")))


def _configs(setup: BenchmarkSetup, seed: int) -> tuple[TrainConfig, TrainConfig]:
    """Pre-training config and the lower-rate config used for every fine-tuning arm."""
    cfg = TrainConfig(**{**setup.train.__dict__, "seed": seed})
    return cfg, TrainConfig(**{**cfg.__dict__, "lr": setup.finetune_lr})


def frl_comparison(seed: int, setup: BenchmarkSetup | None = None) -> dict[str, ClasswiseReport]:
    """Test-set reports for PGD-AT and FRL started from one pre-trained model.

    The baseline continues PGD-AT for as many epochs as FRL gets outer
    iterations, at the same fine-tuning rate, so both arms see the same
    training budget.
    """
    setup = setup or BenchmarkSetup()
    train, val, test = benchmark_data(seed, setup)
    cfg, ft = _configs(setup, seed)
    pre = train_pgd_at(train, setup.model, cfg, setup.train_attack)
    eval_seed = derive_seed(seed, "eval", "attack")
    out = {"pretrained": eval_classwise(pre, test, setup.eval_attack, seed=eval_seed)}
    base = train_pgd_at(train, pre, ft, setup.train_attack, epochs=setup.frl_iterations)
    out["pgd_at"] = eval_classwise(base, test, setup.eval_attack, seed=eval_seed)
    for variant in ("both", "reweight", "remargin"):
        frl = FrlConfig(tau1=setup.tau, tau2=setup.tau, variant=variant, iterations=setup.frl_iterations)
        model, _, _ = frl_train(train, val, setup.model, ft, setup.eval_attack, frl, pretrained=pre,
                                train_attack=setup.train_attack)
        out[f"frl_{variant}"] = eval_classwise(model, test, setup.eval_attack, seed=eval_seed)
    return out


def ablation_curves(seed: int, setup: BenchmarkSetup | None = None, modes=("weight", "margin")) -> dict:
    """``{mode: [(ratio, report), ...]}`` for the configured target class."""
    setup = setup or BenchmarkSetup()
    train, _, test = benchmark_data(seed, setup)
    cfg, ft = _configs(setup, seed)
    pre = train_pgd_at(train, setup.model, cfg, setup.train_attack)
    out = {}
    for mode in modes:
        ratios = setup.weight_ratios if mode == "weight" else setup.margin_ratios
        out[mode] = ablation_sweep(train, test, pre, ft, setup.ablation_target, mode, ratios, setup.eval_attack,
                                   epochs=setup.ablation_epochs, train_attack=setup.train_attack)
    return out


def spearman(x, y) -> float:
    from scipy.stats import spearmanr
    return float(spearmanr(x, y).statistic)


def scene_summary(seed: int, out_dir, cfg: SceneConfig | None = None) -> dict:
    """Directional facts of the two-Gaussian scene for one seed."""
    res = fig2_scene(seed, out_dir, cfg)
    summary = {}
    for family in ("logistic", "mlp"):
        nat = [c["standard_rate"] for c in res.errors[f"{family}_natural"]["report"]["classes"]]
        adv = [c["standard_rate"] for c in res.errors[f"{family}_adversarial"]["report"]["classes"]]
        summary[family] = {
            "natural_std": nat,
            "adversarial_std": adv,
            "narrow_class_falls": adv[0] < nat[0],
            "wide_class_rises": adv[1] > nat[1],
        }
    summary["logistic"]["natural_intercept"] = res.errors["logistic_natural"]["normalized_intercept"]
    summary["logistic"]["adversarial_intercept"] = res.errors["logistic_adversarial"]["normalized_intercept"]
    summary["logistic"]["intercept_falls"] = (summary["logistic"]["adversarial_intercept"]
                                              < summary["logistic"]["natural_intercept"])
    return summary
