"""Command-line front end.

Exit codes: 0 success, 1 a verification check failed, 2 configuration or
input error, 3 training diverged (partial outputs are kept).
"""

from __future__ import annotations

import argparse
import datetime as _dt
import hashlib
import json
import sys
from dataclasses import replace
from pathlib import Path

from . import __version__
from .config import Config, ConfigError, load_config, override
from .distributions import (IngestionError, MulticlassMixtureSpec, ParameterError, load_csv_dataset,
                            sample_multiclass_mixture)
from .evaluation import eval_classwise
from .models import ModelFormatError, deserialize_model, serialize_model
from .parallel import set_threads
from .rng import SeedLog
from .tables import fig2_scene, scene_config_dict, theory_table, theory_table_csv
from .training import (FrlState, TrainingDiverged, ablation_sweep, frl_train, train_baseline_reweight,
                       train_natural, train_pgd_at, train_trades)
from .verify import CHECKS, run_checks

EXIT_OK, EXIT_CHECK_FAILED, EXIT_INPUT, EXIT_DIVERGED = 0, 1, 2, 3


class InputError(ValueError):
    pass


def _now() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


def sha256_file(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 16), b""):
            h.update(block)
    return h.hexdigest()


class RunManifest:
    """Resolved config, seed names, timestamps and a hash for every output file."""

    def __init__(self, command: str, cfg: Config, seeds: SeedLog, out: Path, extra: dict | None = None):
        self.command = command
        self.cfg = cfg
        self.seeds = seeds
        self.out = out
        self.extra = extra or {}
        self.started = _now()
        self.files: list[Path] = []

    def add(self, path: Path) -> Path:
        self.files.append(Path(path))
        return path

    def write_text(self, name: str, text: str) -> Path:
        path = self.out / name
        path.write_text(text)
        return self.add(path)

    def write(self, status: str = "ok") -> dict:
        doc = {
            "tool": "fairrobust",
            "version": __version__,
            "command": self.command,
            "status": status,
            "seed": self.cfg.seed,
            "seed_names": list(self.seeds.names),
            "config": self.cfg.to_dict(),
            "started": self.started,
            "finished": _now(),
            "files": [{"path": str(p.relative_to(self.out)), "sha256": sha256_file(p), "bytes": p.stat().st_size}
                      for p in self.files],
            **self.extra,
        }
        (self.out / "manifest.json").write_text(json.dumps(doc, indent=2, sort_keys=True))
        return doc


# --- shared helpers ------------------------------------------------------------------

def _out_dir(args) -> Path:
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise InputError(f"cannot create output directory {out}: {exc.strerror}") from None
    return out


def _resolve(args) -> Config:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = cfg.replace(seed=args.seed)
    return cfg.replace(train=replace(cfg.train, seed=cfg.seed))


def _datasets(cfg: Config, seeds: SeedLog):
    csv_cfg = cfg.dataset_csv
    if csv_cfg.enabled:
        sets = [load_csv_dataset(p) for p in (csv_cfg.train, csv_cfg.val, csv_cfg.test)]
        if len({d.class_count for d in sets}) != 1 or len({d.dim for d in sets}) != 1:
            raise InputError("train, validation and test CSV files disagree on classes or features")
        return tuple(sets)
    t = cfg.distribution
    spec = MulticlassMixtureSpec.orthogonal(t.sigmas, t.distance)
    return (sample_multiclass_mixture(spec, t.train_per_class, seeds.derive("train", "data")),
            sample_multiclass_mixture(spec, t.val_per_class, seeds.derive("frl", "val")),
            sample_multiclass_mixture(spec, t.test_per_class, seeds.derive("test", "data")))


def _eval_report(model, data, cfg: Config, seeds: SeedLog):
    return eval_classwise(model, data, cfg.attack, seed=seeds.derive("eval", "attack"))


def _write_report(man: RunManifest, report, stem: str = "report") -> None:
    man.write_text(f"{stem}.json", json.dumps(report.to_dict(), indent=2, sort_keys=True))
    man.write_text(f"{stem}.csv", report.to_csv())


def _loss_history_csv(losses) -> str:
    return "epoch,loss\n" + "".join(f"{i},{float(v)!r}\n" for i, v in enumerate(losses))


# --- commands -------------------------------------------------------------------------

def cmd_analytic(args) -> int:
    cfg = _resolve(args)
    for item in args.grid or []:
        key, _, values = item.partition("=")
        if not values:
            raise ConfigError(f"--grid {item!r}: expected KEY=V1,V2,...")
        try:
            parsed = [json.loads(v) for v in values.split(",")]
        except json.JSONDecodeError:
            raise ConfigError(f"--grid {item!r}: values must be numbers") from None
        cfg = override(cfg, "analytic", **{key: parsed})
    out = _out_dir(args)
    man = RunManifest("analytic", cfg, SeedLog(cfg.seed), out)
    rows = theory_table(cfg.analytic.points())
    man.write_text("theory_table.csv", theory_table_csv(rows))
    man.write()
    skipped = sum(r.skipped for r in rows)
    print(f"wrote {len(rows)} rows ({skipped} skipped) to {out / 'theory_table.csv'}")
    return EXIT_OK


def cmd_verify(args) -> int:
    cfg = _resolve(args)
    only = None
    if args.checks:
        only = [c.strip() for c in args.checks.split(",") if c.strip()]
        bad = [c for c in only if c not in CHECKS]
        if bad:
            raise ConfigError(f"--checks: unknown check {bad[0]!r} (choose from {', '.join(CHECKS)})")
    results = run_checks(cfg.verify, cfg.seed, only)
    for r in results:
        print(r.line())
        for row in r.detail:
            if not row["ok"]:
                print(f"    failed: {row['case']}")
    if args.out:
        out = _out_dir(args)
        seeds = SeedLog(cfg.seed)
        man = RunManifest("verify", cfg, seeds, out)
        doc = [{"check": r.name, "passed": r.passed, "seconds": r.seconds, "detail": r.detail} for r in results]
        man.write_text("verify.json", json.dumps(doc, indent=2, sort_keys=True))
        man.write()
    return EXIT_OK if all(r.passed for r in results) else EXIT_CHECK_FAILED


def cmd_fig2(args) -> int:
    cfg = _resolve(args)
    out = _out_dir(args)
    seeds = SeedLog(cfg.seed)
    seeds.names.extend(["scene/data", "scene/linear", "scene/mlp", "scene/mc"])
    man = RunManifest("fig2", cfg, seeds, out, {"scene": scene_config_dict(cfg.scene)})
    try:
        res = fig2_scene(cfg.seed, out, cfg.scene)
    except TrainingDiverged:
        man.write("diverged")
        raise
    for p in res.files:
        man.add(p)
    man.write()
    print(f"scene written to {out}")
    return EXIT_OK


def _finetune(cfg: Config):
    lr = cfg.run.finetune_lr
    return cfg.train if lr is None else replace(cfg.train, lr=lr)


def cmd_train(args) -> int:
    cfg = _resolve(args)
    if args.method:
        cfg = override(cfg, "train", method=args.method)
    if args.variant:
        cfg = override(cfg, "frl", variant=args.variant)
    out = _out_dir(args)
    seeds = SeedLog(cfg.seed)
    train, val, test = _datasets(cfg, seeds)
    tcfg = cfg.train
    man = RunManifest("train", cfg, seeds, out, {"method": tcfg.method})
    method = tcfg.method
    losses: list = []
    history = None
    pre = cfg.run.pretrain_epochs
    try:
        if method == "natural":
            model = train_natural(train, cfg.model, tcfg, log=losses)
        elif method == "pgd_at":
            model = train_pgd_at(train, cfg.model, tcfg, cfg.train_attack, log=losses)
        elif method == "trades":
            model = train_trades(train, cfg.model, tcfg, cfg.train_attack, log=losses)
        elif method == "baseline_reweight":
            model = train_baseline_reweight(train, val, cfg.model, tcfg, cfg.train_attack,
                                            pretrain_epochs=pre, log=losses)
        else:
            state0 = FrlState.initial(train.class_count, cfg.attack.epsilon, cfg.frl)
            start = train_pgd_at(train, cfg.model, tcfg, cfg.train_attack, epochs=pre, log=losses)
            model, history, state = frl_train(train, val, cfg.model, _finetune(cfg), cfg.attack, cfg.frl, state0,
                                              pretrained=start, train_attack=cfg.train_attack)
            man.extra["final_state"] = {"phi_nat": state.phi_nat.tolist(), "phi_bndy": state.phi_bndy.tolist(),
                                        "eps_class": state.eps_class.tolist()}
    except TrainingDiverged as exc:
        if exc.history is not None:
            man.write_text("history.csv", exc.history.to_csv())
        elif losses:
            man.write_text("history.csv", _loss_history_csv(losses))
        if exc.model is not None:
            man.write_text("model_partial.json", serialize_model(exc.model))
        man.extra["error"] = str(exc)
        man.write("diverged")
        raise
    man.write_text("model.json", serialize_model(model))
    man.write_text("history.csv", history.to_csv() if history is not None else _loss_history_csv(losses))
    report = _eval_report(model, test, cfg, seeds)
    _write_report(man, report)
    man.write()
    worst, rate = report.worst("robust")
    print(f"{method}: average robust error {report.average('robust'):.4f}, worst class {worst} at {rate:.4f}")
    return EXIT_OK


def cmd_report(args) -> int:
    cfg = _resolve(args)
    out = _out_dir(args)
    try:
        model = deserialize_model(Path(args.model).read_text())
    except OSError as exc:
        raise InputError(f"cannot read model {args.model}: {exc.strerror}") from None
    seeds = SeedLog(cfg.seed)
    if args.data:
        data = load_csv_dataset(args.data)
    else:
        data = _datasets(cfg, seeds)[2]
    if data.dim != model.input_dim:
        raise InputError(f"data has {data.dim} features but the model expects {model.input_dim}")
    man = RunManifest("report", cfg, seeds, out, {"model": str(args.model), "model_sha256": sha256_file(Path(args.model))})
    report = _eval_report(model, data, cfg, seeds)
    _write_report(man, report)
    man.write()
    print(report.to_csv(), end="")
    return EXIT_OK


def cmd_ablate(args) -> int:
    cfg = _resolve(args)
    abl = cfg.ablation
    changes = {}
    if args.target_class is not None:
        changes["target_class"] = args.target_class
    if args.ratios:
        try:
            ratios = [float(r) for r in args.ratios.split(",")]
        except ValueError:
            raise ConfigError(f"--ratios {args.ratios!r}: expected comma-separated numbers") from None
        changes["weight_ratios" if args.mode == "weight" else "margin_ratios"] = ratios
    if changes:
        cfg = override(cfg, "ablation", **changes)
        abl = cfg.ablation
    out = _out_dir(args)
    seeds = SeedLog(cfg.seed)
    train, _, test = _datasets(cfg, seeds)
    if not 0 <= abl.target_class < train.class_count:
        raise ConfigError(f"ablation.target_class: {abl.target_class} is not a class of the task")
    tcfg = cfg.train
    man = RunManifest("ablate", cfg, seeds, out, {"mode": args.mode})
    if args.model:
        start = deserialize_model(Path(args.model).read_text())
    else:
        start = train_pgd_at(train, cfg.model, tcfg, cfg.train_attack, epochs=cfg.run.pretrain_epochs)
    ratios = abl.weight_ratios if args.mode == "weight" else abl.margin_ratios
    results = ablation_sweep(train, test, start, _finetune(cfg), abl.target_class, args.mode, ratios, cfg.attack,
                             epochs=abl.epochs, train_attack=cfg.train_attack)
    c = abl.target_class
    lines = ["ratio,target_standard,target_boundary,target_robust,avg_standard,avg_boundary,avg_robust"]
    for r, rep in results:
        vals = [rep.standard_rate[c], rep.boundary_rate[c], rep.robust_rate[c],
                rep.average("standard"), rep.average("boundary"), rep.average("robust")]
        lines.append(",".join([repr(r)] + [repr(float(v)) for v in vals]))
    man.write_text("curve.csv", "\n".join(lines) + "\n")
    man.write_text("reports.json", json.dumps([{"ratio": r, "report": rep.to_dict()} for r, rep in results],
                                              indent=2, sort_keys=True))
    man.write()
    print("\n".join(lines))
    return EXIT_OK


# --- parser -------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="JSON config document (defaults fill the rest)")
    common.add_argument("--out", metavar="DIR", default="runs/latest", help="output directory")
    common.add_argument("--seed", type=int, help="top-level seed (overrides the config)")
    common.add_argument("--threads", type=int, default=1, help="worker threads; never changes results")

    parser = argparse.ArgumentParser(prog="fairrobust", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"fairrobust {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("analytic", parents=[common], help="closed-form theory table over a grid")
    p.add_argument("--grid", action="append", metavar="KEY=V1,V2",
                   help="replace one grid axis (d, k_ratio, eps_ratios, eta, sigma, m, gamma)")
    p.set_defaults(func=cmd_analytic)

    p = sub.add_parser("verify", parents=[common], help="closed forms vs Monte-Carlo and grid search")
    p.add_argument("--checks", metavar="LIST", help=f"comma-separated subset of {', '.join(CHECKS)}")
    p.set_defaults(func=cmd_verify, out=None)

    p = sub.add_parser("fig2", parents=[common], help="two-Gaussian scene: samples, boundaries, errors")
    p.set_defaults(func=cmd_fig2)

    p = sub.add_parser("train", parents=[common], help="train a model and report classwise errors")
    p.add_argument("--method", choices=["natural", "pgd_at", "trades", "baseline_reweight", "frl"])
    p.add_argument("--variant", choices=["reweight", "remargin", "both"])
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("report", parents=[common], help="classwise report for a saved model")
    p.add_argument("--model", required=True, metavar="PATH")
    p.add_argument("--data", metavar="CSV", help="labelled CSV; default is the config's test set")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("ablate", parents=[common], help="sweep one class's boundary weight or margin")
    p.add_argument("--mode", choices=["weight", "margin"], required=True)
    p.add_argument("--class", dest="target_class", type=int)
    p.add_argument("--ratios", metavar="LIST")
    p.add_argument("--model", metavar="PATH", help="start from this model instead of a fresh PGD-AT run")
    p.set_defaults(func=cmd_ablate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        set_threads(args.threads)
        return args.func(args)
    except TrainingDiverged as exc:
        print(f"error: training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (ConfigError, InputError, IngestionError, ModelFormatError, ParameterError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
