"""Command-line surface tying data generation, training, and evaluation
into reproducible experiments.

Every command writes its artifacts into a run directory named by a hash of
the fully resolved configuration (defaults < config file < explicit flags),
records that configuration in `run.json`, and prints the run directory as its
last stdout line. Re-running a completed configuration is a no-op unless
--force is given; because every stage is seeded, a forced re-run reproduces
the same artifact bytes (modulo wall-clock fields in report.json).
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from pathlib import Path

from .datagen import DatasetManifest, SynthSpec, generate, load_manifest, merge_sources
from .errors import ConfigError, ContractError, FormatError, ManifestError
from .evaluator import evaluate, export_scatter, shot_sweep
from .losses import LossConfig
from .model import ArchConfig, init_model
from .residual import ResidualConfig
from .trainer import (
    FewShotSpec,
    TrainConfig,
    default_batch_size,
    finetune,
    load_checkpoint,
    read_checkpoint_meta,
    save_checkpoint,
    train_source,
)

VARIANTS = ("full", "no-residual", "no-reconstruction", "cross-entropy")
LATENT_CHOICES = (32, 64, 128, 256, 512)

_DOMAIN_ERRORS = (ConfigError, ContractError, FormatError, ManifestError, OSError)


class _UsageError(Exception):
    pass


def thread_env(n: str) -> dict:
    """Environment variables that cap BLAS worker threads at n."""
    return {var: str(n) for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS")}


def variant_configs(variant: str, gamma: float = 0.1) -> tuple[ResidualConfig, LossConfig]:
    """Preprocessing/loss settings for one ablation variant."""
    if variant not in VARIANTS:
        raise ConfigError(f"unknown variant {variant!r}, expected one of {VARIANTS}")
    residual_cfg = ResidualConfig(enabled=(variant != "no-residual"))
    loss_cfg = LossConfig(
        gamma=gamma,
        head="cross_entropy" if variant == "cross-entropy" else "activation",
        reconstruction_enabled=(variant != "no-reconstruction"),
    )
    return residual_cfg, loss_cfg


# ----------------------------------------------------------------- resolution

_DEFAULTS = {
    "gen-data": {"spec": None, "n": None, "size": 64, "strength": 0.8, "seed": 0},
    "train": {
        "sources": None, "seed": 0, "variant": "full", "latent": 128, "gamma": 0.1,
        "max_epochs": 200, "patience": 30, "batch_size": None,
    },
    "finetune": {
        "checkpoint": None, "target": None, "shots": [0], "runs": 1, "seed": 0,
        "variant": "full", "gamma": 0.1, "max_epochs": 200, "patience": 30,
        "batch_size": None,
    },
    "eval": {"checkpoint": None, "target": None, "split": "test", "variant": None},
    "ablate": {
        "sources": None, "target": None, "shots": [0], "runs": 1, "seed": 0,
        "gamma": 0.1, "latents": list(LATENT_CHOICES), "max_epochs": 200,
        "patience": 30, "batch_size": None,
    },
}

_REQUIRED = {
    "gen-data": ("spec", "n"),
    "train": ("sources",),
    "finetune": ("checkpoint", "target"),
    "eval": ("checkpoint", "target"),
    "ablate": ("sources", "target"),
}


def _int_list(value) -> list:
    if isinstance(value, (list, tuple)):
        return [int(v) for v in value]
    return [int(tok) for tok in str(value).split(",") if tok]


def _resolve(command: str, args: argparse.Namespace) -> dict:
    resolved = dict(_DEFAULTS[command])
    if getattr(args, "config", None):
        data = json.loads(Path(args.config).read_text())
        unknown = set(data) - set(resolved)
        if unknown:
            raise ConfigError(f"unknown config keys for {command}: {sorted(unknown)}")
        resolved.update(data)
    for key in resolved:
        flag_value = getattr(args, key, None)
        if flag_value is not None:
            resolved[key] = flag_value
    for key in ("shots", "latents"):
        if key in resolved:
            resolved[key] = _int_list(resolved[key])
    for key in ("sources",):
        if resolved.get(key):
            resolved[key] = [str(p) for p in resolved[key]]
    for key in ("checkpoint", "target"):
        if resolved.get(key) is not None:
            resolved[key] = str(resolved[key])
    missing = [k for k in _REQUIRED[command] if resolved[k] in (None, [])]
    if missing:
        flags = ", ".join("--" + k.rstrip("s") if k == "sources" else "--" + k for k in missing)
        raise _UsageError(f"missing required option(s): {flags}")
    return resolved


def _config_hash(command: str, resolved: dict) -> str:
    blob = json.dumps({"command": command, **resolved}, sort_keys=True)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:10]


def _write_json(path: Path, payload: dict) -> None:
    path.write_text(json.dumps(payload, indent=2) + "\n")


def _load_man(path_like) -> DatasetManifest:
    p = Path(path_like)
    return load_manifest(p / "manifest.json" if p.is_dir() else p)


def _check_latent(latent: int) -> int:
    if latent not in LATENT_CHOICES:
        raise ConfigError(f"latent width {latent} not in {LATENT_CHOICES}")
    return latent


def _arch_for(man: DatasetManifest, latent: int, seed: int) -> ArchConfig:
    return ArchConfig(
        input_channels=man.channels,
        input_size=man.size,
        latent_maps=latent,
        encoder_channels=(16, 32, 64, latent, latent),
        seed=seed,
    )


def _train_cfg(resolved: dict, n_train: int) -> TrainConfig:
    residual_cfg, loss_cfg = variant_configs(resolved["variant"], resolved["gamma"])
    batch = resolved["batch_size"] or default_batch_size(n_train)
    return TrainConfig(
        batch_size=batch,
        patience_epochs=resolved["patience"],
        max_epochs=resolved["max_epochs"],
        gamma=loss_cfg.gamma,
        seed=resolved["seed"],
        loss=loss_cfg,
        residual=residual_cfg,
    )


# ----------------------------------------------------------------- commands


def _run_gen_data(resolved: dict, run_dir: Path) -> None:
    spec = SynthSpec(
        manipulation=resolved["spec"],
        n_per_class=int(resolved["n"]),
        size=int(resolved["size"]),
        seed=int(resolved["seed"]),
        strength=float(resolved["strength"]),
    )
    generate(spec, run_dir)


def _train_one(man: DatasetManifest, resolved: dict, latent: int, run_dir: Path, *, log_name=None):
    cfg = _train_cfg(resolved, len(man.entries_for("train")))
    params = init_model(_arch_for(man, latent, resolved["seed"]))
    log = run_dir / log_name if log_name else None
    report = train_source(params, man, cfg, log_path=log)
    return params, cfg, report


def _save_trained(params, cfg, resolved, man, report, path: Path) -> None:
    save_checkpoint(
        params,
        cfg,
        path,
        provenance={
            "kind": "source",
            "variant": resolved["variant"],
            "seed": cfg.seed,
            "domains": sorted({e.domain for e in man.entries_for("train")}),
            "epochs": len(report.val_loss) - 1,
            "best_epoch": report.best_epoch,
            "best_val_loss": round(report.val_loss[report.best_epoch], 6),
        },
    )


def _run_train(resolved: dict, run_dir: Path) -> None:
    manifests = [_load_man(p) for p in resolved["sources"]]
    man = manifests[0] if len(manifests) == 1 else merge_sources(manifests)
    latent = _check_latent(int(resolved["latent"]))
    params, cfg, report = _train_one(man, resolved, latent, run_dir, log_name="train.csv")
    _save_trained(params, cfg, resolved, man, report, run_dir / "model.ckpt")
    _write_json(run_dir / "eval_source.json", evaluate(params, man, "test", cfg.residual).to_dict())
    _write_json(run_dir / "report.json", report.to_dict())


def _curve_csv(path: Path, curve, base_seed: int) -> None:
    lines = ["shots,run,seed,accuracy"]
    for shot, _mean, _std in curve.points:
        for run, acc in enumerate(curve.per_run[shot]):
            lines.append(f"{shot},{run},{base_seed + run},{float(acc)!r}")
    path.write_text("\n".join(lines) + "\n")


def _run_finetune(resolved: dict, run_dir: Path) -> None:
    target = _load_man(resolved["target"])
    ckpt = resolved["checkpoint"]
    _params, arch = load_checkpoint(ckpt)
    if arch.input_size != target.size or arch.input_channels != target.channels:
        raise ConfigError(
            f"checkpoint expects {arch.input_size}x{arch.input_size}/{arch.input_channels}ch "
            f"input, target manifest is {target.size}x{target.size}/{target.channels}ch"
        )
    shots, runs, seed = resolved["shots"], int(resolved["runs"]), int(resolved["seed"])
    cfg = _train_cfg({**resolved, "batch_size": resolved["batch_size"] or 64}, 0)
    curve = shot_sweep(ckpt, target, shots, cfg, runs=runs, base_seed=seed)
    _write_json(run_dir / "curve.json", curve.to_dict())
    _curve_csv(run_dir / "curve.csv", curve, seed)
    if len(shots) == 1 and runs == 1:
        params, _ = load_checkpoint(ckpt)
        finetune(
            params,
            target,
            FewShotSpec(shots=shots[0], seed=seed),
            cfg,
            log_path=run_dir / "finetune.csv",
            checkpoint_path=run_dir / "model.ckpt",
        )
        report = evaluate(params, target, "test", cfg.residual)
        _write_json(run_dir / "eval_target.json", report.to_dict())


def _run_eval(resolved: dict, run_dir: Path) -> None:
    params, _arch = load_checkpoint(resolved["checkpoint"])
    man = _load_man(resolved["target"])
    variant = resolved["variant"]
    if variant is None:
        meta = read_checkpoint_meta(resolved["checkpoint"])
        variant = meta.get("provenance", {}).get("variant", "full")
    residual_cfg, _ = variant_configs(variant)
    split = resolved["split"]
    _write_json(run_dir / "eval.json", evaluate(params, man, split, residual_cfg).to_dict())
    export_scatter(params, man, split, residual_cfg, run_dir / "scatter.csv")


def _run_ablate(resolved: dict, run_dir: Path) -> None:
    manifests = [_load_man(p) for p in resolved["sources"]]
    source = manifests[0] if len(manifests) == 1 else merge_sources(manifests)
    target = _load_man(resolved["target"])
    shots, runs, seed = resolved["shots"], int(resolved["runs"]), int(resolved["seed"])

    # variant matrix at the default embedding width
    rows = ["variant,shots,run,seed,accuracy"]
    curves = {}
    for variant in VARIANTS:
        sub = {**resolved, "variant": variant}
        params, cfg, report = _train_one(source, sub, 128, run_dir)
        ckpt = run_dir / f"{variant}.ckpt"
        _save_trained(params, cfg, sub, source, report, ckpt)
        sweep_cfg = _train_cfg({**sub, "batch_size": sub["batch_size"] or 64}, 0)
        curve = shot_sweep(ckpt, target, shots, sweep_cfg, runs=runs, base_seed=seed)
        curves[variant] = curve.to_dict()
        for shot, _mean, _std in curve.points:
            for run, acc in enumerate(curve.per_run[shot]):
                rows.append(f"{variant},{shot},{run},{seed + run},{float(acc)!r}")
    (run_dir / "ablation.csv").write_text("\n".join(rows) + "\n")
    _write_json(run_dir / "ablation.json", curves)

    # embedding-width sweep, full variant, zero-shot transfer
    lat_rows = ["latent,source_accuracy,target_zero_shot_accuracy"]
    lat_json = {}
    for latent in resolved["latents"]:
        _check_latent(latent)
        params, cfg, _report = _train_one(source, {**resolved, "variant": "full"}, latent, run_dir)
        src_acc = evaluate(params, source, "test", cfg.residual).accuracy
        tgt_acc = evaluate(params, target, "test", cfg.residual).accuracy
        lat_rows.append(f"{latent},{src_acc!r},{tgt_acc!r}")
        lat_json[str(latent)] = {"source_accuracy": src_acc, "target_zero_shot_accuracy": tgt_acc}
    (run_dir / "latent.csv").write_text("\n".join(lat_rows) + "\n")
    _write_json(run_dir / "latent.json", lat_json)


_RUNNERS = {
    "gen-data": _run_gen_data,
    "train": _run_train,
    "finetune": _run_finetune,
    "eval": _run_eval,
    "ablate": _run_ablate,
}


# ----------------------------------------------------------------- parser / main


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="splitlatent",
        description="Split-latent residual autoencoder: corpora, training, transfer, ablations.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", type=str, help="JSON config file; flags override its values")
        p.add_argument("--out", type=str, default="runs", help="workspace for run directories")
        p.add_argument("--force", action="store_true", help="re-run even if the run dir exists")

    g = sub.add_parser("gen-data", help="write a synthetic paired corpus")
    g.add_argument("--spec", type=str, help="manipulation family")
    g.add_argument("--n", type=int, help="images per class")
    g.add_argument("--size", type=int, help="image side in pixels (default 64)")
    g.add_argument("--strength", type=float, help="manipulation strength in (0,1]")
    g.add_argument("--seed", type=int)
    common(g)

    t = sub.add_parser("train", help="train a source-domain detector")
    t.add_argument("--source", dest="sources", action="append", type=str,
                   help="corpus dir or manifest path (repeatable)")
    t.add_argument("--seed", type=int)
    t.add_argument("--variant", choices=VARIANTS)
    t.add_argument("--latent", type=int, choices=LATENT_CHOICES)
    t.add_argument("--max-epochs", dest="max_epochs", type=int)
    t.add_argument("--patience", type=int)
    t.add_argument("--batch-size", dest="batch_size", type=int)
    common(t)

    f = sub.add_parser("finetune", help="few-shot transfer to a target corpus")
    f.add_argument("--checkpoint", type=str, help="source model checkpoint")
    f.add_argument("--target", type=str, help="target corpus dir or manifest")
    f.add_argument("--shots", type=str, help="comma-separated shot counts, e.g. 0,2,10")
    f.add_argument("--runs", type=int)
    f.add_argument("--seed", type=int)
    f.add_argument("--variant", choices=VARIANTS)
    f.add_argument("--max-epochs", dest="max_epochs", type=int)
    f.add_argument("--patience", type=int)
    f.add_argument("--batch-size", dest="batch_size", type=int)
    common(f)

    e = sub.add_parser("eval", help="evaluate a checkpoint on a corpus split")
    e.add_argument("--checkpoint", type=str)
    e.add_argument("--target", type=str)
    e.add_argument("--split", choices=("train", "val", "test"))
    e.add_argument("--variant", choices=VARIANTS,
                   help="default: the variant recorded in the checkpoint")
    common(e)

    a = sub.add_parser("ablate", help="variant matrix plus embedding-width sweep")
    a.add_argument("--source", dest="sources", action="append", type=str)
    a.add_argument("--target", type=str)
    a.add_argument("--shots", type=str)
    a.add_argument("--runs", type=int)
    a.add_argument("--seed", type=int)
    a.add_argument("--latent", dest="latents", type=str,
                   help="comma-separated widths for the sweep (default all)")
    a.add_argument("--max-epochs", dest="max_epochs", type=int)
    a.add_argument("--patience", type=int)
    common(a)
    return parser


def main(argv=None) -> int:
    if "FT_THREADS" in os.environ:
        os.environ.update(thread_env(os.environ["FT_THREADS"]))
    args = build_parser().parse_args(argv)
    try:
        resolved = _resolve(args.command, args)
    except _UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except _DOMAIN_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1

    run_dir = Path(args.out) / f"{args.command}-{_config_hash(args.command, resolved)}"
    if (run_dir / "run.json").exists() and not args.force:
        print(f"run exists: {run_dir} (use --force to re-run)")
        print(run_dir)
        return 0
    run_dir.mkdir(parents=True, exist_ok=True)
    try:
        _RUNNERS[args.command](resolved, run_dir)
    except _DOMAIN_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    artifacts = sorted(
        str(p.relative_to(run_dir)) for p in run_dir.rglob("*") if p.is_file() and p.name != "run.json"
    )
    _write_json(
        run_dir / "run.json",
        {
            "command": args.command,
            "hash": _config_hash(args.command, resolved),
            "config": resolved,
            "artifacts": artifacts,
        },
    )
    print(run_dir)
    return 0


if __name__ == "__main__":
    sys.exit(main())
