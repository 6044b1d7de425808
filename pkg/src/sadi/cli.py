"""Batch entry points: ``sadi {synth,train,impute,evaluate,ablate}``.

Settings come from a TOML file (``--config``); command-line flags override the
file, and the file overrides built-in defaults. ``--seed`` sets the run seed,
the training seed and the synthetic-data seed together. Logs go to stderr;
every command writes its outputs and a ``manifest.json`` into ``--out``.
"""
import argparse
import json
import logging
import sys
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np

from . import __version__
from .config import ABLATIONS, RunConfig, load_config
from .data import (NormStats, denormalize, load_csv, normalize, split_rows, synth_generate,
                   to_windows, write_csv)
from .denoiser import Denoiser
from .errors import DataError, SadiError
from .masking import TimeSeriesBatch
from .metrics import evaluate
from .nn import read_manifest
from .sampler import impute
from .trainer import fit

log = logging.getLogger("sadi")


class UsageError(SadiError):
    exit_code = 1


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _write_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def resolve_config(args):
    cfg = load_config(args.config) if args.config else RunConfig()
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed, train=replace(cfg.train, seed=args.seed),
                      data=replace(cfg.data, synth=replace(cfg.data.synth, seed=args.seed)))
    if args.workers is not None:
        cfg = replace(cfg, workers=args.workers)
    return cfg


def write_manifest(out, command, cfg, outputs, checkpoint=None, extra=None):
    man = {
        "command": command,
        "version": __version__,
        "config": cfg.to_dict(),
        "config_hash": cfg.hash(),
        "outputs": sorted(outputs),
    }
    if checkpoint:
        ck = read_manifest(checkpoint)
        man["checkpoint"] = {"path": str(checkpoint), "sha256": ck["sha256"]}
    man.update(extra or {})
    _write_json(Path(out) / "manifest.json", man)


def load_dataset(cfg, input_path=None):
    path = input_path or cfg.data.path
    if path:
        return load_csv(path)
    synth = replace(cfg.data.synth, K=cfg.model.K, L=cfg.model.L)
    return synth_generate(synth)


def prepared_splits(cfg, input_path=None, stats=None):
    """Normalized train / val / test windows; stats come from the train rows unless given."""
    ds = load_dataset(cfg, input_path)
    if ds.values.shape[1] != cfg.model.K:
        raise DataError(f"data has {ds.values.shape[1]} features, model expects K={cfg.model.K}")
    tr, va, te = split_rows(ds, cfg.model.L, cfg.data.val_fraction, cfg.data.test_fraction)
    tr, stats = normalize(tr, stats)
    va, _ = normalize(va, stats)
    te, _ = normalize(te, stats)
    L = cfg.model.L
    windows = [to_windows(d, L) if d.n_rows >= L else None for d in (tr, va, te)]
    return windows, stats


def _eval_pattern(cfg):
    e = cfg.eval
    return e.n_features, e.block_len, e.n_blocks


def train_model(cfg, out, input_path=None, warm_start=None, model_cfg=None):
    model_cfg = model_cfg or cfg.model
    (tr, va, _), stats = prepared_splits(cfg, input_path)
    if warm_start:
        model, _ = Denoiser.load(warm_start, ablation=model_cfg.ablation)
        if model.cfg != model_cfg:
            log.warning("warm-start checkpoint model config differs from the run config; using the checkpoint's")
    else:
        model = Denoiser(model_cfg, seed=cfg.train.seed)
    ck = Path(out) / "checkpoint"
    meta = {"train": asdict(cfg.train), "norm": stats.to_dict(), "config_hash": cfg.hash()}
    result = fit(model, tr, cfg.train, val=va, warm_start=bool(warm_start),
                 eval_pattern=_eval_pattern(cfg), checkpoint=str(ck), checkpoint_meta=meta)
    if va is None or len(va) == 0 or not ck.exists():
        model.save(ck, meta)
    result.write_history(Path(out) / "history.csv")
    log.info("best validation MSE %s at epoch %d", result.best_val, result.best_epoch)
    return model, ck, result


def run_evaluation(cfg, model, test, extra_meta=None):
    e = cfg.eval
    meta = {"config_hash": cfg.hash(), "model": asdict(model.cfg), "schedule": model.sched.to_dict()}
    meta.update(extra_meta or {})
    return evaluate(model, test, e.n_features, e.block_len, e.n_blocks, e.n_trials, e.samples,
                    base_seed=cfg.seed, windows=e.windows, point=e.point, workers=cfg.workers,
                    max_batch=e.max_batch, meta=meta)


# ------------------------------------------------------------------ commands

def cmd_synth(args, cfg, out):
    synth = replace(cfg.data.synth, K=cfg.model.K, L=cfg.model.L)
    ds = synth_generate(synth)
    write_csv(out / "data.csv", ds.values, ds.observed, ds.names)
    write_manifest(out, "synth", cfg, ["data.csv"])


def cmd_train(args, cfg, out):
    train_model(cfg, out, args.input, warm_start=args.checkpoint)
    write_manifest(out, "train", cfg, ["checkpoint", "history.csv"], checkpoint=out / "checkpoint")


def _need_checkpoint(args):
    if not args.checkpoint:
        raise UsageError("--checkpoint is required for this command")
    return args.checkpoint


def cmd_impute(args, cfg, out):
    ck = _need_checkpoint(args)
    if not args.input:
        raise UsageError("--input is required for impute")
    model, manifest = Denoiser.load(ck)
    norm = manifest["meta"].get("norm")
    if norm is None:
        raise DataError(f"checkpoint {ck} carries no normalization statistics")
    stats = NormStats.from_dict(norm)
    raw = load_csv(args.input)
    L, K = model.cfg.L, model.cfg.K
    if raw.values.shape[1] != K:
        raise DataError(f"input has {raw.values.shape[1]} features, model expects K={K}")
    z, _ = normalize(raw, stats)
    n = raw.n_rows
    n_win = -(-n // L)
    pad = n_win * L - n
    vals = np.vstack([z.values, np.zeros((pad, K))]).reshape(n_win, L, K)
    obs = np.vstack([z.observed, np.zeros((pad, K))]).reshape(n_win, L, K)
    res = impute(model, vals, obs, S=cfg.eval.samples, seed=cfg.seed, point=cfg.eval.point,
                 max_batch=cfg.eval.max_batch)
    point = denormalize(res.point.reshape(-1, K)[:n], stats)
    spread = res.spread.reshape(-1, K)[:n] * stats.std
    point = np.where(raw.observed > 0, raw.values, point)   # observed cells verbatim
    full = np.ones_like(point)
    write_csv(out / "imputed.csv", point, full, raw.names)
    write_csv(out / "spread.csv", spread, full, raw.names)
    write_manifest(out, "impute", cfg, ["imputed.csv", "spread.csv"], checkpoint=ck,
                   extra={"input": str(args.input)})


def cmd_evaluate(args, cfg, out):
    ck = _need_checkpoint(args)
    model, manifest = Denoiser.load(ck)
    norm = manifest["meta"].get("norm")
    stats = NormStats.from_dict(norm) if norm else None
    cfg = replace(cfg, model=model.cfg)
    (_, _, test), _ = prepared_splits(cfg, args.input, stats)
    if test is None:
        raise DataError("no test windows in the data")
    report = run_evaluation(cfg, model, test, {"checkpoint_sha256": manifest["sha256"]})
    report.write(out / "report.json", out / "trials.csv")
    write_manifest(out, "evaluate", cfg, ["report.json", "trials.csv"], checkpoint=ck)
    ci = "n/a" if report.mse_ci is None else f"{report.mse_ci:.4f}"
    log.info("MSE %.4f +- %s, CRPS %.4f", report.mse_mean, ci, report.crps_mean)


def cmd_ablate(args, cfg, out):
    outputs = []
    for variant in ABLATIONS:
        sub = out / variant
        sub.mkdir(parents=True, exist_ok=True)
        mcfg = replace(cfg.model, ablation=variant)
        vcfg = replace(cfg, model=mcfg)
        log.info("ablation %s", variant)
        model, ck, _ = train_model(vcfg, sub, args.input, model_cfg=mcfg)
        (_, _, test), _ = prepared_splits(vcfg, args.input)
        report = run_evaluation(vcfg, model, test, {"variant": variant,
                                                    "checkpoint_sha256": read_manifest(ck)["sha256"]})
        report.write(out / f"report_{variant}.json", out / f"trials_{variant}.csv")
        outputs += [f"report_{variant}.json", f"trials_{variant}.csv", f"{variant}/checkpoint",
                    f"{variant}/history.csv"]
    write_manifest(out, "ablate", cfg, outputs)


COMMANDS = {"synth": cmd_synth, "train": cmd_train, "impute": cmd_impute,
            "evaluate": cmd_evaluate, "ablate": cmd_ablate}


def build_parser():
    p = _Parser(prog="sadi", description="Diffusion-based time-series imputation.")
    p.add_argument("--version", action="version", version=f"sadi {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name in COMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--config", help="TOML run configuration")
        s.add_argument("--seed", type=int, help="override seed, train.seed and data.synth.seed")
        s.add_argument("--out", required=True, help="output directory")
        s.add_argument("--checkpoint", help="checkpoint directory (warm start for train)")
        s.add_argument("--workers", type=int, help="parallel evaluation trials")
        s.add_argument("--input", help="CSV input (overrides data.path)")
        s.add_argument("--log-level", default="INFO")
    return p


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=getattr(logging, str(args.log_level).upper(), logging.INFO),
                            stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s")
        cfg = resolve_config(args)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        COMMANDS[args.command](args, cfg, out)
    except SadiError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return DataError.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
