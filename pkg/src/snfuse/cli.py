"""Operator surface: prepare, train, eval, ablate, gradcheck, report.

Exit codes: 0 success, 1 runtime/numeric failure, 2 input/format failure.
Outputs are byte-deterministic for a fixed seed; wall-clock timestamps go
only into the run_meta.json sidecar.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .config import RunConfig, config_hash, config_text, load_config, with_overrides
from .data import (
    load_news_day,
    manifest_hash,
    prepare_dataset,
    verify_manifest,
    write_manifest,
)
from .errors import DataFormatError
from .model import ForecastModel
from .training import (
    ablation_csv,
    ablation_grid,
    apply_checkpoint,
    evaluate,
    history_csv,
    load_checkpoint,
    multi_seed,
    save_checkpoint,
    toy_gradient_check,
    train,
)


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="key=value config file")
    p.add_argument("--data", type=Path, help="data directory")
    p.add_argument("--out", type=Path, required=True, help="output directory")
    p.add_argument("--pooling", choices=["none", "ap", "cap", "sap", "pasap"])
    p.add_argument("--snp", choices=["on", "off"])
    p.add_argument("--horizon", type=int, choices=[1, 5])
    p.add_argument("--no-gcn", action="store_true", default=None)
    p.add_argument("--no-p2n", action="store_true", default=None)
    p.add_argument("--no-n2p", action="store_true", default=None)
    p.add_argument("--seed", type=int)
    p.add_argument("--seeds", type=str, help="comma-separated seeds for multi-seed runs")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="snfuse", description=__doc__)
    parser.add_argument("--version", action="version", version=f"snfuse {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in [
        ("prepare", "validate, scale, window, and split a data directory"),
        ("train", "train a model against a prepared manifest"),
        ("eval", "evaluate a checkpoint on the test split"),
        ("ablate", "run the 8-row fusion-component ablation grid"),
        ("gradcheck", "finite-difference check of the full gradient path"),
        ("report", "emit per-stock predicted-vs-actual CSVs (and plots when available)"),
    ]:
        p = sub.add_parser(name, help=help_text)
        _add_common(p)
        if name in ("train", "eval", "ablate", "report"):
            p.add_argument("--manifest", type=Path, help="manifest written by prepare")
        if name in ("eval", "report"):
            p.add_argument("--checkpoint", type=Path, required=True)
    return parser


def _effective_config(args: argparse.Namespace) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    overrides = {}
    if args.pooling is not None:
        overrides["pooling"] = args.pooling
    if args.snp is not None:
        overrides["snp"] = args.snp == "on"
    if args.horizon is not None:
        overrides["horizon"] = args.horizon
    for flag in ("no_gcn", "no_p2n", "no_n2p"):
        if getattr(args, flag) is not None:
            overrides[flag] = True
    if args.seed is not None:
        overrides["seed"] = args.seed
    return with_overrides(cfg, **overrides)


def _echo(out_dir: Path, cfg: RunConfig) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "effective.cfg").write_text(config_text(cfg), encoding="utf-8")


def _sidecar(out_dir: Path, command: str, started: float) -> None:
    meta = {"command": command, "started": started, "finished": time.time()}
    (out_dir / "run_meta.json").write_text(json.dumps(meta, indent=2) + "\n", encoding="utf-8")


def _require_data(args: argparse.Namespace) -> Path:
    if args.data is None:
        raise DataFormatError("--data is required for this command")
    return args.data


def _manifest_path(args: argparse.Namespace) -> Path:
    if getattr(args, "manifest", None) is None:
        raise DataFormatError("--manifest is required for this command")
    return args.manifest


def _load_vocab(cfg: RunConfig):
    if not cfg.vocab_file:
        return None
    batch = load_news_day(cfg.vocab_file)
    return batch.embeddings


def _build_dataset(args: argparse.Namespace, cfg: RunConfig, manifest: Path | None):
    ds = prepare_dataset(_require_data(args), cfg.t_window, cfg.horizon, expect_dim=cfg.dim)
    if manifest is not None:
        verify_manifest(ds, manifest)
    return ds


def cmd_prepare(args: argparse.Namespace, cfg: RunConfig) -> int:
    ds = _build_dataset(args, cfg, manifest=None)
    out: Path = args.out
    out.mkdir(parents=True, exist_ok=True)
    write_manifest(ds, out / "dataset.manifest")
    sizes = ds.splits.sizes()
    print(f"prepared {len(ds.dates)} trading days: train/val/test = {sizes[0]}/{sizes[1]}/{sizes[2]}")
    print(f"samples: train={len(ds.samples['train'])} val={len(ds.samples['val'])} test={len(ds.samples['test'])}")
    print(f"skipped windows at split boundaries: {ds.skipped_windows}")
    print(f"manifest: {out / 'dataset.manifest'}")
    return 0


def _parse_seeds(text: str) -> list[int]:
    try:
        return [int(part) for part in text.split(",") if part.strip() != ""]
    except ValueError as exc:
        raise DataFormatError(f"bad --seeds value '{text}'") from exc


def cmd_train(args: argparse.Namespace, cfg: RunConfig) -> int:
    manifest = _manifest_path(args)
    ds = _build_dataset(args, cfg, manifest)
    digest = manifest_hash(manifest)
    out: Path = args.out
    out.mkdir(parents=True, exist_ok=True)

    if args.seeds:
        seeds = _parse_seeds(args.seeds)
        summary = multi_seed(ds, cfg, seeds)
        (out / "multiseed.csv").write_text(summary.to_csv(), encoding="utf-8")
        for seed, report in zip(seeds, summary.reports):
            seed_dir = out / f"seed_{seed}"
            seed_dir.mkdir(exist_ok=True)
            (seed_dir / "eval.csv").write_text(report.to_csv(), encoding="utf-8")
        print(f"multi-seed summary over seeds {seeds}: {out / 'multiseed.csv'}")
        return 0

    model = ForecastModel(cfg, ds.dim, vocab=_load_vocab(cfg))
    result = train(model, ds, cfg)
    save_checkpoint(out / "checkpoint.snf", model, digest)
    (out / "history.csv").write_text(history_csv(result), encoding="utf-8")
    print(f"trained {len(result.history)} epochs; best val MSE {result.best_val_mse:.6f} at epoch {result.best_epoch}")
    print(f"checkpoint: {out / 'checkpoint.snf'}")
    return 0


def _checked_model(args: argparse.Namespace, cfg: RunConfig, ds) -> ForecastModel:
    manifest = _manifest_path(args)
    ckpt = load_checkpoint(args.checkpoint)
    if ckpt.cfg_hash != config_hash(cfg):
        raise DataFormatError("checkpoint was trained with a different configuration; refusing to evaluate")
    if ckpt.manifest_hash != manifest_hash(manifest):
        raise DataFormatError("checkpoint was trained against a different dataset manifest; refusing to evaluate")
    model = ForecastModel(cfg, ds.dim, vocab=_load_vocab(cfg))
    apply_checkpoint(model, ckpt)
    return model


def cmd_eval(args: argparse.Namespace, cfg: RunConfig) -> int:
    ds = _build_dataset(args, cfg, _manifest_path(args))
    model = _checked_model(args, cfg, ds)
    report = evaluate(model, ds)
    out: Path = args.out
    out.mkdir(parents=True, exist_ok=True)
    (out / "eval.csv").write_text(report.to_csv(), encoding="utf-8")
    for stock, mae, mse in report.rows:
        print(f"{stock}: MAE {mae:.6f}  MSE {mse:.6f}")
    print(f"average: MAE {report.avg_mae:.6f}  MSE {report.avg_mse:.6f}")
    return 0


def cmd_ablate(args: argparse.Namespace, cfg: RunConfig) -> int:
    ds = _build_dataset(args, cfg, _manifest_path(args))
    rows = ablation_grid(ds, cfg)
    out: Path = args.out
    out.mkdir(parents=True, exist_ok=True)
    (out / "ablation.csv").write_text(ablation_csv(rows), encoding="utf-8")
    for row in rows:
        print(f"{row.label}: MAE {row.report.avg_mae:.6f}  MSE {row.report.avg_mse:.6f}")
    print(f"ablation table: {out / 'ablation.csv'}")
    return 0


def cmd_gradcheck(args: argparse.Namespace, cfg: RunConfig) -> int:
    report = toy_gradient_check(cfg)
    out: Path = args.out
    out.mkdir(parents=True, exist_ok=True)
    lines = [f"{pid} {err:.3e}" for pid, err in sorted(report.per_param.items())]
    status = "PASS" if report.passed else "FAIL"
    lines.append(f"worst {report.worst_param} {report.worst_error:.3e} tol {report.tol:.1e} {status}")
    (out / "gradcheck.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
    print(f"gradcheck {status}: worst relative error {report.worst_error:.3e} ({report.worst_param})")
    return 0 if report.passed else 1


def cmd_report(args: argparse.Namespace, cfg: RunConfig) -> int:
    ds = _build_dataset(args, cfg, _manifest_path(args))
    model = _checked_model(args, cfg, ds)
    out: Path = args.out
    out.mkdir(parents=True, exist_ok=True)
    for stock in sorted(ds.stocks):
        samples = [s for s in ds.samples["test"] if s.stock_id == stock]
        lines = ["window_end_date,target_date,step,actual,predicted"]
        series = []
        for s in samples:
            prices, news, emb, target = ds.sample_arrays(s)
            pred = model.predict_sample(prices, news, emb).data.reshape(-1)
            end_date = ds.dates[s.start + s.t_window - 1]
            for step, day in enumerate(s.target_days):
                lines.append(
                    f"{end_date},{ds.dates[day]},{step + 1},{float(target[step])!r},{float(pred[step])!r}"
                )
            series.append((ds.dates[s.target_days.start], float(target[0]), float(pred[0])))
        (out / f"{stock}_predictions.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
        _maybe_plot(out / f"{stock}_predictions.svg", stock, series)
    print(f"wrote per-stock prediction reports to {out}")
    return 0


def _maybe_plot(path: Path, stock: str, series: list[tuple[str, float, float]]) -> None:
    """Best-effort static plot; silently skipped when matplotlib is absent."""
    try:
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except Exception:
        return
    dates = np.arange(len(series))
    actual = [row[1] for row in series]
    predicted = [row[2] for row in series]
    fig, ax = plt.subplots(figsize=(8, 4))
    ax.plot(dates, actual, label="actual")
    ax.plot(dates, predicted, label="predicted")
    ax.set_title(f"{stock}: next-day normalized close, test split")
    ax.set_xlabel("test sample")
    ax.set_ylabel("normalized close")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, metadata={"Date": None})
    plt.close(fig)


_COMMANDS = {
    "prepare": cmd_prepare,
    "train": cmd_train,
    "eval": cmd_eval,
    "ablate": cmd_ablate,
    "gradcheck": cmd_gradcheck,
    "report": cmd_report,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    started = time.time()
    try:
        cfg = _effective_config(args)
        _echo(args.out, cfg)
        code = _COMMANDS[args.command](args, cfg)
        _sidecar(args.out, args.command, started)
        return code
    except (DataFormatError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # runtime/numeric failures
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
