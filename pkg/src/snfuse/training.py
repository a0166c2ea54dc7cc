"""Training loop with patience-based early stopping, evaluation, checkpoints,
the 8-row ablation grid, and multi-seed summaries."""

from __future__ import annotations

import struct
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .config import RunConfig, config_hash
from .data import PreparedDataset, WindowSample
from .errors import DataFormatError, NumericError
from .model import ForecastModel
from .optim import ParamSet, adam_step, backward, init_adam
from .rng import substream
from .tensor import Tensor, mean_all, mul, sub

CHECKPOINT_MAGIC = b"SNFUSE01"

# Ablation rows in presentation order: label -> (no_p2n, no_n2p, no_gcn)
ABLATION_ROWS: list[tuple[str, tuple[bool, bool, bool]]] = [
    ("+SAP", (False, False, False)),
    ("- GCN", (False, False, True)),
    ("- P2N", (True, False, False)),
    ("- N2P", (False, True, False)),
    ("- P2N - N2P", (True, True, False)),
    ("- N2P - GCN", (False, True, True)),
    ("- P2N - GCN", (True, False, True)),
    ("- P2N - N2P - GCN", (True, True, True)),
]


def mse_loss(pred: Tensor, target: np.ndarray) -> Tensor:
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ValueError(f"prediction shape {pred.shape} != target shape {target.shape}")
    diff = sub(pred, Tensor(target))
    return mean_all(mul(diff, diff))


def metrics(pred: np.ndarray, target: np.ndarray) -> tuple[float, float]:
    """(MAE, MSE) over normalized values; no inverse transform."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.size == 0:
        raise ValueError("cannot compute metrics on empty arrays")
    if pred.shape != target.shape:
        raise ValueError(f"prediction shape {pred.shape} != target shape {target.shape}")
    diff = pred - target
    return float(np.abs(diff).mean()), float((diff * diff).mean())


class EarlyStopper:
    """Keep the best validation loss; stop after `patience` epochs without improvement."""

    def __init__(self, patience: int):
        self.patience = patience
        self.best = np.inf
        self.best_epoch = 0
        self.bad_epochs = 0

    def update(self, epoch: int, val_loss: float) -> bool:
        """Record one epoch; returns True when training should stop."""
        if val_loss < self.best:
            self.best = val_loss
            self.best_epoch = epoch
            self.bad_epochs = 0
        else:
            self.bad_epochs += 1
        return self.bad_epochs >= self.patience


@dataclass
class EpochRecord:
    epoch: int
    train_mse: float
    val_mse: float
    improved: bool


@dataclass
class TrainResult:
    history: list[EpochRecord]
    best_epoch: int
    best_val_mse: float
    steps_per_epoch: int


def _resolve(ds: PreparedDataset, samples: list[WindowSample]):
    return [ds.sample_arrays(s) for s in samples]


def _dataset_mse(model: ForecastModel, resolved) -> float:
    errs = []
    for prices, news, emb, target in resolved:
        pred = model.predict_sample(prices, news, emb).data.reshape(-1)
        errs.append((pred - np.asarray(target).reshape(-1)) ** 2)
    return float(np.concatenate(errs).mean())


def _first_nonfinite(model: ForecastModel, grads: dict[str, np.ndarray] | None) -> str:
    for pid in model.params.ids():
        if not np.all(np.isfinite(model.params[pid].data)):
            return pid
    if grads:
        for pid in sorted(grads):
            if not np.all(np.isfinite(grads[pid])):
                return pid
    return "<loss only>"


def train(model: ForecastModel, ds: PreparedDataset, cfg: RunConfig) -> TrainResult:
    train_samples = ds.samples["train"]
    val_samples = ds.samples["val"]
    if not train_samples or not val_samples:
        raise ValueError(
            f"need non-empty train and val splits, got {len(train_samples)} train / {len(val_samples)} val samples"
        )
    train_resolved = _resolve(ds, train_samples)
    val_resolved = _resolve(ds, val_samples)
    steps_per_epoch = -(-len(train_resolved) // cfg.batch_size)

    state = init_adam(model.params, cfg.lr)
    stopper = EarlyStopper(cfg.patience)
    best_snapshot = model.params.snapshot()
    history: list[EpochRecord] = []

    for epoch in range(1, cfg.max_epochs + 1):
        order = substream(cfg.seed, f"shuffle/{epoch}").permutation(len(train_resolved))
        for lo in range(0, len(order), cfg.batch_size):
            batch = [train_resolved[i] for i in order[lo : lo + cfg.batch_size]]
            loss = model.batch_loss(batch)
            if not np.isfinite(loss.data):
                raise NumericError(
                    f"non-finite loss at epoch {epoch}; first non-finite tensor: {_first_nonfinite(model, None)}"
                )
            grads = backward(loss, model.params)
            adam_step(model.params, grads, state)

        train_mse = _dataset_mse(model, train_resolved)
        val_mse = _dataset_mse(model, val_resolved)
        improved = val_mse < stopper.best
        stop = stopper.update(epoch, val_mse)
        if improved:
            best_snapshot = model.params.snapshot()
        history.append(EpochRecord(epoch=epoch, train_mse=train_mse, val_mse=val_mse, improved=improved))
        if stop:
            break

    model.params.restore(best_snapshot)
    return TrainResult(
        history=history,
        best_epoch=stopper.best_epoch,
        best_val_mse=stopper.best,
        steps_per_epoch=steps_per_epoch,
    )


@dataclass
class EvalReport:
    rows: list[tuple[str, float, float]]  # (stock, MAE, MSE), sorted by stock
    avg_mae: float
    avg_mse: float
    seed: int
    cfg_hash: str

    def to_csv(self) -> str:
        lines = ["stock,mae,mse"]
        for stock, mae, mse in self.rows:
            lines.append(f"{stock},{mae!r},{mse!r}")
        lines.append(f"average,{self.avg_mae!r},{self.avg_mse!r}")
        return "\n".join(lines) + "\n"


def evaluate(model: ForecastModel, ds: PreparedDataset, split: str = "test") -> EvalReport:
    samples = ds.samples[split]
    if not samples:
        raise ValueError(f"no samples in split '{split}'")
    by_stock: dict[str, list[WindowSample]] = {}
    for s in samples:
        if s.stock_id not in ds.stocks:
            raise ValueError(f"sample references unknown stock '{s.stock_id}'")
        by_stock.setdefault(s.stock_id, []).append(s)
    rows = []
    for stock in sorted(by_stock):
        preds, targets = [], []
        for s in by_stock[stock]:
            prices, news, emb, target = ds.sample_arrays(s)
            preds.append(model.predict_sample(prices, news, emb).data.reshape(-1))
            targets.append(np.asarray(target).reshape(-1))
        mae, mse = metrics(np.concatenate(preds), np.concatenate(targets))
        rows.append((stock, mae, mse))
    avg_mae = float(np.mean([r[1] for r in rows]))
    avg_mse = float(np.mean([r[2] for r in rows]))
    return EvalReport(rows=rows, avg_mae=avg_mae, avg_mse=avg_mse, seed=model.cfg.seed, cfg_hash=config_hash(model.cfg))


# -- checkpoints -------------------------------------------------------


def save_checkpoint(path: str | Path, model: ForecastModel, manifest_digest: str) -> None:
    """Versioned binary: magic, config hash, manifest hash, named float64 tensors."""
    out = bytearray(CHECKPOINT_MAGIC)
    for text in (config_hash(model.cfg), manifest_digest):
        raw = text.encode("utf-8")
        out += struct.pack("<I", len(raw)) + raw
    ids = model.params.ids()
    out += struct.pack("<I", len(ids))
    for pid in ids:
        raw = pid.encode("utf-8")
        arr = np.ascontiguousarray(model.params[pid].data, dtype="<f8")
        out += struct.pack("<I", len(raw)) + raw
        out += struct.pack("<I", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape)
        out += arr.tobytes()
    Path(path).write_bytes(bytes(out))


@dataclass
class Checkpoint:
    cfg_hash: str
    manifest_hash: str
    tensors: dict[str, np.ndarray]


def load_checkpoint(path: str | Path) -> Checkpoint:
    raw = Path(path).read_bytes()
    if raw[:8] != CHECKPOINT_MAGIC:
        raise DataFormatError(f"{path}: bad checkpoint magic {raw[:8]!r}")
    off = 8

    def take(n: int) -> bytes:
        nonlocal off
        if off + n > len(raw):
            raise DataFormatError(f"{path}: truncated checkpoint")
        chunk = raw[off : off + n]
        off += n
        return chunk

    def take_str() -> str:
        (n,) = struct.unpack("<I", take(4))
        return take(n).decode("utf-8")

    cfg_digest = take_str()
    manifest_digest = take_str()
    (count,) = struct.unpack("<I", take(4))
    tensors: dict[str, np.ndarray] = {}
    for _ in range(count):
        pid = take_str()
        (ndim,) = struct.unpack("<I", take(4))
        shape = struct.unpack(f"<{ndim}I", take(4 * ndim))
        size = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(take(8 * size), dtype="<f8").reshape(shape).copy()
        tensors[pid] = arr
    if off != len(raw):
        raise DataFormatError(f"{path}: {len(raw) - off} trailing bytes")
    return Checkpoint(cfg_hash=cfg_digest, manifest_hash=manifest_digest, tensors=tensors)


def apply_checkpoint(model: ForecastModel, ckpt: Checkpoint) -> None:
    want = set(model.params.ids())
    got = set(ckpt.tensors)
    if want != got:
        missing = sorted(want - got)
        extra = sorted(got - want)
        raise DataFormatError(f"checkpoint tensors do not match the model: missing={missing} extra={extra}")
    for pid, arr in ckpt.tensors.items():
        current = model.params[pid]
        if current.data.shape != arr.shape:
            raise DataFormatError(f"checkpoint tensor '{pid}' shape {arr.shape} != {current.data.shape}")
        current.data = arr.copy()


# -- ablations and multi-seed ------------------------------------------


@dataclass
class AblationRow:
    label: str
    cfg: RunConfig
    report: EvalReport
    result: TrainResult


def ablation_grid(ds: PreparedDataset, base_cfg: RunConfig) -> list[AblationRow]:
    """Train and evaluate all 8 fusion-component removals on top of sap pooling."""
    if base_cfg.pooling != "sap":
        raise ValueError(f"ablation grid requires pooling=sap, got '{base_cfg.pooling}'")
    rows = []
    for label, (no_p2n, no_n2p, no_gcn) in ABLATION_ROWS:
        cfg = replace(base_cfg, no_p2n=no_p2n, no_n2p=no_n2p, no_gcn=no_gcn)
        model = ForecastModel(cfg, ds.dim, vocab=None)
        result = train(model, ds, cfg)
        report = evaluate(model, ds)
        rows.append(AblationRow(label=label, cfg=cfg, report=report, result=result))
    return rows


def ablation_csv(rows: list[AblationRow]) -> str:
    lines = ["label,mae,mse"]
    for row in rows:
        lines.append(f"{row.label},{row.report.avg_mae!r},{row.report.avg_mse!r}")
    return "\n".join(lines) + "\n"


@dataclass
class MultiSeedSummary:
    seeds: list[int]
    per_stock: dict[str, dict[str, float]]  # stock -> mae_mean/mae_std/mse_mean/mse_std
    reports: list[EvalReport] = field(default_factory=list)

    def to_csv(self) -> str:
        lines = ["stock,mae_mean,mae_std,mse_mean,mse_std"]
        for stock in sorted(self.per_stock):
            s = self.per_stock[stock]
            lines.append(f"{stock},{s['mae_mean']!r},{s['mae_std']!r},{s['mse_mean']!r},{s['mse_std']!r}")
        return "\n".join(lines) + "\n"


def multi_seed(ds: PreparedDataset, base_cfg: RunConfig, seeds: list[int]) -> MultiSeedSummary:
    """Independent runs per seed; sample standard deviation (divide by k-1)."""
    if len(seeds) < 2:
        raise ValueError(f"multi-seed runs need at least 2 seeds, got {len(seeds)}")
    reports = []
    for seed in seeds:
        cfg = replace(base_cfg, seed=seed)
        model = ForecastModel(cfg, ds.dim, vocab=None)
        train(model, ds, cfg)
        reports.append(evaluate(model, ds))
    stocks = [r[0] for r in reports[0].rows] + ["average"]
    per_stock: dict[str, dict[str, float]] = {}
    for idx, stock in enumerate(stocks):
        if stock == "average":
            maes = np.array([r.avg_mae for r in reports])
            mses = np.array([r.avg_mse for r in reports])
        else:
            maes = np.array([r.rows[idx][1] for r in reports])
            mses = np.array([r.rows[idx][2] for r in reports])
        per_stock[stock] = {
            "mae_mean": float(maes.mean()),
            "mae_std": float(maes.std(ddof=1)),
            "mse_mean": float(mses.mean()),
            "mse_std": float(mses.std(ddof=1)),
        }
    return MultiSeedSummary(seeds=list(seeds), per_stock=per_stock, reports=reports)


def history_csv(result: TrainResult) -> str:
    lines = ["epoch,train_mse,val_mse,improved"]
    for rec in result.history:
        lines.append(f"{rec.epoch},{rec.train_mse!r},{rec.val_mse!r},{int(rec.improved)}")
    return "\n".join(lines) + "\n"


def toy_gradient_check(cfg: RunConfig, step: float = 1e-6, tol: float = 1e-4):
    """End-to-end finite-difference check on a small seeded two-stock instance.

    The toy forces small dims (T=6, d=4, V=16, U=4, narrow backbone) but
    keeps the caller's pooling variant, prompt flag, and ablation flags, so
    the check exercises exactly the configured gradient paths.
    """
    from .optim import finite_diff_check

    toy_cfg = replace(
        cfg,
        t_window=6,
        patch_len=3,
        patch_stride=3,
        d_model=8,
        n_layers=2,
        n_heads=2,
        ffn_dim=16,
        vocab_size=16,
        num_prototypes=4,
        reprogram_heads=1,
        horizon=1,
        dim=4,
    )
    dim = 4
    model = ForecastModel(toy_cfg, dim)
    gen = substream(cfg.seed, "gradcheck/inputs")
    batch = []
    for stock in range(2):
        prices = gen.uniform(-1.5, 1.5, size=toy_cfg.t_window)
        news = []
        for day in range(toy_cfg.t_window):
            # one guaranteed zero-news day to cover the degenerate path
            n = 0 if day == 2 else int(gen.integers(1, 4))
            news.append(gen.uniform(-1.0, 1.0, size=(n, dim)))
        emb = gen.uniform(-1.0, 1.0, size=dim)
        target = gen.uniform(-1.0, 1.0, size=1)
        batch.append((prices, news, emb, target))

    def f(_params):
        return model.batch_loss(batch)

    return finite_diff_check(f, model.params, step=step, tol=tol)
