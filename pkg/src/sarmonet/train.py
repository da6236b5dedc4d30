"""Mini-batch Adam training of the network with a two-phase learning-rate schedule.

An epoch is one shuffled pass over the training patches; the last partial
batch is dropped so batch statistics are always well defined. The epoch
permutation depends only on ``(seed, epoch)``, so a resumed run replays the
exact batch sequence of an uninterrupted one.
"""

from __future__ import annotations

import csv
import io
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import ConfigError, NumericError, ParameterError
from .fileio import atomic_write_bytes
from .loss import LossBreakdown, LossWeights, SoftRatioHistogram, grad_loss, total_loss
from .metrics import dkl_ratio, ratio_image, snr, ssim
from .nn import Adam, MonetModel, load_weights, save_weights
from .speckle import PatchSet, derive_seed

LOG_COLUMNS = ("step", "l2", "kl", "grad", "total", "lr")


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 128
    lr_phase1: float = 1e-4
    lr_phase2: float = 1e-5
    epochs_phase1: int = 87
    epochs_phase2: int = 35
    beta1: float = 0.9
    beta2: float = 0.99
    width: int = 64
    depth: int = 17
    weights: LossWeights = field(default_factory=LossWeights)
    seed: int = 0
    checkpoint_every: int = 0  # steps; 0 = only at the end when an output dir is given
    max_steps: int | None = None

    def __post_init__(self):
        if self.batch_size < 1:
            raise ConfigError("batch_size must be positive")
        if self.epochs_phase1 < 1 or self.epochs_phase2 < 0:
            raise ConfigError("epochs_phase1 must be positive and epochs_phase2 nonnegative")
        if not (self.lr_phase1 > 0 and self.lr_phase2 > 0):
            raise ConfigError("learning rates must be positive")
        if self.width < 1 or self.depth < 2:
            raise ConfigError("width must be >= 1 and depth >= 2")
        if self.checkpoint_every < 0:
            raise ConfigError("checkpoint_every must be nonnegative")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ConfigError("Adam decay rates must lie in [0, 1)")

    @property
    def epochs(self) -> int:
        return self.epochs_phase1 + self.epochs_phase2

    def lr_at(self, epoch: int) -> float:
        return self.lr_phase1 if epoch < self.epochs_phase1 else self.lr_phase2

    @classmethod
    def desk(cls, **kw) -> "TrainConfig":
        """Desk-scale preset: width 16, batch 32, 10 + 5 epochs with the 10:1 lr drop.

        The higher phase-1 rate and the smaller KL weight compensate for the
        roughly 30x shorter run: at the published weight of 1e4 the KL term
        dominates and short runs diverge.
        """
        base = dict(batch_size=32, lr_phase1=1e-3, lr_phase2=1e-4, epochs_phase1=10,
                    epochs_phase2=5, width=16, weights=LossWeights(lambda_kl=DESK_LAMBDA_KL))
        base.update(kw)
        return cls(**base)


DESK_LAMBDA_KL = 0.01


@dataclass
class TrainLog:
    steps: list[dict] = field(default_factory=list)
    epochs: list[dict] = field(default_factory=list)

    def record_step(self, step: int, epoch: int, lb: LossBreakdown, lr: float) -> None:
        if self.steps and step <= self.steps[-1]["step"]:
            raise ParameterError("step indices must increase")
        self.steps.append(dict(step=step, epoch=epoch, l2=lb.l2, kl=lb.kl, grad=lb.grad,
                               total=lb.total, lr=lr, time=time.time()))

    def column(self, name: str) -> np.ndarray:
        return np.array([s[name] for s in self.steps])

    def to_csv(self) -> str:
        buf = io.StringIO()
        wr = csv.writer(buf, lineterminator="\n")
        wr.writerow(LOG_COLUMNS)
        for s in self.steps:
            wr.writerow([s["step"]] + [repr(float(s[c])) for c in LOG_COLUMNS[1:]])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "TrainLog":
        log = cls()
        rows = list(csv.DictReader(io.StringIO(text)))
        for r in rows:
            log.steps.append(dict(step=int(r["step"]), epoch=-1, time=0.0,
                                  **{c: float(r[c]) for c in LOG_COLUMNS[1:]}))
        return log


@dataclass
class TrainResult:
    model: MonetModel
    optimizer: Adam
    log: TrainLog
    step: int
    epoch: int


def _batches(n: int, batch: int, seed: int, epoch: int):
    perm = np.random.default_rng(derive_seed(seed, 3, epoch)).permutation(n)
    for b in range(n // batch):
        yield perm[b * batch:(b + 1) * batch]


def _stack(ps: PatchSet, idx, dtype):
    return ps.noisy[idx][:, None].astype(dtype), ps.clean[idx][:, None].astype(dtype)


def validate(model: MonetModel, data: PatchSet, weights: LossWeights = LossWeights(),
             batch_size: int = 64) -> dict:
    """Loss terms, MSE and SSIM of the model on ``data`` in inference phase, averaged per patch."""
    if len(data) == 0:
        raise ParameterError("empty validation set")
    hist = SoftRatioHistogram()
    acc = dict(l2=0.0, kl=0.0, grad=0.0, total=0.0, mse=0.0, noisy_mse=0.0, ssim=0.0)
    for s in range(0, len(data), batch_size):
        idx = np.arange(s, min(s + batch_size, len(data)))
        y, x = _stack(data, idx, model.dtype)
        out = model(y)
        lb, _ = total_loss(out, x, y, weights, hist)
        w = len(idx) / len(data)
        for k in ("l2", "kl", "grad", "total"):
            acc[k] += w * getattr(lb, k)
        acc["mse"] += w * float(np.mean((out.astype(np.float64) - x) ** 2))
        acc["noisy_mse"] += w * float(np.mean((y.astype(np.float64) - x) ** 2))
        acc["ssim"] += sum(ssim(o[0], c[0]) for o, c in zip(out, x)) / len(data)
    return acc


# --------------------------------------------------------------------------
# checkpoints


def save_checkpoint(out_dir, res: TrainResult, cfg: TrainConfig, batch_in_epoch: int) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    stem = out / f"ckpt_{res.step:06d}"
    save_weights(stem.with_suffix(".monw"), res.model)
    st = res.optimizer.state_dict()
    buf = io.BytesIO()
    np.savez(buf, t=np.array(st["t"]), **{f"m/{k}": v for k, v in st["m"].items()},
             **{f"v/{k}": v for k, v in st["v"].items()})
    atomic_write_bytes(stem.with_suffix(".adam.npz"), buf.getvalue())
    meta = (f"step = {res.step}\nepoch = {res.epoch}\nbatch_in_epoch = {batch_in_epoch}\n"
            f"lr = {cfg.lr_at(res.epoch)!r}\nseed = {cfg.seed}\n")
    atomic_write_bytes(stem.with_suffix(".txt"), meta.encode())
    atomic_write_bytes(out / "train_log.csv", res.log.to_csv().encode())
    return stem.with_suffix(".monw")


def latest_checkpoint(out_dir) -> Path | None:
    ck = sorted(Path(out_dir).glob("ckpt_*.monw"))
    return ck[-1] if ck else None


def load_checkpoint(path, cfg: TrainConfig):
    """``(model, optimizer, step, epoch, batch_in_epoch, log)`` from a ``.monw`` checkpoint."""
    path = Path(path)
    stem = path.with_suffix("")
    meta = {}
    for line in stem.with_suffix(".txt").read_text().splitlines():
        k, _, v = line.partition("=")
        meta[k.strip()] = v.strip()
    if int(meta["seed"]) != cfg.seed:
        raise ConfigError(f"checkpoint seed {meta['seed']} differs from config seed {cfg.seed}")
    model = load_weights(path)
    opt = Adam(cfg.lr_phase1, cfg.beta1, cfg.beta2)
    with np.load(stem.with_suffix(".adam.npz")) as z:
        m = {k[2:]: z[k].copy() for k in z.files if k.startswith("m/")}
        v = {k[2:]: z[k].copy() for k in z.files if k.startswith("v/")}
        opt.load_state_dict(dict(t=int(z["t"]), m=m, v=v))
    log_path = path.parent / "train_log.csv"
    log = TrainLog.from_csv(log_path.read_text()) if log_path.exists() else TrainLog()
    log.steps = [s for s in log.steps if s["step"] <= int(meta["step"])]
    return model, opt, int(meta["step"]), int(meta["epoch"]), int(meta["batch_in_epoch"]), log


# --------------------------------------------------------------------------
# training loop


def train(cfg: TrainConfig, data: PatchSet, val: PatchSet | None = None, out_dir=None,
          resume=None, callback=None, dtype=np.float32) -> TrainResult:
    """Train from scratch, or from checkpoint ``resume``; returns the final state.

    ``callback(result)`` is called after every step. A non-finite loss raises
    :class:`NumericError` before the parameters are touched.
    """
    n = len(data)
    if n < cfg.batch_size:
        raise ConfigError(f"{n} training patches cannot fill one batch of {cfg.batch_size}")
    if resume is not None:
        model, opt, step, epoch, skip, log = load_checkpoint(resume, cfg)
    else:
        model = MonetModel(cfg.width, cfg.depth, seed=derive_seed(cfg.seed, 1), dtype=dtype)
        opt = Adam(cfg.lr_phase1, cfg.beta1, cfg.beta2)
        step, epoch, skip, log = 0, 0, 0, TrainLog()
    res = TrainResult(model, opt, log, step, epoch)
    hist = SoftRatioHistogram()
    per_epoch = n // cfg.batch_size
    stop = False
    while res.epoch < cfg.epochs:
        lr = cfg.lr_at(res.epoch)
        for b, idx in enumerate(_batches(n, cfg.batch_size, cfg.seed, res.epoch)):
            if b < skip:
                continue
            y, x = _stack(data, idx, model.dtype)
            out, cache = model.forward(y, "train")
            lb, g = total_loss(out, x, y, cfg.weights, hist)
            if not np.isfinite(lb.total) or not np.all(np.isfinite(g)):
                raise NumericError(f"non-finite loss at step {res.step + 1}: {lb.as_row()}")
            grads = model.backward(cache, g)
            opt.step(model.params(), grads, lr)
            model.bump()
            res.step += 1
            skip = b + 1
            log.record_step(res.step, res.epoch, lb, lr)
            if cfg.checkpoint_every and out_dir and res.step % cfg.checkpoint_every == 0:
                if skip == per_epoch:
                    save_checkpoint(out_dir, replace(res, epoch=res.epoch + 1), cfg, 0)
                else:
                    save_checkpoint(out_dir, res, cfg, skip)
            if callback:
                callback(res)
            if cfg.max_steps is not None and res.step >= cfg.max_steps:
                stop = True
                break
        if skip < per_epoch:
            break  # stopped mid-epoch
        skip = 0
        if val is not None and len(val):
            rec = validate(model, val, cfg.weights)
            rec["epoch"] = res.epoch
            log.epochs.append(rec)
        res.epoch += 1
        if stop:
            break
    if out_dir:
        save_checkpoint(out_dir, res, cfg, skip)
        save_weights(Path(out_dir) / "model.monw", model)
    return res


# --------------------------------------------------------------------------
# ablation

VARIANTS = ("L2", "Lkl", "Lgrad", "L")


@dataclass
class AblationRow:
    variant: str
    ssim: float
    snr: float
    mse: float
    d_kl: float
    grad: float
    final_l2: float
    final_kl: float
    final_grad: float


def evaluate_variant(model: MonetModel, data: PatchSet) -> dict:
    """Mean per-patch SSIM and SNR, MSE, ratio-image D_KL (pooled) and gradient loss on ``data``."""
    y = data.noisy[:, None].astype(model.dtype)
    x = data.clean[:, None].astype(np.float64)
    out = np.concatenate([model(y[s:s + 64]) for s in range(0, len(y), 64)]).astype(np.float64)
    return dict(ssim=float(np.mean([ssim(o[0], c[0]) for o, c in zip(out, x)])),
                snr=float(np.mean([snr(o[0], c[0]) for o, c in zip(out, x)])),
                mse=float(np.mean((out - x) ** 2)),
                d_kl=dkl_ratio(ratio_image(y.astype(np.float64), out)),
                grad=grad_loss(out, x)[0])


def run_ablation(cfg: TrainConfig, data: PatchSet, test: PatchSet, variants=VARIANTS,
                 callback=None) -> tuple[list[AblationRow], dict[str, TrainResult]]:
    """Train each loss variant with the same seed and data; score on ``test``."""
    rows, results = [], {}
    for name in variants:
        w = LossWeights.variant(name, lambda_kl=cfg.weights.lambda_kl,
                                lambda_grad=cfg.weights.lambda_grad,
                                kl_pooling=cfg.weights.kl_pooling)
        res = train(replace(cfg, weights=w), data)
        ev = evaluate_variant(res.model, test)
        last = res.log.steps[-1]
        rows.append(AblationRow(name, ev["ssim"], ev["snr"], ev["mse"], ev["d_kl"], ev["grad"], last["l2"], last["kl"],
                                last["grad"]))
        results[name] = res
        if callback:
            callback(name, res)
    return rows, results


def ablation_table(rows: list[AblationRow]) -> str:
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(["variant", "ssim", "snr", "mse", "d_kl", "grad_loss", "final_l2", "final_kl", "final_grad"])
    for r in rows:
        d = asdict(r)
        wr.writerow([d.pop("variant")] + [repr(float(v)) for v in d.values()])
    return buf.getvalue()


__all__ = [
    "AblationRow", "DESK_LAMBDA_KL", "LOG_COLUMNS", "TrainConfig", "TrainLog", "TrainResult",
    "VARIANTS", "ablation_table", "evaluate_variant", "latest_checkpoint", "load_checkpoint",
    "run_ablation", "save_checkpoint", "train", "validate",
]
