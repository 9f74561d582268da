"""Training loop shared by every mode, with CSV metrics and checkpoints."""
from __future__ import annotations

import csv
import io
import logging
import os
import time
from dataclasses import dataclass, field

import numpy as np

from ..autodiff import Adam, backward, clip_gradients, global_norm, lr_schedule_step, no_grad
from ..model import StawmModel, episode_loss
from . import checkpoint as ckpt_io
from .config import RunConfig, model_config_from_echo
from .data import Dataset, augment, load_mnist, synth_dataset

log = logging.getLogger(__name__)

CSV_HEADER = ("epoch", "train_loss", "test_metric", "val_metric", "lr")
TIMING_HEADER = ("epoch", "wall_time")
FROZEN_HEADER = ("epoch", "batch", "frozen_grad_norm")

# parameters that stay trainable when a drawing model is re-used for classification
SELFSUP_TRAINABLE = ("class_query.", "classifier.", "memory.eta", "memory.delta", "memory.theta")

EVAL_STREAM = 2 ** 32 - 1


@dataclass
class Splits:
    train: Dataset
    test: Dataset
    val: Dataset | None = None


@dataclass
class TrainResult:
    model: StawmModel
    config: RunConfig
    history: list[dict] = field(default_factory=list)
    metrics_path: str | None = None
    checkpoint_path: str | None = None
    frozen_grad_norms: list[float] = field(default_factory=list)
    scales: tuple[float, float] = (1.0, 1.0)


def metric_name(mode: str) -> str:
    return "mse" if mode.startswith("draw") else "error_pct"


def load_splits(config: RunConfig) -> Splits:
    if config.dataset == "mnist":
        train = load_mnist(config.data_dir, "train")
        test = load_mnist(config.data_dir, "test")
    else:
        kind = config.dataset.split("-", 1)[1]
        train = synth_dataset(kind, config.synth_count, config.seed, config.synth_size)
        # a disjoint seed stream for the held-out corpus
        test = synth_dataset(kind, max(config.synth_count // 4, 1), config.seed + 1_000_003, config.synth_size)
        test.split = "test"
    if config.train_subset:
        train = train.subset(config.train_subset)
    if config.test_subset:
        test = test.subset(config.test_subset)
    val = None
    if config.val_fraction > 0:
        train, val = train.split_off(config.val_fraction)
    return Splits(train, test, val)


def evaluate(model: StawmModel, dataset: Dataset, mode: str, batch_size: int = 500, seed: int = 0) -> float:
    """Test error in percent, or terminal per-pixel MSE for drawing modes."""
    model.eval()
    rng = np.random.default_rng([seed, EVAL_STREAM])
    wrong, sq_err, count = 0, 0.0, 0
    with no_grad():
        for start in range(0, len(dataset), batch_size):
            x = dataset.images[start:start + batch_size]
            result = model.run_episode(x, rng)
            if metric_name(mode) == "mse":
                sq_err += float(np.sum((result.canvas.data - x) ** 2))
                count += x.size
            else:
                y = dataset.labels[start:start + batch_size]
                wrong += int(np.sum(result.log_probs.data.argmax(axis=1) != y))
                count += len(y)
    model.train()
    if count == 0:
        raise ValueError("cannot evaluate an empty dataset")
    return sq_err / count if metric_name(mode) == "mse" else 100.0 * wrong / count


def _format(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def format_row(values) -> str:
    buf = io.StringIO()
    csv.writer(buf, lineterminator="\n").writerow([_format(v) for v in values])
    return buf.getvalue()


def _load_selfsup(model: StawmModel, path: str) -> None:
    """Copy every shared parameter from a drawing checkpoint and freeze it."""
    source = ckpt_io.load(path)
    if source.config.get("mode") not in ("draw-addition", "draw-bernoulli", "sketchpad"):
        raise ckpt_io.CheckpointError(f"{path} is not a drawing checkpoint")
    for name, p in model.named_parameters():
        if name in source.params:
            if source.params[name].shape != p.shape:
                raise ckpt_io.CheckpointError(f"{name}: checkpoint shape {source.params[name].shape} != {p.shape}")
            p.data = source.params[name].copy()
        elif not name.startswith(SELFSUP_TRAINABLE):
            raise ckpt_io.CheckpointError(f"checkpoint lacks {name}")
        p.requires_grad = name.startswith(SELFSUP_TRAINABLE)
    model.memory.clamp_rates()


def build_model(config: RunConfig) -> StawmModel:
    model_cfg = config.model
    if config.mode == "selfsup":
        source = ckpt_io.load(config.checkpoint)
        model_cfg = model_config_from_echo(source.config, head="classify", learnable_rates=True,
                                           dropout=config.model.dropout)
    model = StawmModel(model_cfg, np.random.default_rng([config.seed]))
    if config.mode == "selfsup":
        _load_selfsup(model, config.checkpoint)
    return model


def _architecture(echo: dict) -> dict:
    skip = {"dropout", "learnable_rates", "eta", "delta", "theta", "beta", "tau"}
    return {k: echo[k] for k in model_config_from_echo(echo).__dataclass_fields__ if k in echo and k not in skip}


def run_train(config: RunConfig, splits: Splits | None = None, resume: str | None = None,
              figures: bool = True) -> TrainResult:
    """Train for ``config.epochs`` epochs, writing metrics.csv, timing.csv and checkpoint.ckpt.

    ``resume`` continues from a checkpoint written by an earlier run of the same mode.
    """
    splits = splits or load_splits(config)
    model = build_model(config)
    mode = config.mode
    loss_mode = "classify" if mode == "selfsup" else mode
    trainable = [p for p in model.parameters() if p.requires_grad]
    frozen = [p for p in model.parameters() if not p.requires_grad]
    opt = Adam(trainable, lr=config.lr)
    names = [n for n, p in model.named_parameters() if p.requires_grad]

    start_epoch = 0
    scales = (1.0, 1.0)
    if resume:
        state = ckpt_io.load(resume)
        if state.config.get("mode") != mode or _architecture(state.config) != _architecture(config.echo()):
            raise ckpt_io.CheckpointError("checkpoint was written by a different mode or architecture")
        model.load_state_dict(state.params)
        opt.state.lr = state.optimizer["lr"]
        opt.state.step = state.optimizer["step"]
        opt.state.m = [state.moments[n][0].copy() for n in names]
        opt.state.v = [state.moments[n][1].copy() for n in names]
        start_epoch = state.epoch
        scales = tuple(state.extra.get("scales", scales))

    os.makedirs(config.out_dir, exist_ok=True)
    metrics_path = os.path.join(config.out_dir, "metrics.csv")
    timing_path = os.path.join(config.out_dir, "timing.csv")
    checkpoint_path = os.path.join(config.out_dir, "checkpoint.ckpt")
    frozen_path = os.path.join(config.out_dir, "frozen_grad_norms.csv")
    result = TrainResult(model, config, metrics_path=metrics_path, checkpoint_path=checkpoint_path)
    if start_epoch == 0 or not os.path.exists(metrics_path):
        with open(metrics_path, "w", encoding="utf-8") as f:
            f.write(format_row(CSV_HEADER))
        with open(timing_path, "w", encoding="utf-8") as f:
            f.write(format_row(TIMING_HEADER))
        if frozen:
            with open(frozen_path, "w", encoding="utf-8") as f:
                f.write(format_row(FROZEN_HEADER))

    train = splits.train
    margin = config.rate_margin
    sketch_sums = np.zeros(2)
    for epoch in range(start_epoch, config.epochs):
        t0 = time.perf_counter()
        model.train()
        order = np.random.default_rng([config.seed, epoch]).permutation(len(train))
        total, seen = 0.0, 0
        frozen_rows = []
        lr_used = opt.lr
        for b, start in enumerate(range(0, len(train), config.batch_size)):
            rng = np.random.default_rng([config.seed, epoch, b])
            idx = order[start:start + config.batch_size]
            x = train.images[idx]
            y = None if train.labels is None else train.labels[idx]
            if config.augment:
                x = augment(x, rng, config.rotation_degrees)
            model.memory.clamp_rates(margin)
            episode = model.run_episode(x, rng)
            loss, logged = episode_loss(model, episode, x, y, scales, loss_mode)
            if mode == "sketchpad" and epoch == 0:
                # running-mean normalization fixed after the first epoch
                sketch_sums += (logged["nll"], logged["draw"])
                scales = tuple(float(v) for v in (b + 1) / np.maximum(sketch_sums, 1e-12))
            backward(loss)
            if frozen:
                norm = global_norm([p.grad for p in frozen])
                result.frozen_grad_norms.append(norm)
                frozen_rows.append((epoch + 1, b, norm))
            grads = clip_gradients([p.grad for p in trainable], config.clip_norm)
            opt.step(grads)
            model.zero_grad()
            model.memory.clamp_rates(margin)
            total += logged["loss"] * len(idx)
            seen += len(idx)
        opt.lr = lr_schedule_step(opt.lr, epoch, config.lr_gamma, config.milestones)

        test_metric = evaluate(model, splits.test, mode, config.eval_batch, config.seed)
        val_metric = None
        if splits.val is not None:
            val_metric = evaluate(model, splits.val, mode, config.eval_batch, config.seed)
        row = {"epoch": epoch + 1, "train_loss": total / seen, "test_metric": test_metric,
               "val_metric": val_metric, "lr": lr_used}
        result.history.append(row)
        with open(metrics_path, "a", encoding="utf-8") as f:
            f.write(format_row([row[k] for k in CSV_HEADER]))
        with open(timing_path, "a", encoding="utf-8") as f:
            f.write(format_row([epoch + 1, round(time.perf_counter() - t0, 3)]))
        if frozen_rows:
            with open(frozen_path, "a", encoding="utf-8") as f:
                f.writelines(format_row(r) for r in frozen_rows)

        state = ckpt_io.Checkpoint(
            config=config.echo(),
            params=model.state_dict(),
            epoch=epoch + 1,
            optimizer={"lr": opt.lr, "betas": list(opt.state.betas), "eps": opt.state.eps,
                       "step": opt.state.step},
            moments={n: (m, v) for n, m, v in zip(names, opt.state.m, opt.state.v)},
            rng_state={"scheme": "default_rng([seed, epoch, batch])", "seed": config.seed,
                       "next_epoch": epoch + 1},
            extra={"scales": list(scales), "metric": metric_name(mode)},
        )
        ckpt_io.save(state, checkpoint_path)
        log.info("epoch %d loss %.5f %s %.5f", epoch + 1, row["train_loss"], metric_name(mode), test_metric)

    result.scales = scales
    if figures and result.history:
        from . import plotting

        plotting.training_curves(result.history, os.path.join(config.out_dir, "training_curves.png"),
                                 metric_name(mode))
    return result


def read_metrics(path: str) -> list[dict]:
    with open(path, encoding="utf-8") as f:
        return list(csv.DictReader(f))
