"""Checkpoint evaluation: metrics, canvas renders, memory statistics, stability."""
from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from ..attention import glimpse_inverse
from ..autodiff import no_grad, sigmoid
from ..memory import StabilityReport, check_stability
from ..model import StawmModel
from . import checkpoint as ckpt_io
from .config import model_config_from_echo
from .data import Dataset
from .export import canvas_grid, write_pnm
from .train import EVAL_STREAM, evaluate, format_row, metric_name

MEMORY_STATS_HEADER = ("sample", "min", "max", "mean", "frobenius")


@dataclass
class EvalReport:
    mode: str
    metric: str
    value: float | None
    stability: StabilityReport
    rates: tuple[float, float, float]
    files: list[str] = field(default_factory=list)


def load_model(path: str) -> tuple[StawmModel, ckpt_io.Checkpoint]:
    state = ckpt_io.load(path)
    cfg = model_config_from_echo(state.config)
    model = StawmModel(cfg, np.random.default_rng(0))
    try:
        model.load_state_dict(state.params)
    except (KeyError, ValueError) as exc:
        raise ckpt_io.CheckpointError(f"config/checkpoint mismatch: {exc}") from None
    model.eval()
    return model, state


def stability_of(model: StawmModel) -> StabilityReport:
    return check_stability(model.memory.rates, n_glimpses=model.config.glimpses)


def format_stability(report: StabilityReport, rates) -> str:
    eta, delta, theta = rates
    head = f"rates eta={eta:.6g} delta={delta:.6g} theta={theta:.6g}: "
    if not report.satisfied:
        return head + "UNSTABLE (" + ", ".join(report.violations) + ")"
    bound = "" if report.bound is None else f"; equilibrium bound {report.bound:.6g}"
    return head + "stable" + bound


def render_canvases(model: StawmModel, images: np.ndarray, out_dir: str, seed: int = 0,
                    stem: str = "canvas", figures: bool = True) -> list[str]:
    """Write the canvas after every glimpse (rows) for each image (columns), target last.

    Bernoulli models also get the warped mask of the last glimpse.
    """
    if not model.config.draws:
        raise ValueError("rendering needs a drawing model")
    os.makedirs(out_dir, exist_ok=True)
    model.eval()
    rng = np.random.default_rng([seed, EVAL_STREAM])
    with no_grad():
        result = model.run_episode(images, rng, record_canvas=True)
    sequence = [step.canvas for step in result.steps]
    grid = canvas_grid(sequence, images)
    files = [write_pnm(grid, os.path.join(out_dir, f"{stem}.pgm" if grid.ndim == 2 else f"{stem}.ppm"))]
    if figures:
        from . import plotting

        files.append(plotting.image_grid(grid, os.path.join(out_dir, f"{stem}.png")))
    last = result.steps[-1]
    if last.mask is not None:
        h, w = images.shape[2:]
        with no_grad():
            probs = glimpse_inverse(sigmoid(last.mask), last.affine.inverse, h, w).data
        mask_grid = canvas_grid([probs], np.clip(images, 0, 1))
        files.append(write_pnm(mask_grid, os.path.join(out_dir, f"{stem}_mask.pgm")))
        if figures:
            from . import plotting

            files.append(plotting.image_grid(mask_grid, os.path.join(out_dir, f"{stem}_mask.png")))
    return files


def terminal_memories(model: StawmModel, images: np.ndarray, seed: int = 0) -> np.ndarray:
    model.eval()
    with no_grad():
        result = model.run_episode(images, np.random.default_rng([seed, EVAL_STREAM]))
    return result.memory.weights.data.copy()


def memory_stats_rows(weights: np.ndarray) -> list[tuple]:
    rows = []
    for i, w in enumerate(weights):
        rows.append((i, float(w.min()), float(w.max()), float(w.mean()), float(np.linalg.norm(w))))
    return rows


def dump_memory(model: StawmModel, images: np.ndarray, out_dir: str, seed: int = 0,
                figures: bool = True) -> list[str]:
    os.makedirs(out_dir, exist_ok=True)
    weights = terminal_memories(model, images, seed)
    path = os.path.join(out_dir, "memory_stats.csv")
    with open(path, "w", encoding="utf-8") as f:
        f.write(format_row(MEMORY_STATS_HEADER))
        for row in memory_stats_rows(weights):
            f.write(format_row(row))
    files = [path]
    if figures:
        from . import plotting

        files.append(plotting.memory_heatmap(weights[0], os.path.join(out_dir, "memory_sample0.png")))
    return files


def run_eval(checkpoint: str, dataset: Dataset | None = None, out_dir: str | None = None,
             render: int = 0, memory_dump: int = 0, seed: int = 0, batch_size: int = 500,
             figures: bool = True) -> EvalReport:
    """Score a checkpoint and optionally write renders and memory statistics to ``out_dir``."""
    model, state = load_model(checkpoint)
    mode = state.config.get("mode", model.config.head)
    value = None
    if dataset is not None:
        value = evaluate(model, dataset, mode, batch_size, seed)
    report = EvalReport(mode, metric_name(mode), value, stability_of(model), model.memory.rates.as_tuple())
    if (render or memory_dump) and (dataset is None or out_dir is None):
        raise ValueError("renders and memory dumps need a dataset and an output directory")
    if render and model.config.draws:
        report.files += render_canvases(model, dataset.images[:render], out_dir, seed, figures=figures)
    if memory_dump:
        report.files += dump_memory(model, dataset.images[:memory_dump], out_dir, seed, figures)
    return report
