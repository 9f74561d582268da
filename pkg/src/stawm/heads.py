"""Task heads and objectives: classification, canvas drawing, latent sub-spaces."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .autodiff import (
    ConvTranspose2d, Linear, Module, Tensor, clamp, concat, exp, log, log_softmax, mean, mul,
    relu6, sigmoid, sum,
)
from .autodiff.functional import conv_output_size
from .autodiff.tensor import as_tensor

CANVAS_START = -6.0
PROB_EPS = 1e-6


# ---------------------------------------------------------------------------
# classification

class Classifier(Module):
    def __init__(self, memory_size: int, num_classes: int, rng: np.random.Generator,
                 weight_init: str = "kaiming-uniform"):
        self.linear = Linear(memory_size, num_classes, rng, weight_init=weight_init)

    def __call__(self, latent: Tensor) -> Tensor:
        return log_softmax(self.linear(latent))


def classify_head(memory, query: Tensor, classifier: Classifier) -> Tensor:
    """Log-probabilities from the terminal memory projected by ``query``."""
    from .memory import MemoryState, MemoryStateError

    if memory.state is not MemoryState.TERMINAL:
        raise MemoryStateError("classification reads the terminal memory only")
    return classifier(memory.read(query))


def nll_loss(log_probs: Tensor, labels) -> Tensor:
    labels = np.asarray(labels, dtype=np.int64)
    onehot = np.zeros(log_probs.shape)
    onehot[np.arange(labels.size), labels] = 1.0
    return -(sum(mul(log_probs, onehot)) * (1.0 / labels.size))


# ---------------------------------------------------------------------------
# latent sub-spaces

@dataclass
class LatentSubspace:
    mu: Tensor
    logvar: Tensor
    z: Tensor
    eps: np.ndarray


def sample_latent(mu, logvar, eps) -> Tensor:
    """Reparameterized sample mu + exp(logvar / 2) * eps."""
    mu, logvar = as_tensor(mu), as_tensor(logvar)
    return mu + exp(logvar * 0.5) * np.asarray(eps, dtype=np.float64)


def kl_gaussian(mu, logvar) -> Tensor:
    """KL(N(mu, sigma^2) || N(0, I)) summed over the last axis."""
    mu, logvar = as_tensor(mu), as_tensor(logvar)
    terms = 1.0 + logvar - mu * mu - exp(logvar)
    return sum(terms, axis=-1) * -0.5


def kl_joint(subspaces: Sequence[tuple]) -> Tensor:
    """Sum of per-glimpse KL terms under independent unit-Gaussian priors."""
    if not subspaces:
        raise ValueError("kl_joint needs at least one sub-space")
    total = None
    for mu, logvar in subspaces:
        term = kl_gaussian(mu, logvar)
        total = term if total is None else total + term
    return total


def kl_concatenated(subspaces: Sequence[tuple]) -> Tensor:
    """KL of the single space formed by concatenating every sub-space."""
    if not subspaces:
        raise ValueError("no sub-spaces to concatenate")
    mus = concat([as_tensor(m) for m, _ in subspaces], axis=-1)
    logvars = concat([as_tensor(v) for _, v in subspaces], axis=-1)
    return kl_gaussian(mus, logvars)


class LatentHead(Module):
    """Maps a memory read-out to (mu, logvar) of a K-dimensional Gaussian."""

    def __init__(self, memory_size: int, latent_size: int, rng: np.random.Generator):
        self.mu = Linear(memory_size, latent_size, rng)
        self.logvar = Linear(memory_size, latent_size, rng)

    def __call__(self, latent: Tensor) -> tuple[Tensor, Tensor]:
        return self.mu(latent), self.logvar(latent)


# ---------------------------------------------------------------------------
# Concrete relaxation of the Bernoulli

def concrete_sample(p, tau: float, u) -> Tensor:
    """Binary Concrete sample; tends to Bernoulli(p) as tau -> 0."""
    if tau <= 0:
        raise ValueError("temperature must be positive")
    p = clamp(as_tensor(p), PROB_EPS, 1.0 - PROB_EPS)
    u = np.asarray(u, dtype=np.float64)
    noise = np.log(u) - np.log1p(-u)
    logits = log(p) - log(1.0 - p) + noise
    return sigmoid(logits * (1.0 / tau))


# ---------------------------------------------------------------------------
# sketch decoder

def _mirror_plan(image_channels: int, glimpse_size: int, layers: Sequence[tuple[int, int, int]]):
    """Shapes needed to invert a conv stack: per-layer (in_ch, out_ch, k, s, in_size)."""
    plan = []
    ch, size = image_channels, glimpse_size
    for filters, kernel, stride in layers:
        out = conv_output_size(size, kernel, stride, 0)
        plan.append((ch, filters, kernel, stride, size, out))
        ch, size = filters, out
    return plan, ch, size


class SketchDecoder(Module):
    """Linear projection then a transpose-conv mirror of the glimpse CNN.

    Output has ``image_channels`` sketch channels, plus one alpha channel when
    ``with_mask`` is set.
    """

    def __init__(self, latent_size: int, image_channels: int, glimpse_size: int,
                 glimpse_layers: Sequence[tuple[int, int, int]], rng: np.random.Generator,
                 with_mask: bool = False):
        plan, ch, size = _mirror_plan(image_channels, glimpse_size, glimpse_layers)
        self.start_shape = (ch, size, size)
        self.with_mask = with_mask
        self.image_channels = image_channels
        self.project = Linear(latent_size, ch * size * size, rng)
        self.layers = []
        extra = 1 if with_mask else 0
        for i, (in_ch, filters, kernel, stride, in_size, out_size) in enumerate(reversed(plan)):
            produced = (out_size - 1) * stride + kernel
            target_ch = in_ch + (extra if i == len(plan) - 1 else 0)
            layer = ConvTranspose2d(filters, target_ch, kernel, rng, stride=stride,
                                    output_padding=in_size - produced)
            setattr(self, f"deconv{i}", layer)
            self.layers.append(layer)

    def __call__(self, z: Tensor) -> tuple[Tensor, Tensor | None]:
        x = relu6(self.project(z)).reshape(z.shape[0], *self.start_shape)
        for i, layer in enumerate(self.layers):
            x = layer(x)
            if i < len(self.layers) - 1:
                x = relu6(x)
        if not self.with_mask:
            return x, None
        c = self.image_channels
        return x[:, :c], x[:, c:c + 1]


def decode_sketch(z, decoder: SketchDecoder):
    return decoder(as_tensor(z))


# ---------------------------------------------------------------------------
# canvases

@dataclass
class Canvas:
    """Drawing surface; ``method`` is 'addition' or 'bernoulli'."""

    method: str
    value: Tensor
    history: list = field(default_factory=list)

    @classmethod
    def blank(cls, method: str, shape) -> "Canvas":
        if method == "addition":
            return cls(method, Tensor(np.full(shape, CANVAS_START)))
        if method == "bernoulli":
            return cls(method, Tensor(np.zeros(shape)))
        raise ValueError(f"unknown canvas method {method!r}")

    def finalize(self) -> Tensor:
        return sigmoid(self.value) if self.method == "addition" else self.value

    def snapshot(self) -> np.ndarray:
        return self.finalize().data.copy()


def compose_addition(accumulator, warped_updates: Sequence) -> Tensor:
    """sigmoid(accumulator + sum of warped sketches); the sigmoid is applied once."""
    total = as_tensor(accumulator)
    for update in warped_updates:
        total = total + update
    return sigmoid(total)


def compose_bernoulli(previous, warped_sketch, mask) -> Tensor:
    """Over-composite: previous * (1 - mask) + sketch * mask."""
    previous, warped_sketch, mask = as_tensor(previous), as_tensor(warped_sketch), as_tensor(mask)
    return previous * (1.0 - mask) + warped_sketch * mask


def reconstruction_loss(canvas, target, kind: str = "mse") -> Tensor:
    """Per-pixel mean squared error or binary cross-entropy."""
    canvas = as_tensor(canvas)
    target = np.asarray(target.data if isinstance(target, Tensor) else target, dtype=np.float64)
    if canvas.shape != target.shape:
        raise ValueError(f"canvas {canvas.shape} and target {target.shape} differ")
    if kind == "mse":
        diff = canvas - target
        return mean(diff * diff)
    if kind == "bce":
        c = clamp(canvas, PROB_EPS, 1.0 - PROB_EPS)
        return -mean(log(c) * target + log(1.0 - c) * (1.0 - target))
    raise ValueError(f"unknown reconstruction loss {kind!r}")


def total_loss(components: dict, mode: str, beta: float = 1.0, scales: tuple[float, float] = (1.0, 1.0)) -> Tensor:
    """Assemble the training objective.

    ``components`` may hold ``nll`` (scalar), ``recon`` (per-pixel mean),
    ``subspaces`` (list of (mu, logvar), batched) and ``pixels`` (elements per
    image). The KL term is averaged over the batch and divided by ``pixels``
    so that it keeps its per-image weight against a per-pixel reconstruction.
    """
    def draw_term(kl_fn):
        for key in ("recon", "subspaces"):
            if key not in components:
                raise KeyError(f"{mode} loss needs {key!r}")
        recon = components["recon"]
        if beta == 0:
            return recon
        kl = mean(kl_fn(components["subspaces"])) * (1.0 / components.get("pixels", 1))
        return recon + kl * beta

    if mode == "classify":
        if "nll" not in components:
            raise KeyError("classify loss needs 'nll'")
        return components["nll"]
    if mode == "draw-addition":
        return draw_term(kl_concatenated)
    if mode == "draw-bernoulli":
        return draw_term(kl_joint)
    if mode == "sketchpad":
        if "nll" not in components:
            raise KeyError("sketchpad loss needs 'nll'")
        s_c, s_d = scales
        return components["nll"] * s_c + draw_term(kl_concatenated) * s_d
    raise ValueError(f"unknown mode {mode!r}")
