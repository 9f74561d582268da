"""The glimpse episode: feature CNNs, recurrent pose policy, memory writes and heads."""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from . import heads
from .attention import glimpse_forward, glimpse_inverse
from .autodiff import (
    Conv2d, Linear, LSTMCell, Module, Tensor, detach, dropout, flatten, relu6,
)
from .autodiff.functional import conv_output_size
from .autodiff.tensor import as_tensor
from .memory import HebbRosenblattMemory

HEADS = ("classify", "draw-addition", "draw-bernoulli", "sketchpad")

Layers = tuple[tuple[int, int, int], ...]


def parse_layers(text: str) -> Layers:
    """'64:3:2,128:3:2' -> ((64, 3, 2), (128, 3, 2)); stride defaults to 1."""
    layers = []
    for item in text.split(","):
        item = item.strip()
        if not item:
            continue
        parts = [int(p) for p in item.split(":")]
        if len(parts) == 2:
            parts.append(1)
        if len(parts) != 3 or min(parts) < 1:
            raise ValueError(f"bad layer spec {item!r}")
        layers.append(tuple(parts))
    return tuple(layers)


def format_layers(layers: Layers) -> str:
    return ",".join(f"{f}:{k}:{s}" for f, k, s in layers)


@dataclass(frozen=True)
class StawmConfig:
    image_size: int = 28
    channels: int = 1
    glimpse_size: int = 8
    glimpses: int = 4
    memory_size: int = 64
    latent_size: int = 4
    num_classes: int = 10
    head: str = "classify"
    eta: float = 0.4
    delta: float = 0.2
    theta: float = 0.5
    learnable_rates: bool = False
    beta: float = 4.0
    tau: float = 0.67
    dropout: float = 0.5
    variational: bool = True
    context_layers: Layers = ((64, 3, 2), (128, 3, 2), (256, 3, 2))
    glimpse_layers: Layers = ((64, 3, 1), (128, 3, 2))
    pose_hidden: int = 0  # width of the first affine layer; 0 means memory_size

    @property
    def hidden_size(self) -> int:
        return 2 * self.memory_size

    @property
    def draws(self) -> bool:
        return self.head in ("draw-addition", "draw-bernoulli", "sketchpad")

    @property
    def classifies(self) -> bool:
        return self.head in ("classify", "sketchpad")

    @property
    def canvas_method(self) -> str:
        return "bernoulli" if self.head == "draw-bernoulli" else "addition"

    def validate(self) -> "StawmConfig":
        if self.glimpse_size < 1 or self.glimpses < 1 or self.memory_size < 1:
            raise ValueError("glimpse size, glimpse count and memory size must be positive")
        if self.head not in HEADS:
            raise ValueError(f"unknown head {self.head!r}; expected one of {HEADS}")
        if self.tau <= 0:
            raise ValueError("tau must be positive")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")
        _stack_size(self.image_size, self.context_layers)
        _stack_size(self.glimpse_size, self.glimpse_layers)
        return self

    def with_(self, **changes) -> "StawmConfig":
        return replace(self, **changes)


def _stack_size(size: int, layers: Layers) -> int:
    for _, kernel, stride in layers:
        size = conv_output_size(size, kernel, stride, 0)
        if size < 1:
            raise ValueError(f"conv stack {format_layers(layers)} collapses the input")
    return size


class ConvStack(Module):
    """Strided convolutions with relu6, no pooling, flattened output."""

    def __init__(self, in_channels: int, in_size: int, layers: Layers, rng: np.random.Generator):
        self.convs = []
        ch = in_channels
        for i, (filters, kernel, stride) in enumerate(layers):
            conv = Conv2d(ch, filters, kernel, rng, stride=stride)
            setattr(self, f"conv{i}", conv)
            self.convs.append(conv)
            ch = filters
        self.out_features = ch * _stack_size(in_size, layers) ** 2

    def __call__(self, x: Tensor) -> Tensor:
        for conv in self.convs:
            x = relu6(conv(x))
        return flatten(x)


class AffineHead(Module):
    """Two linear layers down to six affine parameters, starting at the identity."""

    def __init__(self, in_features: int, hidden: int, rng: np.random.Generator):
        self.hidden = Linear(in_features, hidden, rng)
        self.out = Linear(hidden, 6, rng, weight_init="zeros", bias_init="identity-affine-bias")

    def __call__(self, x: Tensor) -> Tensor:
        return self.out(relu6(self.hidden(x)))


@dataclass
class AffinePair:
    forward: Tensor
    inverse: Tensor | None = None


@dataclass
class GlimpseStep:
    index: int
    affine: AffinePair
    patch: Tensor
    features: Tensor
    memory_input: Tensor
    latent: heads.LatentSubspace | None = None
    sketch: Tensor | None = None
    mask: Tensor | None = None
    mask_sample: Tensor | None = None
    canvas: np.ndarray | None = None


@dataclass
class EpisodeResult:
    memory: HebbRosenblattMemory
    steps: list[GlimpseStep]
    canvas: Tensor | None = None
    log_probs: Tensor | None = None
    context: Tensor | None = None
    losses: dict = field(default_factory=dict)

    @property
    def subspaces(self) -> list[tuple[Tensor, Tensor]]:
        return [(s.latent.mu, s.latent.logvar) for s in self.steps if s.latent is not None]


class StawmModel(Module):
    def __init__(self, config: StawmConfig, rng: np.random.Generator):
        config.validate()
        self.config = config
        M, H = config.memory_size, config.hidden_size
        self.context_cnn = ConvStack(config.channels, config.image_size, config.context_layers, rng)
        self.glimpse_cnn = ConvStack(config.channels, config.glimpse_size, config.glimpse_layers, rng)
        ctx = self.context_cnn.out_features
        self.context_to_input = Linear(ctx, H, rng)
        self.context_to_hidden = Linear(ctx, H, rng)
        self.aggregator = LSTMCell(self.glimpse_cnn.out_features, H, rng)
        self.emission = LSTMCell(H, H, rng)
        pose_hidden = config.pose_hidden or M
        self.pose = AffineHead(H, pose_hidden, rng)
        self.what = Linear(self.glimpse_cnn.out_features, M, rng)
        self.where = Linear(H, M, rng)
        self.memory = HebbRosenblattMemory(M, config.eta, config.delta, config.theta,
                                           learnable=config.learnable_rates)
        if config.classifies:
            self.class_query = Linear(ctx, M, rng)
            self.classifier = heads.Classifier(M, config.num_classes, rng)
        if config.draws:
            self.pose_inverse = AffineHead(H, pose_hidden, rng)
            self.draw_query = Linear(ctx, M, rng)
            if config.variational:
                self.latent = heads.LatentHead(M, config.latent_size, rng)
            else:
                self.latent_map = Linear(M, config.latent_size, rng)
            self.decoder = heads.SketchDecoder(
                config.latent_size, config.channels, config.glimpse_size, config.glimpse_layers, rng,
                with_mask=config.head == "draw-bernoulli")

    # -- components ---------------------------------------------------------

    def context_features(self, images: Tensor) -> Tensor:
        c = self.config
        if images.shape[1:] != (c.channels, c.image_size, c.image_size):
            raise ValueError(f"image shape {images.shape[1:]} does not match config")
        return self.context_cnn(images)

    def glimpse_features(self, patch: Tensor) -> Tensor:
        c = self.config
        if patch.shape[1:] != (c.channels, c.glimpse_size, c.glimpse_size):
            raise ValueError(f"patch shape {patch.shape[1:]} does not match config")
        return self.glimpse_cnn(patch)

    def emit_affine_pair(self, emission_output: Tensor) -> AffinePair:
        inverse = self.pose_inverse(emission_output) if self.config.draws else None
        return AffinePair(self.pose(emission_output), inverse)

    def what_where_fuse(self, glimpse_feats: Tensor, rnn_output: Tensor) -> Tensor:
        return relu6(self.what(glimpse_feats) * self.where(rnn_output))

    def make_query(self, context: Tensor, layer: Linear) -> Tensor:
        return relu6(layer(detach(context)))

    # -- episode ------------------------------------------------------------

    def run_episode(self, images, rng: np.random.Generator | None = None,
                    record_canvas: bool = False) -> EpisodeResult:
        """Run N glimpses over a batch of (B, C, H, W) images."""
        cfg = self.config
        images = as_tensor(images)
        if images.ndim == 3:
            images = images.reshape(1, *images.shape)
        batch = images.shape[0]
        training = self.training
        if rng is None:
            if training and (cfg.dropout > 0 or cfg.draws):
                raise ValueError("training episodes need an rng")
            rng = np.random.default_rng(0)

        context = self.context_features(images)
        emission_in = self.context_to_input(context)
        emission_state = (self.context_to_hidden(context), Tensor(np.zeros((batch, cfg.hidden_size))))
        aggregator_state = (Tensor(np.zeros((batch, cfg.hidden_size))),
                            Tensor(np.zeros((batch, cfg.hidden_size))))

        memory = self.memory.reset(batch)
        draw_query = self.make_query(context, self.draw_query) if cfg.draws else None
        canvas = None
        if cfg.draws:
            canvas = heads.Canvas.blank(cfg.canvas_method, images.shape)

        steps: list[GlimpseStep] = []
        for n in range(cfg.glimpses):
            emission_state = self.emission(emission_in, emission_state)
            pose_out = emission_state[0]
            pair = self.emit_affine_pair(pose_out)
            patch = glimpse_forward(images, pair.forward, cfg.glimpse_size)
            feats = dropout(self.glimpse_features(patch), cfg.dropout, rng, training)
            aggregator_state = self.aggregator(feats, aggregator_state)
            emission_in = dropout(aggregator_state[0], cfg.dropout, rng, training)
            e = self.what_where_fuse(feats, pose_out)
            memory.write(e)
            step = GlimpseStep(n, pair, patch, feats, e)
            if cfg.draws:
                memory.to_intermediate()
                self._draw_step(step, memory.read(draw_query), canvas, images.shape, rng)
                memory.to_update()
                if record_canvas:
                    step.canvas = canvas.snapshot()
            steps.append(step)

        memory.to_terminal()
        result = EpisodeResult(memory, steps, context=context)
        if cfg.draws:
            result.canvas = canvas.finalize()
        if cfg.classifies:
            query = self.make_query(context, self.class_query)
            result.log_probs = heads.classify_head(memory, query, self.classifier)
        return result

    def _draw_step(self, step: GlimpseStep, latent: Tensor, canvas: heads.Canvas, image_shape, rng) -> None:
        cfg = self.config
        if cfg.variational:
            mu, logvar = self.latent(latent)
            eps = rng.standard_normal(mu.shape)
            z = heads.sample_latent(mu, logvar, eps)
            step.latent = heads.LatentSubspace(mu, logvar, z, eps)
        else:
            z = self.latent_map(latent)
        sketch, mask = heads.decode_sketch(z, self.decoder)
        step.sketch, step.mask = sketch, mask
        height, width = image_shape[2], image_shape[3]
        if canvas.method == "addition":
            canvas.value = canvas.value + glimpse_inverse(sketch, step.affine.inverse, height, width)
        else:
            probs = glimpse_inverse(heads.sigmoid(mask), step.affine.inverse, height, width)
            u = rng.uniform(np.finfo(float).tiny, 1.0, size=probs.shape)
            b = heads.concrete_sample(probs, cfg.tau, u)
            step.mask_sample = b
            painted = glimpse_inverse(heads.sigmoid(sketch), step.affine.inverse, height, width)
            canvas.value = heads.compose_bernoulli(canvas.value, painted, b)


def episode_loss(model: StawmModel, result: EpisodeResult, images, labels=None,
                 scales: tuple[float, float] = (1.0, 1.0), mode: str | None = None) -> tuple[Tensor, dict]:
    """Mode loss plus float-valued components for logging."""
    cfg = model.config
    mode = mode or cfg.head
    components: dict = {}
    logged: dict = {}
    if mode in ("classify", "sketchpad"):
        if labels is None:
            raise ValueError(f"{mode} needs labels")
        components["nll"] = heads.nll_loss(result.log_probs, labels)
        logged["nll"] = components["nll"].item()
    if mode != "classify":
        images = np.asarray(images.data if isinstance(images, Tensor) else images)
        kind = "mse" if cfg.canvas_method == "bernoulli" else "bce"
        components["recon"] = heads.reconstruction_loss(result.canvas, images, kind)
        components["subspaces"] = result.subspaces
        components["pixels"] = int(np.prod(images.shape[1:]))
        logged["recon"] = components["recon"].item()
        logged["mse"] = float(np.mean((result.canvas.data - images) ** 2))
        if not cfg.variational:
            components["subspaces"] = []
        if components["subspaces"]:
            logged["kl"] = float(np.mean(heads.kl_joint(components["subspaces"]).data))
    beta = cfg.beta if cfg.variational else 0.0
    loss = heads.total_loss(components, mode, beta, scales)
    if mode == "sketchpad":
        logged["draw"] = heads.total_loss(components, "draw-addition", beta).item()
    logged["loss"] = loss.item()
    return loss, logged
