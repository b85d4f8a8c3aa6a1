"""Conditioning networks: encoder q(z0|s,x), prior p(z|x), decoder p(s|z,x).

The encoder also emits the context vector c that parameterizes every flow
step. All three are MLPs over flattened pixels; see ModelConfig for sizes.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as nc
from .flows import Context, FlowChain, GlowStep, PlanarStep
from .gaussian import DiagGaussian
from .mlp import MLPParams, init_mlp, mlp_forward
from .tensor import ShapeError, Tensor

FLOW_KINDS = ("planar", "glow", "none")


@dataclass
class ModelConfig:
    latent_dim: int = 6
    context_dim: int = 128
    flow_steps: int = 4
    flow_kind: str = "planar"
    image_dims: tuple = (16, 16)
    hidden: tuple = (64, 64)

    def __post_init__(self):
        self.image_dims = tuple(int(v) for v in self.image_dims)
        self.hidden = tuple(int(v) for v in self.hidden)
        if self.flow_kind not in FLOW_KINDS:
            raise ValueError(f"flow_kind must be one of {FLOW_KINDS}, "
                             f"got {self.flow_kind!r}")
        # canonical form: no steps <=> kind 'none'
        if self.flow_kind == "none":
            self.flow_steps = 0
        elif self.flow_steps == 0:
            self.flow_kind = "none"
        if self.latent_dim < 1 or self.context_dim < 1 or self.flow_steps < 0:
            raise ValueError("latent_dim, context_dim >= 1 and flow_steps >= 0")
        if len(self.image_dims) != 2 or min(self.image_dims) < 1:
            raise ValueError(f"image_dims must be (H, W), got {self.image_dims}")
        if not self.hidden:
            raise ValueError("need at least one hidden layer size")

    @property
    def n_pixels(self) -> int:
        return self.image_dims[0] * self.image_dims[1]

    def to_dict(self) -> dict:
        return {"latent_dim": self.latent_dim, "context_dim": self.context_dim,
                "flow_steps": self.flow_steps, "flow_kind": self.flow_kind,
                "image_dims": list(self.image_dims), "hidden": list(self.hidden)}

    @staticmethod
    def from_dict(d: dict) -> "ModelConfig":
        return ModelConfig(latent_dim=int(d["latent_dim"]),
                           context_dim=int(d["context_dim"]),
                           flow_steps=int(d["flow_steps"]),
                           flow_kind=str(d["flow_kind"]),
                           image_dims=tuple(d["image_dims"]),
                           hidden=tuple(d["hidden"]))


@dataclass
class EncoderOutput:
    mu: Tensor
    log_sigma: Tensor
    context: Context


@dataclass
class ModelBundle:
    encoder: MLPParams
    prior: MLPParams
    decoder: MLPParams
    steps: list = field(default_factory=list)
    config: ModelConfig = field(default_factory=ModelConfig)

    def chain(self) -> FlowChain:
        return FlowChain(self.steps, self.config.flow_kind)

    def named_parameters(self):
        """Fixed, documented ordering; checkpoints and the optimizer rely
        on it."""
        out = []
        for prefix, p in (("encoder", self.encoder), ("prior", self.prior),
                          ("decoder", self.decoder)):
            out.extend(_mlp_named(prefix, p))
        for k, step in enumerate(self.steps):
            if isinstance(step, PlanarStep):
                out.extend(_mlp_named(f"flow.{k}.cond", step.conditioner))
            else:
                out.extend(_mlp_named(f"flow.{k}.act", step.act_conditioner))
                out.extend(_mlp_named(f"flow.{k}.lin", step.linear_conditioner))
                out.extend(_mlp_named(f"flow.{k}.coup", step.coupling_conditioner))
        return out

    def parameters(self):
        return [t for _, t in self.named_parameters()]


def _mlp_named(prefix: str, params: MLPParams):
    out = []
    for i, (w, b) in enumerate(params.layers):
        out.append((f"{prefix}.{i}.weight", w))
        out.append((f"{prefix}.{i}.bias", b))
    return out


def _identity_start(params: MLPParams) -> MLPParams:
    """Zero the conditioner's output layer so the glow step begins as the
    identity map (scale 1, unit linear, zero shift, zero log-det); every
    glow sub-map keeps a nonzero gradient there, so the step engages as
    soon as the optimizer moves the layer. Starting from a random warp
    instead makes early training first undo the warp, which destabilizes
    runs with many steps."""
    w, b = params.layers[-1]
    w.data = np.zeros_like(w.data)
    b.data = np.zeros_like(b.data)
    return params


def build_model(config: ModelConfig, rng: np.random.Generator) -> ModelBundle:
    P = config.n_pixels
    L = config.latent_dim
    H = config.context_dim
    hid = list(config.hidden)

    encoder = init_mlp([2 * P] + hid + [2 * L + H], rng)
    prior_net = init_mlp([P] + hid + [2 * L], rng)
    decoder = init_mlp([P + L] + hid + [P], rng)

    steps = []
    for _ in range(config.flow_steps):
        if config.flow_kind == "planar":
            cond = init_mlp([H, 8, 8, 2 * L + 1], rng)
            # zero only the u head: u = 0 already makes the step the
            # identity, and the live w/b rows keep u's gradient nonzero
            # from the first update (a fully zeroed layer is a stationary
            # point, since the step gates everything through u * tanh).
            cond.layers[-1][0].data[:L, :] = 0.0
            steps.append(PlanarStep(cond, L))
        else:
            n_a = (L + 1) // 2
            act = _identity_start(init_mlp([H, 8, 8, 2 * L], rng))
            lin = _identity_start(init_mlp([H, 8, 8, L * L], rng))
            coup = _identity_start(init_mlp([L - n_a + H, 8, 8, 2 * n_a], rng))
            steps.append(GlowStep(act, lin, coup, L))
    return ModelBundle(encoder, prior_net, decoder, steps, config)


def _flat_image(config: ModelConfig, x, what: str) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape != config.image_dims:
        raise ShapeError(f"{what} shape {x.shape}, expected {config.image_dims}")
    return x.ravel()


def encode(b: ModelBundle, x, s) -> EncoderOutput:
    """Posterior parameters and context from an (image, mask) pair."""
    xv = _flat_image(b.config, x, "image")
    sv = _flat_image(b.config, s, "mask")
    out = mlp_forward(b.encoder, Tensor(np.concatenate([xv, sv])))
    L = b.config.latent_dim
    H = b.config.context_dim
    return EncoderOutput(mu=nc.segment(out, 0, L),
                         log_sigma=nc.segment(out, L, 2 * L),
                         context=Context(nc.segment(out, 2 * L, 2 * L + H)))


def prior(b: ModelBundle, x) -> DiagGaussian:
    """Image-conditioned Gaussian used on the sampling path."""
    xv = _flat_image(b.config, x, "image")
    out = mlp_forward(b.prior, Tensor(xv))
    L = b.config.latent_dim
    return DiagGaussian(nc.segment(out, 0, L), nc.segment(out, L, 2 * L))


def decode(b: ModelBundle, z: Tensor, x) -> Tensor:
    """Per-pixel logits for the mask given a latent and the image."""
    xv = _flat_image(b.config, x, "image")
    z = z if isinstance(z, Tensor) else Tensor(z)
    if z.shape != (b.config.latent_dim,):
        raise ShapeError(f"z shape {z.shape}, expected ({b.config.latent_dim},)")
    return mlp_forward(b.decoder, nc.concat([Tensor(xv), z]))
