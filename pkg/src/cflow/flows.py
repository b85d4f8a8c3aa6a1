"""Conditional normalizing flows over the latent space.

Every free parameter of every flow step is produced by a small conditioner
MLP from a context vector c, so the transform (and its Jacobian) depends on
the input image through c. Two step families:

  * planar: z' = z + u_hat * tanh(w.z + b), rank-one update, cheap but
    not analytically invertible;
  * glow: actnorm -> invertible linear (LU-parameterized) -> affine
    coupling, each part with triangular or diagonal Jacobian structure,
    exactly invertible.

Chains are homogeneous: all planar or all glow.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as nc
from .tensor import ShapeError, Tensor
from .mlp import MLPParams, mlp_forward

_W_NORM_FLOOR = 1e-12

# softplus(_KAPPA) = 1, so the invertibility correction below vanishes at
# u = 0 instead of kicking the step away from the identity.
_KAPPA = float(np.log(np.e - 1.0))


@dataclass
class Context:
    """Conditioning vector shared by all steps of a chain."""

    c: Tensor

    def __post_init__(self):
        if not isinstance(self.c, Tensor):
            self.c = Tensor(self.c)
        if self.c.data.ndim != 1:
            raise ShapeError(f"context must be a vector, got shape {self.c.shape}")

    @property
    def dim(self) -> int:
        return self.c.size


@dataclass
class PlanarStep:
    """Planar residual step; conditioner emits (u, w, b) of size 2L+1."""

    conditioner: MLPParams
    latent_dim: int

    def __post_init__(self):
        want = 2 * self.latent_dim + 1
        if self.conditioner.out_dim != want:
            raise ShapeError(f"planar conditioner emits {self.conditioner.out_dim} "
                             f"values, expected {want}")


def planar_coeffs(step: PlanarStep, ctx: Context):
    """(u_hat, w, b) for a given context, as tensors.

    u is reparameterized to u_hat so that w.u_hat = softplus(w.u + kappa)
    - 1 > -1, which keeps 1 + u_hat.psi(z) bounded away from sign flips
    and the step invertible. The shift kappa = log(e - 1) makes the
    correction vanish smoothly at u = 0 (the unshifted form jumps by
    ~0.31 w/||w||^2 there, which both breaks identity-initialized steps
    and blows up as ||w|| -> 0). An exactly zero u head skips the
    correction so a fresh step is the identity bitwise; when ||w||^2
    underflows the correction is a 0/0 with identity limit, so u passes
    through unchanged there as well.
    """
    L = step.latent_dim
    out = mlp_forward(step.conditioner, ctx.c)
    u = nc.segment(out, 0, L)
    w = nc.segment(out, L, 2 * L)
    b = nc.reshape(nc.segment(out, 2 * L, 2 * L + 1), ())

    wnorm2 = nc.dot(w, w)
    if float(wnorm2.data) < _W_NORM_FLOOR or not u.data.any():
        u_hat = u
    else:
        wu = nc.dot(w, u)
        coef = nc.div(nc.sub(nc.softplus(nc.add(wu, _KAPPA)),
                             nc.add(wu, 1.0)), wnorm2)
        u_hat = nc.add(u, nc.mul(coef, w))
    return u_hat, w, b


def planar_forward(step: PlanarStep, z: Tensor, ctx: Context):
    """Returns (z', log|det J|) for one planar step."""
    L = step.latent_dim
    if z.shape != (L,):
        raise ShapeError(f"z shape {z.shape}, expected ({L},)")
    u_hat, w, b = planar_coeffs(step, ctx)
    a = nc.add(nc.dot(w, z), b)
    h = nc.tanh(a)
    z_out = nc.add(z, nc.mul(u_hat, h))
    h_prime = nc.sub(1.0, nc.mul(h, h))
    logdet = nc.log(nc.absolute(nc.add(1.0, nc.mul(h_prime, nc.dot(w, u_hat)))))
    return z_out, logdet


@dataclass
class GlowStep:
    """actnorm + LU-parameterized linear + affine coupling, all conditional.

    Conditioner output sizes for latent dim L (L >= 2):
      act:      2L          (log s, b)
      linear:   L*L         (strict lower, strict upper, log diag)
      coupling: 2*ceil(L/2) (log r, t), input is (z_b, c)
    """

    act_conditioner: MLPParams
    linear_conditioner: MLPParams
    coupling_conditioner: MLPParams
    latent_dim: int

    def __post_init__(self):
        L = self.latent_dim
        if L < 2:
            raise ShapeError("glow steps need latent_dim >= 2 to split")
        n_a = (L + 1) // 2
        checks = [(self.act_conditioner, 2 * L),
                  (self.linear_conditioner, L * L),
                  (self.coupling_conditioner, 2 * n_a)]
        for params, want in checks:
            if params.out_dim != want:
                raise ShapeError(f"conditioner emits {params.out_dim} values, "
                                 f"expected {want}")
        self._tril_idx = _strict_tril_flat(L)
        self._triu_idx = _strict_triu_flat(L)
        self._diag_idx = np.arange(L) * (L + 1)

    @property
    def split_a(self) -> int:
        return (self.latent_dim + 1) // 2


def _strict_tril_flat(n: int) -> np.ndarray:
    r, c = np.tril_indices(n, k=-1)
    return r * n + c


def _strict_triu_flat(n: int) -> np.ndarray:
    r, c = np.triu_indices(n, k=1)
    return r * n + c


def _glow_pieces(step: GlowStep, ctx: Context):
    """Evaluates the three conditioners; coupling params need z_b so only
    the first two are computed here."""
    L = step.latent_dim
    act = mlp_forward(step.act_conditioner, ctx.c)
    log_s = nc.segment(act, 0, L)
    bias = nc.segment(act, L, 2 * L)

    lin = mlp_forward(step.linear_conditioner, ctx.c)
    n_off = L * (L - 1) // 2
    low = nc.segment(lin, 0, n_off)
    upp = nc.segment(lin, n_off, 2 * n_off)
    log_d = nc.segment(lin, 2 * n_off, 2 * n_off + L)

    eye = Tensor(np.eye(L))
    l_mat = nc.add(nc.put(low, (L, L), step._tril_idx), eye)
    u_mat = nc.add(nc.put(upp, (L, L), step._triu_idx),
                   nc.put(nc.exp(log_d), (L, L), step._diag_idx))
    return log_s, bias, l_mat, u_mat, log_d


def _coupling_params(step: GlowStep, z_b: Tensor, ctx: Context):
    n_a = step.split_a
    h = mlp_forward(step.coupling_conditioner, nc.concat([z_b, ctx.c]))
    log_r = nc.segment(h, 0, n_a)
    t = nc.segment(h, n_a, 2 * n_a)
    return log_r, t


def glow_forward(step: GlowStep, z: Tensor, ctx: Context):
    """Returns (z', log|det J|) for one glow step."""
    L = step.latent_dim
    if z.shape != (L,):
        raise ShapeError(f"z shape {z.shape}, expected ({L},)")
    log_s, bias, l_mat, u_mat, log_d = _glow_pieces(step, ctx)

    z1 = nc.add(nc.mul(nc.exp(log_s), z), bias)
    logdet = nc.reduce_sum(log_s)

    w = nc.matmul(l_mat, u_mat)
    z2 = nc.matvec(w, z1)
    logdet = nc.add(logdet, nc.reduce_sum(log_d))

    n_a = step.split_a
    z_a = nc.segment(z2, 0, n_a)
    z_b = nc.segment(z2, n_a, L)
    log_r, t = _coupling_params(step, z_b, ctx)
    z_a2 = nc.add(nc.mul(nc.exp(log_r), z_a), t)
    z_out = nc.concat([z_a2, z_b])
    logdet = nc.add(logdet, nc.reduce_sum(log_r))
    return z_out, logdet


def glow_inverse(step: GlowStep, z_out: np.ndarray, ctx: Context) -> np.ndarray:
    """Exact inverse of glow_forward on plain arrays (no gradients)."""
    L = step.latent_dim
    z_out = np.asarray(z_out, dtype=np.float64)
    if z_out.shape != (L,):
        raise ShapeError(f"z shape {z_out.shape}, expected ({L},)")
    log_s, bias, l_mat, u_mat, _ = _glow_pieces(step, ctx)

    n_a = step.split_a
    z_a2 = z_out[:n_a]
    z_b = z_out[n_a:]
    log_r, t = _coupling_params(step, Tensor(z_b), ctx)
    z_a = (z_a2 - t.data) / np.exp(log_r.data)
    z2 = np.concatenate([z_a, z_b])

    # W = L U with unit lower L and nonsingular upper U: two triangular solves.
    y = _solve_unit_lower(l_mat.data, z2)
    z1 = _solve_upper(u_mat.data, y)

    return (z1 - bias.data) / np.exp(log_s.data)


def _solve_unit_lower(l_mat: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    n = rhs.size
    x = np.empty(n)
    for i in range(n):
        x[i] = rhs[i] - l_mat[i, :i] @ x[:i]
    return x


def _solve_upper(u_mat: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    n = rhs.size
    x = np.empty(n)
    for i in range(n - 1, -1, -1):
        x[i] = (rhs[i] - u_mat[i, i + 1:] @ x[i + 1:]) / u_mat[i, i]
    return x


@dataclass
class FlowChain:
    """Homogeneous sequence of flow steps ('planar', 'glow', or empty)."""

    steps: list
    kind: str = "none"

    def __post_init__(self):
        if self.kind not in ("planar", "glow", "none"):
            raise ValueError(f"unknown flow kind {self.kind!r}")
        if self.kind == "none" and self.steps:
            raise ValueError("kind 'none' requires an empty chain")
        want = {"planar": PlanarStep, "glow": GlowStep}.get(self.kind)
        for s in self.steps:
            if not isinstance(s, want):
                raise ValueError(f"step {type(s).__name__} in a {self.kind} chain")

    def __len__(self) -> int:
        return len(self.steps)


def chain_forward(chain: FlowChain, z0: Tensor, ctx: Context):
    """Applies every step in order; returns (z_K, sum of per-step logdets).

    An empty chain returns (z0, 0) so downstream code needs no special case.
    """
    z = z0
    total = Tensor(0.0)
    fwd = planar_forward if chain.kind == "planar" else glow_forward
    for step in chain.steps:
        z, ld = fwd(step, z, ctx)
        total = nc.add(total, ld)
    return z, total


def chain_inverse(chain: FlowChain, z_out: np.ndarray, ctx: Context) -> np.ndarray:
    """Inverts a glow chain on plain arrays. Planar steps have no closed-form
    inverse; asking for one is a usage error."""
    if chain.kind == "planar":
        raise ValueError("planar chains are not analytically invertible")
    z = np.asarray(z_out, dtype=np.float64)
    for step in reversed(chain.steps):
        z = glow_inverse(step, z, ctx)
    return z
