"""Built-in verification suites, runnable from the CLI without test
infrastructure: gradient checks, Jacobian-determinant oracles, glow
round-trips, and a change-of-variables mass check for planar chains.

The planar inverter here is numeric (monotone scalar root-find per point);
planar steps deliberately have no closed-form inverse in the flows module.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np

from . import flows
from . import tensor as nc
from .flows import Context, FlowChain, PlanarStep
from .mlp import init_mlp
from .nets import ModelConfig, build_model
from .objective import cflow_loss
from .tensor import Tape, Tensor


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str


def _fd_grad(f, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    g = np.zeros_like(x)
    flat_x = x.ravel()
    flat_g = g.ravel()
    for i in range(flat_x.size):
        keep = flat_x[i]
        flat_x[i] = keep + h
        hi = f()
        flat_x[i] = keep - h
        lo = f()
        flat_x[i] = keep
        flat_g[i] = (hi - lo) / (2.0 * h)
    return g


def _fd_jacobian(f, x: np.ndarray, h: float = 1e-4) -> np.ndarray:
    """Richardson-extrapolated central differences: steps h and h/2 combine
    to cancel the O(h^2) truncation term, which single-step differences
    cannot push below roundoff on stiff chains."""
    def plain(step):
        cols = []
        for i in range(x.size):
            d = np.zeros_like(x)
            d[i] = step
            cols.append((f(x + d) - f(x - d)) / (2.0 * step))
        return np.stack(cols, axis=1)

    return (4.0 * plain(h / 2.0) - plain(h)) / 3.0


def _rel_err(a: np.ndarray, b: np.ndarray) -> float:
    scale = max(1.0, float(np.abs(a).max(initial=0.0)),
                float(np.abs(b).max(initial=0.0)))
    return float(np.abs(a - b).max(initial=0.0)) / scale


def _wake_flows(bundle, rng: np.random.Generator):
    """Fresh models start with identity flow steps (zeroed conditioner
    output rows), which would make these checks vacuous. Redraw the zeroed
    rows the way init_mlp would so the chains are generic; biases stay
    zero as everywhere else."""
    for name, p in bundle.named_parameters():
        if (name.startswith("flow.") and name.endswith(".weight")
                and p.data.ndim == 2):
            dead = ~p.data.any(axis=1)
            if dead.any():
                p.data[dead] = rng.normal(
                    0.0, 1.0 / np.sqrt(p.data.shape[1]),
                    size=(int(dead.sum()), p.data.shape[1]))
    return bundle


# ------------------------------------------------------------- suite 1

def check_gradients(rng=None) -> CheckResult:
    """End-to-end loss gradients vs central differences at toy dims."""
    rng = np.random.default_rng(0 if rng is None else rng)
    worst = 0.0
    for kind, steps in (("planar", 2), ("glow", 2), ("none", 0)):
        cfg = ModelConfig(latent_dim=4, context_dim=8, flow_steps=steps,
                          flow_kind=kind, image_dims=(6, 6), hidden=(12, 12))
        bundle = _wake_flows(build_model(cfg, rng), rng)
        x = rng.uniform(0.0, 1.0, size=(6, 6))
        s = (rng.uniform(size=(6, 6)) > 0.6).astype(np.uint8)
        eps = rng.standard_normal(4)

        params = bundle.parameters()
        tape = Tape()
        for p in params:
            tape.watch(p)
        tape.backward(cflow_loss(bundle, x, s, eps).total)
        grads = [p.grad.copy() for p in params]
        for p in params:
            p.tape = None
            p.grad = None

        def loss():
            return cflow_loss(bundle, x, s, eps).total.item()

        for p, g in zip(params, grads):
            flat = p.data.ravel()
            picks = rng.choice(flat.size, size=min(4, flat.size), replace=False)
            for i in picks:
                keep = flat[i]
                flat[i] = keep + 1e-5
                hi = loss()
                flat[i] = keep - 1e-5
                lo = loss()
                flat[i] = keep
                fd = (hi - lo) / 2e-5
                scale = max(1.0, abs(fd), abs(g.ravel()[i]))
                worst = max(worst, abs(fd - g.ravel()[i]) / scale)
    ok = worst < 1e-4
    return CheckResult("gradient-check", ok, f"worst relative error {worst:.2e}")


# ------------------------------------------------------------- suite 2

def check_jacobians(rng=None, trials: int = 20) -> CheckResult:
    """Analytic log-dets vs numerically differentiated Jacobians, L=6."""
    rng = np.random.default_rng(1 if rng is None else rng)
    L, H = 6, 8
    worst = 0.0
    for _ in range(trials):
        cfg = ModelConfig(latent_dim=L, context_dim=H, flow_steps=2,
                          flow_kind=("planar", "glow")[int(rng.integers(2))],
                          image_dims=(4, 4), hidden=(8,))
        bundle = _wake_flows(build_model(cfg, rng), rng)
        chain = bundle.chain()
        ctx = Context(Tensor(rng.normal(size=H)))
        z0 = rng.normal(size=L)

        def f(z):
            return flows.chain_forward(chain, Tensor(z), ctx)[0].data

        sign, ref = np.linalg.slogdet(_fd_jacobian(f, z0))
        got = flows.chain_forward(chain, Tensor(z0), ctx)[1].item()
        if sign != 1.0:
            return CheckResult("jacobian-oracle", False,
                               "negative determinant sign")
        worst = max(worst, abs(got - ref))
    ok = worst < 1e-6
    return CheckResult("jacobian-oracle", ok, f"worst |logdet error| {worst:.2e}")


# ------------------------------------------------------------- suite 3

def check_round_trip(rng=None, trials: int = 200) -> CheckResult:
    """glow_inverse(glow_forward(z)) recovers z."""
    rng = np.random.default_rng(2 if rng is None else rng)
    L, H = 6, 8
    cfg = ModelConfig(latent_dim=L, context_dim=H, flow_steps=4,
                      flow_kind="glow", image_dims=(4, 4), hidden=(8,))
    bundle = _wake_flows(build_model(cfg, rng), rng)
    chain = bundle.chain()
    worst = 0.0
    for _ in range(trials):
        ctx = Context(Tensor(rng.normal(size=H)))
        z = rng.normal(scale=2.0, size=L)
        z_out, _ = flows.chain_forward(chain, Tensor(z), ctx)
        back = flows.chain_inverse(chain, z_out.data, ctx)
        worst = max(worst, float(np.abs(back - z).max()))
    ok = worst < 1e-9
    return CheckResult("round-trip", ok, f"worst round-trip error {worst:.2e}")


# ------------------------------------------------------------- suite 4

def invert_planar_chain(chain: FlowChain, ctx: Context, pts: np.ndarray):
    """Numeric inverse of a planar chain on an (N, L) batch of outputs.

    Returns (z0, total_logdet) with each step's logdet evaluated at that
    step's input, as in the forward direction. Solves the monotone scalar
    equation t + (w.u_hat) tanh(t + b) = w.z' per point by bisection.
    """
    z = np.asarray(pts, dtype=np.float64)
    total = np.zeros(z.shape[0])
    for step in reversed(chain.steps):
        u_hat, w, b = (v.data for v in flows.planar_coeffs(step, ctx))
        b = float(b)
        wu = float(w @ u_hat)
        wz_out = z @ w
        lo = wz_out - abs(wu) - 1e-9
        hi = wz_out + abs(wu) + 1e-9
        for _ in range(90):
            mid = 0.5 * (lo + hi)
            g = mid + wu * np.tanh(mid + b) - wz_out
            above = g < 0.0
            lo = np.where(above, mid, lo)
            hi = np.where(above, hi, mid)
        t = 0.5 * (lo + hi)
        h = np.tanh(t + b)
        z = z - np.outer(h, u_hat)
        total += np.log(np.abs(1.0 + (1.0 - h * h) * wu))
    return z, total


def check_change_of_variables(rng=None, lo: float = -10.0, hi: float = 10.0,
                              step: float = 0.05) -> CheckResult:
    """Pushing a 2-D standard normal through a random planar chain must
    conserve probability mass."""
    rng = np.random.default_rng(3 if rng is None else rng)
    L, H, K = 2, 8, 4
    steps = [PlanarStep(init_mlp([H, 8, 8, 2 * L + 1], rng), L)
             for _ in range(K)]
    chain = FlowChain(steps, "planar")
    ctx = Context(Tensor(rng.normal(size=H)))

    axis = lo + step * np.arange(int(round((hi - lo) / step)) + 1)
    gx, gy = np.meshgrid(axis, axis, indexing="ij")
    pts = np.stack([gx.ravel(), gy.ravel()], axis=1)

    z0, logdet = invert_planar_chain(chain, ctx, pts)

    # inverter sanity on a subsample: forward(z0) must reproduce the grid
    idx = rng.choice(pts.shape[0], size=50, replace=False)
    for i in idx:
        fwd, _ = flows.chain_forward(chain, Tensor(z0[i]), ctx)
        if np.abs(fwd.data - pts[i]).max() > 1e-8:
            return CheckResult("change-of-variables", False,
                               "numeric inverse disagrees with forward map")

    base = -math.log(2.0 * math.pi) - 0.5 * (z0 ** 2).sum(axis=1)
    dens = np.exp(base - logdet).reshape(gx.shape)
    trapezoid = getattr(np, "trapezoid", np.trapz)
    mass = trapezoid(trapezoid(dens, axis, axis=1), axis, axis=0)
    ok = abs(mass - 1.0) < 0.02
    return CheckResult("change-of-variables", bool(ok),
                       f"pushforward mass {mass:.5f}")


SUITES = (check_gradients, check_jacobians, check_round_trip,
          check_change_of_variables)


def run_selfcheck():
    """Runs every suite; returns (all_passed, results)."""
    results = []
    for suite in SUITES:
        start = time.perf_counter()
        res = suite()
        took = time.perf_counter() - start
        results.append(CheckResult(res.name, res.passed,
                                   f"{res.detail} ({took:.1f}s)"))
    return all(r.passed for r in results), results
