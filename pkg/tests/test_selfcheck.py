import numpy as np

from cflow import flows, selfcheck
from cflow.flows import Context, FlowChain, PlanarStep, chain_forward
from cflow.mlp import init_mlp
from cflow.tensor import Tensor


def test_all_suites_pass_on_fresh_build():
    ok, results = selfcheck.run_selfcheck()
    assert ok
    assert [r.name for r in results] == ["gradient-check", "jacobian-oracle",
                                         "round-trip", "change-of-variables"]
    assert all(r.passed for r in results)


def test_fault_injection_breaks_jacobian_suite(monkeypatch):
    # negative control: a corrupted logdet must be caught
    real = flows.planar_forward

    def corrupted(step, z, ctx):
        z_out, logdet = real(step, z, ctx)
        from cflow import tensor as nc
        return z_out, nc.add(logdet, 0.01)

    monkeypatch.setattr(flows, "planar_forward", corrupted)
    res = selfcheck.check_jacobians(trials=6)
    assert not res.passed


def test_fault_injection_breaks_round_trip(monkeypatch):
    real = flows.glow_inverse

    def corrupted(step, z_out, ctx):
        return real(step, z_out, ctx) + 1e-6

    monkeypatch.setattr(flows, "glow_inverse", corrupted)
    res = selfcheck.check_round_trip(trials=10)
    assert not res.passed


def test_planar_inverter_agrees_with_forward():
    rng = np.random.default_rng(3)
    L, H = 3, 6
    steps = [PlanarStep(init_mlp([H, 8, 8, 2 * L + 1], rng), L)
             for _ in range(4)]
    chain = FlowChain(steps, "planar")
    ctx = Context(Tensor(rng.normal(size=H)))

    z0 = rng.normal(size=(40, L))
    outs = np.empty_like(z0)
    logdets = np.empty(40)
    for i in range(40):
        z_out, ld = chain_forward(chain, Tensor(z0[i]), ctx)
        outs[i] = z_out.data
        logdets[i] = ld.item()

    back, back_ld = selfcheck.invert_planar_chain(chain, ctx, outs)
    assert np.abs(back - z0).max() < 1e-10
    np.testing.assert_allclose(back_ld, logdets, atol=1e-10)
