import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cflow.metrics import (MetricsReport, dice, estimate_cll, ged_squared,
                           iou_distance)
from cflow.nets import ModelConfig, build_model, decode, prior
from cflow.objective import recon_loglik
from cflow.tensor import ShapeError, Tensor


def brute_ged(raters, samples):
    """Independent oracle: every ordered pair, naive pixel counting."""
    def d(a, b):
        a, b = np.asarray(a, bool), np.asarray(b, bool)
        union = (a | b).sum()
        return 0.0 if union == 0 else 1.0 - (a & b).sum() / union

    R, M = list(raters), list(samples)
    cross = sum(d(r, m) for r in R for m in M) / (len(R) * len(M))
    rr = sum(d(a, b) for a in R for b in R) / len(R) ** 2
    mm = sum(d(a, b) for a in M for b in M) / len(M) ** 2
    return 2.0 * cross - rr - mm


def blocks(*specs, shape=(6, 6)):
    out = []
    for (r0, r1, c0, c1) in specs:
        m = np.zeros(shape, dtype=np.uint8)
        m[r0:r1, c0:c1] = 1
        out.append(m)
    return out


# ------------------------------------------------------------- distances

def test_iou_distance_basic_cases():
    a, = blocks((0, 2, 0, 2))
    assert iou_distance(a, a) == 0.0
    b, = blocks((3, 5, 3, 5))
    assert iou_distance(a, b) == 1.0
    empty = np.zeros((6, 6), dtype=np.uint8)
    assert iou_distance(empty, empty) == 0.0
    assert iou_distance(a, empty) == 1.0


def test_iou_distance_shifted_block():
    # 2x2 blocks overlapping in 2 pixels: |i|=2, |u|=6
    a, b = blocks((0, 2, 0, 2), (0, 2, 1, 3))
    assert iou_distance(a, b) == pytest.approx(1 - 2 / 6, abs=1e-12)


def test_dice_basic_cases():
    a, = blocks((0, 2, 0, 2))
    assert dice(a, a) == 1.0
    b, = blocks((3, 5, 3, 5))
    assert dice(a, b) == 0.0
    empty = np.zeros((6, 6), dtype=np.uint8)
    assert dice(empty, empty) == 1.0
    # |a|=4, |b|=4, intersection 2
    c, d = blocks((0, 2, 0, 2), (0, 2, 1, 3))
    assert dice(c, d) == pytest.approx(0.5, abs=1e-12)


def test_mask_contracts():
    with pytest.raises(ShapeError):
        iou_distance(np.zeros((2, 2)), np.zeros((3, 3)))
    with pytest.raises(ValueError):
        dice(np.array([[0, 2]]), np.array([[0, 1]]))


# ------------------------------------------------------------- GED

def test_ged_point_masses():
    a, b = blocks((0, 2, 0, 2), (3, 5, 3, 5))
    assert ged_squared([a], [a]) == 0.0
    assert ged_squared([a], [b]) == pytest.approx(2.0, abs=1e-12)


def test_ged_matching_empirical_distributions():
    a, b = blocks((0, 2, 0, 2), (0, 3, 0, 3))
    assert ged_squared([a, b], [a, b]) == pytest.approx(0.0, abs=1e-12)


def test_ged_self_is_exactly_zero():
    rng = np.random.default_rng(0)
    masks = [rng.integers(0, 2, (5, 5)).astype(np.uint8) for _ in range(7)]
    assert ged_squared(masks, masks) == 0.0


def test_ged_is_symmetric():
    rng = np.random.default_rng(1)
    r = [rng.integers(0, 2, (4, 4)).astype(np.uint8) for _ in range(3)]
    m = [rng.integers(0, 2, (4, 4)).astype(np.uint8) for _ in range(5)]
    assert ged_squared(r, m) == pytest.approx(ged_squared(m, r), abs=1e-12)


@given(st.integers(0, 2 ** 32 - 1), st.integers(1, 16), st.integers(1, 16))
@settings(max_examples=30, deadline=None)
def test_ged_matches_brute_force(seed, n_r, n_m):
    rng = np.random.default_rng(seed)
    r = [rng.integers(0, 2, (4, 4)).astype(np.uint8) for _ in range(n_r)]
    m = [rng.integers(0, 2, (4, 4)).astype(np.uint8) for _ in range(n_m)]
    got = ged_squared(r, m)
    assert got == pytest.approx(brute_ged(r, m), abs=1e-12)
    assert -1e-12 <= got <= 2.0 + 1e-12


def test_ged_rejects_empty_and_ragged_sets():
    a, = blocks((0, 2, 0, 2))
    with pytest.raises(ValueError):
        ged_squared([], [a])
    with pytest.raises(ValueError):
        ged_squared([a], [])
    with pytest.raises(ShapeError):
        ged_squared([a, np.zeros((2, 2), dtype=np.uint8)], [a])


# ------------------------------------------------------------- CLL

def one_pixel_bundle(seed=0, decoder_scale=1.0):
    cfg = ModelConfig(latent_dim=1, context_dim=2, flow_steps=0,
                      flow_kind="none", image_dims=(1, 1), hidden=(8,))
    b = build_model(cfg, np.random.default_rng(seed))
    for name, t in b.named_parameters():
        if name.startswith("decoder"):
            t.data = t.data * decoder_scale
    return b


def test_cll_constant_decoder_equals_recon():
    b = one_pixel_bundle()
    # zero decoder: logits are exactly 0 regardless of z
    for name, t in b.named_parameters():
        if name.startswith("decoder"):
            t.data = np.zeros_like(t.data)
    x = np.array([[0.4]])
    s = np.array([[1]])
    got = estimate_cll(b, x, s, n_samples=32, rng_seed=5)
    ref = recon_loglik(Tensor(np.zeros(1)), s).item()
    assert got == pytest.approx(ref, abs=1e-12)


def test_cll_single_sample_matches_manual_draw():
    b = one_pixel_bundle(seed=3)
    x = np.array([[0.7]])
    s = np.array([[0]])
    seed = 11
    got = estimate_cll(b, x, s, n_samples=1, rng_seed=seed)

    p = prior(b, x)
    z = p.mu.data + np.exp(p.log_sigma.data) * \
        np.random.default_rng(seed).standard_normal(1)
    ref = recon_loglik(decode(b, Tensor(z), x), s).item()
    assert got == pytest.approx(ref, abs=1e-12)


def test_cll_converges_to_quadrature_marginal():
    # weak decoder keeps the integrand gentle so both the Monte Carlo
    # error and the Jensen bias are far below the tolerance
    b = one_pixel_bundle(seed=4, decoder_scale=0.3)
    x = np.array([[0.2]])
    s = np.array([[1]])

    p = prior(b, x)
    mu, sigma = p.mu.data[0], float(np.exp(p.log_sigma.data[0]))
    grid = np.linspace(mu - 8 * sigma, mu + 8 * sigma, 4001)
    dens = np.exp(-0.5 * ((grid - mu) / sigma) ** 2) / (sigma * math.sqrt(2 * math.pi))
    lik = np.array([math.exp(recon_loglik(
        decode(b, Tensor(np.array([z])), x), s).item()) for z in grid])
    trapezoid = getattr(np, "trapezoid", np.trapz)
    exact = math.log(trapezoid(dens * lik, grid))

    got = estimate_cll(b, x, s, n_samples=20_000, rng_seed=6)
    assert got == pytest.approx(exact, abs=2e-3)


def test_cll_grows_with_sample_count_on_average():
    # logsumexp average is a lower-biased estimate; the bias shrinks as n
    # grows, so bigger n should not score worse on average
    b = one_pixel_bundle(seed=7, decoder_scale=4.0)
    x = np.array([[0.9]])
    s = np.array([[1]])
    small = np.array([estimate_cll(b, x, s, 8, rng_seed=100 + i)
                      for i in range(50)])
    big = np.array([estimate_cll(b, x, s, 64, rng_seed=200 + i)
                    for i in range(50)])
    gap = big.mean() - small.mean()
    se = math.sqrt(big.var(ddof=1) / 50 + small.var(ddof=1) / 50)
    assert gap > -3 * se


def test_cll_rejects_bad_sample_count():
    with pytest.raises(ValueError):
        estimate_cll(one_pixel_bundle(), np.zeros((1, 1)), np.zeros((1, 1)), 0)


# ------------------------------------------------------------- report

def test_report_json_round_trip_and_table():
    rep = MetricsReport(model_id="m", mode="all_raters", ged=0.25,
                        neg_cll=52.0, dice=0.8, n_samples=16, seed=3,
                        sample_count=2,
                        per_image=[{"image": 0, "ged": 0.2, "neg_cll": 51.0,
                                    "dice": 0.9},
                                   {"image": 1, "ged": 0.3, "neg_cll": 53.0,
                                    "dice": 0.7}])
    back = json.loads(rep.to_json())
    assert back["model_id"] == "m"
    assert back["ged"] == 0.25
    assert len(back["per_image"]) == 2

    table = rep.to_table().splitlines()
    assert table[0] == "image\tged\tneg_cll\tdice"
    assert table[-1].startswith("mean\t0.250000")
    assert len(table) == 4


def test_report_validates_ranges_and_mode():
    kw = dict(model_id="m", mode="all_raters", neg_cll=0.0, dice=0.5,
              n_samples=1, seed=0, sample_count=0)
    with pytest.raises(ValueError):
        MetricsReport(ged=2.5, **kw)
    with pytest.raises(ValueError):
        MetricsReport(ged=0.5, **{**kw, "dice": -0.2})
    with pytest.raises(ValueError):
        MetricsReport(ged=0.5, **{**kw, "mode": "both"})
