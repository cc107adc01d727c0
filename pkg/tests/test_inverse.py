"""Tests for blind recovery of manifolds from heat-trace samples.

Expected peel families are analytic. In g-space, g(t) = (4 pi t)^1.5 y - vol,
a torus shell of squared length q with n vectors contributes the family
(p=0, r=q, c=vol*n); a rotation axis of length l and order k leads with
(p=1, r=(l/k)^2, c=4 pi l); a glide plane of area A whose translation is
half an axis of length l leads with (p=1/2, r=(l/2)^2, c=2 sqrt(pi) A).
These closed forms are the oracle for the frozen assertions below.
"""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from flatspec.geometry import descriptor, is_isometric, scale, volume
from flatspec.heat_trace import trace_grid
from flatspec.inverse import (
    ReconstructionError,
    classify_orientability,
    eigenvalues_from_trace,
    extract_volume,
    peel_exponent,
    peel_from_trace,
    reconstruct,
)
from flatspec.geometry import ValidationError
from flatspec.oracle import spectrum

CUBIC = descriptor("M1", basis=np.eye(3))


def test_extract_volume_matches_geometry():
    cases = [
        CUBIC,
        descriptor("M1", basis=[[1.0, 0, 0], [0.15, 1.1, 0], [0.1, 0.2, 1.25]]),
        descriptor("M5", l1=1.2, l=0.85),
        descriptor("N2", l1=1.05, l2=0.95, angle_rad=1.15, height=1.2),
        descriptor("N4", l1=0.95, l2=1.21, l3=1.3),
    ]
    for d in cases:
        got = extract_volume(trace_grid(d))
        assert got == pytest.approx(volume(d), rel=1e-8)


def test_extract_volume_rejects_nonpositive():
    with pytest.raises(ReconstructionError):
        extract_volume((np.array([0.5]), np.array([-1.0]), np.array([0.0])))


def test_cubic_torus_shell_families():
    # Z^3 has 6 vectors of squared norm 1 and 12 of squared norm 2
    state = peel_from_trace(trace_grid(CUBIC))
    assert state.volume == pytest.approx(1.0, rel=1e-10)
    assert np.all(state.floor > 0.0)
    state, first = peel_exponent(state)
    assert first.p == 0.0
    assert first.r == pytest.approx(1.0, rel=1e-5)
    assert first.c == pytest.approx(6.0, rel=1e-4)
    state, second = peel_exponent(state)
    # onset-window quality only; the reconstruction refines jointly later
    assert second.p == 0.0
    assert second.r == pytest.approx(2.0, rel=1e-2)
    assert second.c == pytest.approx(12.0, rel=2e-2)
    rates = [r for r, _, _ in state.identified]
    assert rates == sorted(rates)


def test_half_turn_ladder_family():
    d = descriptor("M2", l1=1.3, l2=1.0, l3=1.0, angle_rad=math.pi / 2)
    _, fam = peel_exponent(peel_from_trace(trace_grid(d)))
    assert fam.p == 1.0
    assert fam.r == pytest.approx(1.3**2 / 4.0, rel=1e-6)
    assert fam.c == pytest.approx(4.0 * math.pi * 1.3, rel=1e-5)


def test_glide_family_has_half_power():
    d = descriptor("N1", l1=1.1, l2=0.9, angle_rad=math.pi / 2, l3=0.8)
    _, fam = peel_exponent(peel_from_trace(trace_grid(d)))
    assert fam.p == 0.5
    assert fam.r == pytest.approx((1.1 / 2.0) ** 2, rel=1e-5)
    assert fam.c == pytest.approx(2.0 * math.sqrt(math.pi) * 1.1 * 0.9, rel=1e-5)


def test_classify_orientability_sample_classes():
    orientable = [CUBIC, descriptor("M3", l1=0.9, l=1.1)]
    nonorientable = [
        descriptor("N1", l1=1.0, l2=1.1, angle_rad=1.0, l3=0.8),
        descriptor("N4", l1=0.95, l2=1.21, l3=1.3),
    ]
    for d in orientable:
        assert classify_orientability(trace_grid(d))
    for d in nonorientable:
        assert not classify_orientability(trace_grid(d))


def test_round_trip_quarter_turn_doubled_axis():
    d = descriptor("M4", l1=2.0, l=1.0)
    got = reconstruct(trace_grid(d))
    assert got.class_name == "M4"
    assert is_isometric(got, d, rtol=1e-3)


def test_round_trip_triple_half_turn():
    d = descriptor("M6", l1=1.0, l2=2.0, l3=3.0)
    got = reconstruct(trace_grid(d))
    assert got.class_name == "M6"
    assert is_isometric(got, d, rtol=1e-3)


def test_round_trip_first_amphidicosm_ordered_sides():
    # the three sides of this class are not interchangeable; the
    # reconstruction must return them in their structural roles
    d = descriptor("N3", l1=1.0, l2=2.0, l3=3.0)
    got = reconstruct(trace_grid(d))
    assert got.class_name == "N3"
    assert got.params["l1"] == pytest.approx(1.0, rel=1e-3)
    assert got.params["l2"] == pytest.approx(2.0, rel=1e-3)
    assert got.params["l3"] == pytest.approx(3.0, rel=1e-3)


def test_reconstruct_honors_hint():
    d = descriptor("M3", l1=0.9, l=1.1)
    got = reconstruct(trace_grid(d), hint="M3")
    assert got.class_name == "M3"
    assert is_isometric(got, d, rtol=1e-3)


def test_reconstruct_wrong_hint_fails():
    # cubic torus samples have no rotation ladder for a quarter turn to use
    with pytest.raises(ReconstructionError):
        reconstruct(trace_grid(CUBIC), hint="M4")


def test_reconstruct_unknown_hint():
    with pytest.raises(ValidationError):
        reconstruct(trace_grid(CUBIC), hint="M7")


def test_reconstruction_stable_under_sample_noise():
    d = descriptor("M4", l1=1.05, l=0.95)
    samples = trace_grid(d)
    clean = reconstruct(samples)
    rng = np.random.default_rng(7)
    noise = rng.uniform(-1e-10, 1e-10, samples.t.size)
    noisy = reconstruct((samples.t, samples.value + noise, samples.err + 1e-10))
    assert noisy.class_name == clean.class_name
    for key in ("l1", "l"):
        assert noisy.params[key] == pytest.approx(clean.params[key], rel=1e-4)


EIG_GRID = np.geomspace(0.03, 0.6, 120)


def test_eigenvalues_cubic_torus():
    lams, mults = eigenvalues_from_trace(trace_grid(CUBIC, EIG_GRID), 3)
    s = spectrum(CUBIC, 200.0)
    assert lams == pytest.approx(s.eigenvalues[:3], rel=1e-3)
    assert list(mults) == list(s.multiplicities[:3])


def test_eigenvalues_half_turn_space():
    d = descriptor("M2", l1=1.0, l2=1.0, l3=1.0, angle_rad=math.pi / 2)
    lams, mults = eigenvalues_from_trace(trace_grid(d, EIG_GRID), 3)
    s = spectrum(d, 200.0)
    assert lams == pytest.approx(s.eigenvalues[:3], rel=1e-3)
    assert list(mults) == list(s.multiplicities[:3])


def test_eigenvalues_synthetic_two_modes():
    t = np.geomspace(0.5, 12.0, 80)
    y = 1.0 + np.exp(-t) + 3.0 * np.exp(-2.0 * t)
    lams, mults = eigenvalues_from_trace((t, y, np.zeros_like(t)), 3)
    assert lams == pytest.approx([0.0, 1.0, 2.0], abs=1e-6)
    assert list(mults) == [1, 1, 3]


def test_eigenvalues_count_validation():
    t = np.geomspace(0.1, 1.0, 16)
    y = np.ones_like(t)
    with pytest.raises(ValueError):
        eigenvalues_from_trace((t, y, np.zeros_like(t)), 0)
    lams, mults = eigenvalues_from_trace((t, y, np.zeros_like(t)), 1)
    assert list(lams) == [0.0] and list(mults) == [1]


def test_eigenvalues_stop_at_resolution():
    # a short grid cannot resolve the third mode; fewer modes come back
    t = np.geomspace(2.0, 6.0, 24)
    y = 1.0 + np.exp(-t)
    lams, _ = eigenvalues_from_trace((t, y, np.zeros_like(t)), 5)
    assert lams.size < 5


@settings(max_examples=6, deadline=None)
@given(factor=st.floats(0.6, 1.7))
def test_volume_extraction_scales_cubically(factor):
    d = scale(descriptor("M4", l1=1.05, l=0.95), factor)
    got = extract_volume(trace_grid(d))
    assert got == pytest.approx(volume(d), rel=1e-8)
