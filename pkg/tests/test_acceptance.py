"""Acceptance gate: every primary capability at its stated tolerance.

Each test covers one numbered criterion and prints a single pass line when
it holds; tolerances and runtime budgets are asserted, never relaxed.
"""

import json
import math
import time
from itertools import combinations_with_replacement

import numpy as np

from flatspec.cli import main as cli_main
from flatspec.geometry import (
    CLASS_NAMES,
    descriptor,
    is_isometric,
    volume,
)
from flatspec.heat_trace import lattice_theta, theta1, trace, trace_grid, trace_with_bound
from flatspec.inverse import classify_orientability, extract_volume, reconstruct
from flatspec.isospec import m4_m6_pair, search_pairs
from flatspec.lattice import Lattice3, dual
from flatspec.oracle import partial_heat_sum, spectrum, trace_by_quadrature

FIXED = {
    "M1": dict(basis=[[1.0, 0.0, 0.0], [0.15, 1.1, 0.0], [0.1, 0.2, 1.25]]),
    "M2": dict(l1=0.8, l2=1.1, angle_rad=1.2, l3=1.05),
    "M3": dict(l1=0.9, l=1.1),
    "M4": dict(l1=1.05, l=0.95),
    "M5": dict(l1=1.2, l=0.85),
    "M6": dict(l1=0.9, l2=1.15, l3=1.05),
    "N1": dict(l1=1.0, l2=1.1, angle_rad=1.0, l3=0.8),
    "N2": dict(l1=1.05, l2=0.95, angle_rad=1.15, height=1.2),
    "N3": dict(l1=1.1, l2=0.9, l3=1.35),
    "N4": dict(l1=0.95, l2=1.21, l3=1.3),
}

ORIENTABLE = {name: name.startswith("M") for name in CLASS_NAMES}


def fixed(name):
    return descriptor(name, **FIXED[name])


def skew_basis(rng):
    """Random well-conditioned basis: lengths in [0.5, 2], angles in [pi/4, 3pi/4]."""
    l1, l2, l3 = (float(x) for x in rng.uniform(0.5, 2.0, 3))
    phi = float(rng.uniform(math.pi / 4, 3 * math.pi / 4))
    eta = float(rng.uniform(0.0, math.pi / 4))
    psi = float(rng.uniform(0.0, 2 * math.pi))
    return [
        [l1, 0.0, 0.0],
        [l2 * math.cos(phi), l2 * math.sin(phi), 0.0],
        [l3 * math.sin(eta) * math.cos(psi), l3 * math.sin(eta) * math.sin(psi), l3 * math.cos(eta)],
    ]


def random_params(rng, name):
    def L():
        return float(rng.uniform(0.5, 2.0))

    def A():
        return float(rng.uniform(math.pi / 4, 3 * math.pi / 4))

    if name == "M1":
        return dict(basis=skew_basis(rng))
    if name == "M2":
        return dict(l1=L(), l2=L(), l3=L(), angle_rad=A())
    if name in ("M3", "M4", "M5"):
        return dict(l1=L(), l=L())
    if name == "N1":
        return dict(l1=L(), l2=L(), angle_rad=A(), l3=L())
    if name == "N2":
        return dict(l1=L(), l2=L(), angle_rad=A(), height=L())
    return dict(l1=L(), l2=L(), l3=L())


def test_01_pair_family_traces_agree():
    start = time.monotonic()
    worst = 0.0
    for scale in (0.5, 1.0, 2.0):
        a, b = m4_m6_pair(scale)
        unit = scale * scale
        for t in np.geomspace(0.01 * unit, 10.0 * unit, 50):
            va, ea = trace_with_bound(a, float(t), 1e-12)
            vb, eb = trace_with_bound(b, float(t), 1e-12)
            assert ea <= 1e-12 and eb <= 1e-12
            worst = max(worst, abs(va - vb))
    elapsed = time.monotonic() - start
    assert worst <= 4e-12, f"pair trace gap {worst:.3e}"
    assert elapsed < 5.0, f"took {elapsed:.1f}s"
    print(f"ACCEPTANCE #1 isospectral pair family traces: PASS "
          f"(max gap {worst:.2e}, {elapsed:.1f}s)")


def test_02_quadrature_oracle_concordance():
    start = time.monotonic()
    worst = 0.0
    for name in CLASS_NAMES:
        d = fixed(name)
        for t in (0.1, 0.3, 1.0):
            gap = abs(trace(d, t, 1e-12) - trace_by_quadrature(d, t, n=64))
            worst = max(worst, gap)
    elapsed = time.monotonic() - start
    assert worst <= 1e-6, f"quadrature gap {worst:.3e}"
    assert elapsed < 60.0, f"took {elapsed:.1f}s"
    print(f"ACCEPTANCE #2 method-of-images quadrature concordance: PASS "
          f"(max gap {worst:.2e}, {elapsed:.1f}s)")


def test_03_spectrum_oracle_concordance():
    start = time.monotonic()
    worst_defect = 0.0
    for name in CLASS_NAMES:
        d = fixed(name)
        s = spectrum(d, 400.0)
        worst_defect = max(worst_defect, s.max_defect)
        for t in (0.5, 1.0, 2.0):
            value, tail = partial_heat_sum(s, t)
            assert abs(trace(d, t, 1e-12) - value) <= tail + 1e-8, (name, t)
    elapsed = time.monotonic() - start
    assert worst_defect < 1e-9, f"multiplicity defect {worst_defect:.3e}"
    assert elapsed < 30.0, f"took {elapsed:.1f}s"
    print(f"ACCEPTANCE #3 partial spectral sums match the trace: PASS "
          f"(max multiplicity defect {worst_defect:.1e}, {elapsed:.1f}s)")


def test_04_pair_spectra_agree_entrywise():
    a, b = m4_m6_pair(1.0)
    sa = spectrum(a, 200.0)
    sb = spectrum(b, 200.0)
    assert len(sa) == len(sb)
    gaps = np.abs(sa.eigenvalues - sb.eigenvalues)
    assert float(gaps.max()) < 1e-10
    assert np.array_equal(sa.multiplicities, sb.multiplicities)
    print(f"ACCEPTANCE #4 pair spectra identical below 200: PASS "
          f"({len(sa)} levels, max eigenvalue gap {float(gaps.max()):.1e})")


def test_05_blind_round_trip():
    start = time.monotonic()
    rng = np.random.default_rng(20260815)
    for name in CLASS_NAMES:
        for trial in range(5):
            d = descriptor(name, **random_params(rng, name))
            got = reconstruct(trace_grid(d))
            assert got.class_name == name, (name, trial, got.class_name, d.params)
            assert is_isometric(got, d, rtol=1e-3), (name, trial, d.params, got.params)
    elapsed = time.monotonic() - start
    assert elapsed < 300.0, f"took {elapsed:.1f}s"
    print(f"ACCEPTANCE #5 blind round trip, 5 random draws per class: PASS "
          f"({elapsed:.0f}s)")


def test_06_volume_recovery():
    worst = 0.0
    for name in CLASS_NAMES:
        d = fixed(name)
        rel = abs(extract_volume(trace_grid(d)) - volume(d)) / volume(d)
        worst = max(worst, rel)
    assert worst <= 1e-5, f"volume error {worst:.3e}"
    print(f"ACCEPTANCE #6 volume from the small-time law: PASS "
          f"(worst relative error {worst:.1e})")


def test_07_orientability_classification():
    start = time.monotonic()
    for name in CLASS_NAMES:
        got = classify_orientability(trace_grid(fixed(name)))
        assert got == ORIENTABLE[name], name
    elapsed = time.monotonic() - start
    print(f"ACCEPTANCE #7 orientability from trace samples, 10/10: PASS "
          f"({elapsed:.0f}s)")


def test_08_random_perturbations_distinguished(tmp_path):
    start = time.monotonic()
    rng = np.random.default_rng(7041)
    checked = 0
    for name in CLASS_NAMES:
        for trial in range(20):
            params = random_params(rng, name)
            factor = 1.0 + float(rng.uniform(0.01, 0.05))
            bumped = dict(params)
            if name == "M1":
                basis = [row[:] for row in params["basis"]]
                row = int(rng.integers(3))
                basis[row] = [x * factor for x in basis[row]]
                bumped["basis"] = basis
            else:
                key = list(params)[int(rng.integers(len(params)))]
                bumped[key] = params[key] * factor
                if key == "angle_rad" and bumped[key] >= math.pi:
                    bumped[key] = params[key] / factor
            d1 = descriptor(name, **params)
            d2 = descriptor(name, **bumped)
            if is_isometric(d1, d2):
                continue
            pa = tmp_path / "a.json"
            pb = tmp_path / "b.json"
            pa.write_text(json.dumps({"class": name, "params": params}))
            pb.write_text(json.dumps({"class": name, "params": bumped}))
            assert cli_main(["compare", str(pa), str(pb), "--tol", "1e-9"]) == 10, (name, trial)
            checked += 1
    elapsed = time.monotonic() - start
    assert checked >= 195
    print(f"ACCEPTANCE #8 perturbed same-class pairs all distinguished: PASS "
          f"({checked} pairs, {elapsed:.0f}s)")


def test_09_poisson_duality():
    rng = np.random.default_rng(1311)
    worst = 0.0
    for _ in range(10):
        lat = Lattice3(skew_basis(rng))
        dl = dual(lat)
        for t in (0.1, 1.0):
            lhs = lattice_theta(lat, t, eps=1e-14)
            s = 1.0 / (16.0 * math.pi**2 * t)
            rhs = (4.0 * math.pi * t) ** 1.5 / lat.covolume() * lattice_theta(dl, s, eps=1e-14)
            worst = max(worst, abs(lhs - rhs))
    assert worst <= 1e-10, f"duality gap {worst:.3e}"
    print(f"ACCEPTANCE #9 lattice sum equals rescaled dual sum: PASS "
          f"(max gap {worst:.1e})")


def test_10_theta_quarter_offset_identity():
    worst = 0.0
    for u in np.linspace(0.5, 2.75, 10):
        for t in np.geomspace(0.05, 1.6, 10):
            lhs = theta1(float(u), 0.25, float(t))
            rhs = 0.5 * theta1(float(u) / 2.0, 0.5, float(t))
            worst = max(worst, abs(lhs - rhs))
    assert worst <= 1e-13, f"identity gap {worst:.3e}"
    print(f"ACCEPTANCE #10 quarter-offset theta identity: PASS "
          f"(max gap {worst:.1e})")


def test_11_search_uniqueness():
    start = time.monotonic()
    hits = {}
    for a, b in combinations_with_replacement(CLASS_NAMES, 2):
        got = search_pairs(a, b, low=0.5, high=2.0, step=0.25)
        if got:
            hits[(a, b)] = got
    elapsed = time.monotonic() - start
    assert set(hits) == {("M4", "M6")}, sorted(hits)
    family = hits[("M4", "M6")]
    assert len(family) == 3
    for m4, m6 in family:
        l = m4.params["l"]
        assert m4.params["l1"] == 2.0 * l
        assert sorted(m6.params.values()) == [l, l, 2.0 * l]
    assert elapsed < 600.0, f"took {elapsed:.1f}s"
    print(f"ACCEPTANCE #11 exhaustive search finds only the one pair family: PASS "
          f"({elapsed:.0f}s)")
