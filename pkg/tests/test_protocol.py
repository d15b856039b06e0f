import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from polpath_qi import protocol as P
from polpath_qi.qcore import (
    DegenerateStateError,
    DomainError,
    PolPathState,
    make_classical_state,
    make_entangled_state,
)

SQ2 = math.sqrt(2)
angle = st.floats(-4, 4, allow_nan=False)
unit = st.floats(0, 1)
configs = st.builds(
    P.SchemeConfig,
    st.sampled_from(list(P.Scheme)),
    st.sampled_from(list(P.Convention)),
    st.sampled_from(list(P.Normalization)),
)


@st.composite
def states(draw):
    seed = draw(st.integers(0, 2**32 - 1))
    tr = draw(st.floats(0.05, 1.0))
    return PolPathState(oracles.random_density(np.random.default_rng(seed), tr))


def quads():
    return st.builds(P.AngleQuad, angle, angle, angle, angle)


# --- loss channel -----------------------------------------------------------


def test_reflectivity_lossless_keeps_entangled_state():
    rho = make_entangled_state()
    out = P.reflectivity_channel(rho, 1.0)
    assert out.allclose(rho)
    assert out.trace == pytest.approx(1.0)


def test_reflectivity_total_loss_leaves_reference_term():
    out = P.reflectivity_channel(make_entangled_state(), 0.0)
    expected = np.zeros((4, 4))
    expected[0, 0] = 0.5
    assert out.allclose(expected)
    assert out.trace == pytest.approx(0.5)


@given(unit)
def test_reflectivity_trace_formula(eta):
    assert P.lossy_state(eta).trace == pytest.approx((1 + eta) / 2, abs=1e-12)
    assert np.allclose(P.lossy_state(eta).matrix, oracles.entangled(eta), atol=1e-12)


@pytest.mark.parametrize("bad", [-0.1, 1.01, float("nan")])
def test_channel_domain_errors(bad):
    rho = make_entangled_state()
    with pytest.raises(DomainError):
        P.reflectivity_channel(rho, bad)
    with pytest.raises(DomainError):
        P.depolarizing_channel(rho, bad)
    with pytest.raises(DomainError):
        P.thermal_mixture(rho, bad, "ni")


# --- receivers --------------------------------------------------------------


def test_receivers_at_zero_angles_are_identity():
    rho = P.lossy_state(0.6)
    assert P.receiver_interferometric(rho, 0, 0).allclose(rho)
    assert P.receiver_non_interferometric(rho, 0.3, -0.3).allclose(rho)


@settings(max_examples=80)
@given(states(), angle, angle, configs)
def test_receiver_matches_explicit_kronecker_oracle(rho, t, d, cfg):
    out = P.receive(rho, t, d, cfg)
    scheme = "ni" if cfg.scheme is P.Scheme.NON_INTERFEROMETRIC else "int"
    conv = "rotation" if cfg.convention is P.Convention.ROTATION else "hwp"
    assert np.allclose(out.matrix, oracles.receiver(rho.matrix, t, d, scheme, conv), atol=1e-12)
    assert out.trace == pytest.approx(rho.trace, abs=1e-12)


@pytest.mark.parametrize("t, d", [(0.1, 0.2), (0.7, -0.2), (1.9, 0.4)])
def test_non_interferometric_diagonal_on_entangled_state(t, d):
    a = t + d
    out = P.receiver_non_interferometric(make_entangled_state(), t, d)
    c2, s2 = math.cos(a) ** 2, math.sin(a) ** 2
    assert np.allclose(out.diagonal, [c2 / 2, s2 / 2, s2 / 2, c2 / 2], atol=1e-12)


# --- probabilities and correlations ----------------------------------------


def test_probabilities_of_entangled_state():
    rho = make_entangled_state()
    for norm in P.Normalization:
        pv = P.probabilities(rho, norm)
        assert np.allclose(pv.as_array(), [0.5, 0, 0, 0.5], atol=1e-15)


def test_probabilities_normalizations_on_lossy_state():
    rho = P.lossy_state(0.5)
    assert P.probabilities(rho, "per_trial").total == pytest.approx(0.75, abs=1e-12)
    assert P.probabilities(rho, "post_selected").total == pytest.approx(1.0, abs=1e-12)


def test_post_selection_of_empty_state_is_degenerate():
    empty = PolPathState(np.zeros((4, 4)), validate=False)
    with pytest.raises(DegenerateStateError):
        P.probabilities(empty, "post_selected")
    assert P.probabilities(empty, "per_trial").total == 0.0


def test_correlation_of_unrotated_entangled_state():
    assert P.correlation_E(make_entangled_state()) == pytest.approx(1.0)


@pytest.mark.parametrize("eta", np.linspace(0, 1, 6))
def test_non_interferometric_per_trial_closed_form(eta):
    rho = P.lossy_state(eta)
    for t in np.linspace(0, math.pi, 7):
        for d in np.linspace(-1, 2, 7):
            e = P.correlation_E(P.receiver_non_interferometric(rho, t, d))
            assert e == pytest.approx((1 + eta) / 2 * math.cos(2 * (t + d)), abs=1e-12)


@given(angle, angle, st.sampled_from(list(P.Scheme)), st.sampled_from(list(P.Convention)))
def test_noise_only_state_has_no_correlation(t, d, scheme, conv):
    noise = PolPathState(np.diag([0, 0.5, 0, 0.5]))
    cfg = P.SchemeConfig(scheme, conv)
    assert P.correlation_E(P.receive(noise, t, d, cfg)) == pytest.approx(0.0, abs=1e-12)


# --- CHSH -------------------------------------------------------------------


def test_quoted_quad_sign_pattern():
    # direct evaluation of |E1 - E2 + E3 + E4| with the explicit oracle
    rho = P.lossy_state(1.0)
    assert P.chsh_S(rho, P.QUOTED_QUAD) == pytest.approx(oracles.S(rho.matrix, P.QUOTED_QUAD.as_tuple()), abs=1e-12)


@pytest.mark.parametrize("scheme", list(P.Scheme))
def test_lossless_optimum_is_tsirelson(scheme):
    opt = P.optimize_angles(P.lossy_state(1.0), P.SchemeConfig(scheme))
    assert opt.S == pytest.approx(2 * SQ2, abs=1e-9)
    quad, s = opt
    assert P.chsh_S(P.lossy_state(1.0), quad, P.SchemeConfig(scheme)) == pytest.approx(s, abs=1e-12)


def test_classical_probe_at_entangled_optimum():
    cfg = P.SchemeConfig()
    quad = P.reference_quad(cfg)
    scene = P.scene_state(1.0, probe=make_classical_state())
    s = P.chsh_S(scene, quad, cfg)
    assert 1.40 <= s <= 1.47
    # E = cos(2a)/2 on the surviving |v1> term, so S = 2*sqrt(2)/2
    assert s == pytest.approx(SQ2, abs=1e-9)


@settings(max_examples=150)
@given(states(), quads(), configs)
def test_tsirelson_bound(rho, quad, cfg):
    assert P.chsh_S(rho, quad, cfg) <= 2 * SQ2 + 1e-9


@settings(max_examples=60)
@given(unit, quads(), st.sampled_from(list(P.Convention)))
def test_per_trial_non_interferometric_is_linear_in_loss(eta, quad, conv):
    cfg = P.SchemeConfig(P.Scheme.NON_INTERFEROMETRIC, conv)
    s1 = P.chsh_S(P.lossy_state(1.0), quad, cfg)
    assert P.chsh_S(P.lossy_state(eta), quad, cfg) == pytest.approx((1 + eta) / 2 * s1, abs=1e-9)


def test_angle_quad_canonical_reduction():
    q = P.AngleQuad(-0.1, math.pi + 0.2, 7.0, 3 * math.pi).canonical()
    assert all(0 <= a < math.pi for a in q.as_tuple())
    rho = P.lossy_state(0.4)
    raw = P.AngleQuad(-0.1, math.pi + 0.2, 7.0, 3 * math.pi)
    assert P.chsh_S(rho, q) == pytest.approx(P.chsh_S(rho, raw), abs=1e-12)
    with pytest.raises(DomainError):
        P.AngleQuad(0, float("inf"), 0, 0)


# --- optimizer --------------------------------------------------------------


def test_optimizer_total_loss_per_trial():
    opt = P.optimize_angles(P.lossy_state(0.0))
    assert opt.S == pytest.approx(SQ2, abs=1e-6)
    # independent check: exhaustive search on a pi/16 grid with the explicit oracle
    grid = np.arange(16) * math.pi / 16
    rho = oracles.entangled(0.0)
    brute = max(oracles.S(rho, q) for q in oracles.all_quads(grid[::2]))
    assert brute == pytest.approx(SQ2, abs=1e-9)


def test_optimizer_is_deterministic_and_canonical():
    rho = P.lossy_state(0.8)
    a = P.optimize_angles(rho)
    b = P.optimize_angles(rho)
    assert a.quad == b.quad and a.S == b.S
    assert all(0 <= x < math.pi for x in a.quad.as_tuple())


def test_optimizer_tie_break_prefers_smallest_grid_quad():
    # on the lossless state many quads reach 2*sqrt(2); the chosen one starts at theta = 0
    opt = P.optimize_angles(P.lossy_state(1.0), resolution=math.pi / 16)
    assert opt.quad.theta == 0.0
    assert opt.grid_S == pytest.approx(2 * SQ2, abs=1e-12)


def test_optimizer_rejects_bad_resolution():
    with pytest.raises(DomainError):
        P.optimize_angles(P.lossy_state(1.0), resolution=0.0)


def test_optimizer_monotone_in_reflectivity():
    vals = [P.optimize_angles(P.lossy_state(eta)).S for eta in np.linspace(0, 1, 11)]
    assert np.all(np.diff(vals) >= -1e-12)


def test_post_selected_non_interferometric_is_flat():
    cfg = P.SchemeConfig(normalization="post_selected")
    vals = [P.optimize_angles(P.lossy_state(eta), cfg).S for eta in (0.1, 0.4, 0.9)]
    assert np.allclose(vals, 2 * SQ2, atol=1e-6)


def test_non_interferometric_advantage_at_low_reflectivity():
    ni = P.SchemeConfig(P.Scheme.NON_INTERFEROMETRIC)
    it = P.SchemeConfig(P.Scheme.INTERFEROMETRIC)
    for eta in np.linspace(0, 0.5, 6):
        rho = P.lossy_state(eta)
        assert P.optimize_angles(rho, ni).S >= P.optimize_angles(rho, it).S - 1e-9


def test_interferometric_total_loss_is_product_bound():
    # only |h0> survives, E factorises into cos(2t)cos(2d)/2, so S <= 1
    opt = P.optimize_angles(P.lossy_state(0.0), P.SchemeConfig(P.Scheme.INTERFEROMETRIC))
    assert opt.S == pytest.approx(1.0, abs=1e-6)


# --- depolarizing and thermal channels ---------------------------------------


def test_depolarizing_zero_strength_is_identity():
    rho = P.lossy_state(0.7)
    assert P.depolarizing_channel(rho, 0.0).allclose(rho)


@settings(max_examples=60)
@given(states(), unit)
def test_depolarizing_preserves_trace_and_positivity(rho, p):
    out = P.depolarizing_channel(rho, p)
    assert out.trace == pytest.approx(rho.trace, abs=1e-12)
    out.validate()


def test_depolarizing_coherence_closed_form():
    # <h0|D|v1> = -1/2 + 2p/3: the sigma_z branch flips the sign, x and y move it to <h0|h1>
    ps = np.linspace(0, 1, 41)
    coh = [P.depolarizing_channel(make_entangled_state(), p).element("h0", "v1") for p in ps]
    assert np.allclose(coh, -0.5 + 2 * ps / 3, atol=1e-12)
    mags = np.abs(coh)
    on = ps <= P.VISIBILITY_P_MAX
    assert np.all(np.diff(mags[on]) < 0)


def test_thermal_mixture_examples():
    rho = P.lossy_state(0.7)
    assert P.thermal_mixture(rho, 0.0, "ni").allclose(rho)
    full = P.thermal_mixture(rho, 1.0, "ni")
    quad = P.reference_quad(P.SchemeConfig())
    for t, d in quad.settings:
        assert P.correlation_E(P.receiver_non_interferometric(full, t, d)) == pytest.approx(0.0, abs=1e-12)
    assert P.chsh_S(full, quad) == pytest.approx(0.0, abs=1e-12)
    assert np.allclose(P.thermal_mixture(rho, 1.0, "int").matrix, np.eye(4) / 4)


@pytest.mark.parametrize("scheme", list(P.Scheme))
def test_thermal_noise_lowers_optimum_strictly(scheme):
    cfg = P.SchemeConfig(scheme)
    rho = P.lossy_state(0.7)
    vals = [P.optimize_angles(P.thermal_mixture(rho, q, scheme), cfg).S for q in np.linspace(0, 0.9, 7)]
    assert np.all(np.diff(vals) < 0)


# --- visibility -------------------------------------------------------------


def test_visibility_examples():
    assert P.visibility_of(make_entangled_state()) == pytest.approx(1.0)
    assert P.visibility_of(P.depolarizing_channel(make_entangled_state(), 0.75)) == pytest.approx(0.0, abs=1e-12)
    with pytest.raises(DegenerateStateError):
        P.visibility_of(P.lossy_state(0.0))


def test_visibility_matches_fringe_scan():
    # brute-force extremum of C(a) over a fine analyser scan
    rho = P.depolarizing_channel(P.thermal_mixture(P.lossy_state(0.8), 0.2, "ni"), 0.3)
    rho = P.receiver_non_interferometric(rho, 0.37, 0.0)
    m = rho.path_block(1)
    scan = []
    for a in np.linspace(0, math.pi, 20001):
        r = oracles.rot(a)
        scan.append(np.real(r @ m @ r.T)[0, 0])
    cmax, cmin = max(scan), min(scan)
    assert P.visibility_of(rho) == pytest.approx((cmax - cmin) / (cmax + cmin), abs=1e-7)


def test_visibility_table_and_inverse():
    ps, vs = P.visibility_table()
    # V(p) = |1 - 4p/3| from the Bloch vector of the depolarized |v> block
    assert np.allclose(vs, np.abs(1 - 4 * ps / 3), atol=1e-12)
    assert np.all(np.diff(vs) < 0)
    for v in (1.0, 0.8, 0.5, 0.2, 0.0):
        p = P.p_for_visibility(v)
        assert P.visibility_of(P.depolarizing_channel(P.lossy_state(1.0), p)) == pytest.approx(v, abs=1e-9)


def test_depolarized_optimum_closed_form():
    # S_max = sqrt(2) * (1 + eta * (1 - 4p/3)) for the non-interferometric receiver
    for eta in (1.0, 0.7):
        for p in np.linspace(0, 1, 6):
            s = P.optimize_angles(P.scene_state(eta, p)).S
            assert s == pytest.approx(SQ2 * (1 + eta * (1 - 4 * p / 3)), abs=1e-6)


def test_enum_parsing_accepts_cli_spellings():
    assert P.Scheme.parse("ni") is P.Scheme.NON_INTERFEROMETRIC
    assert P.Scheme.parse("int") is P.Scheme.INTERFEROMETRIC
    assert P.Convention.parse("hwp") is P.Convention.HWP_REFLECTION
    assert P.Normalization.parse("post-selected") is P.Normalization.POST_SELECTED
    with pytest.raises(ValueError):
        P.Scheme.parse("both")
