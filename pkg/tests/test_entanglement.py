import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sseconc import ed
from sseconc import entanglement as ent
from sseconc.lattice import build_lattice
from sseconc.model import ModelSpec

UP = np.array([1, 0], dtype=complex)
DN = np.array([0, 1], dtype=complex)
SINGLET = (np.kron(UP, DN) - np.kron(DN, UP)) / np.sqrt(2)
P_SINGLET = np.outer(SINGLET, SINGLET.conj())
P_UPUP = np.diag([1, 0, 0, 0]).astype(complex)
MIXED = np.eye(4) / 4


def xstate(a, b, c, d, z=0.0, w=0.0):
    rho = np.diag([a, b, c, d]).astype(complex)
    rho[1, 2] = rho[2, 1] = z
    rho[0, 3] = rho[3, 0] = w
    return rho


def random_u1_xstate(rng):
    a, b, c, d = rng.dirichlet(np.ones(4))
    z = rng.uniform(-1, 1) * np.sqrt(b * c)
    return a, b, c, d, z


def test_assemble_identity_and_singlet():
    assert np.allclose(ent.assemble_rho({}), MIXED)
    singlet = {("x", "x"): -1.0, ("y", "y"): -1.0, ("z", "z"): -1.0}
    assert np.allclose(ent.assemble_rho(singlet), P_SINGLET, atol=1e-15)


def test_assemble_rejects_complex():
    with pytest.raises(ValueError):
        ent.assemble_rho({("x", "y"): 0.1 + 0.2j})


def test_assemble_matches_ed_partial_trace():
    spec = ModelSpec("xxz", 2.0, delta=0.5)
    geom = build_lattice(4, 1)
    st_ = ed.diagonalize(spec, geom)
    rho = ent.assemble_rho(ed.exact_pair_correlators(st_, 0, 1))
    assert np.abs(rho - ed.exact_two_site_rho(spec, geom, 0, 1)).max() < 1e-12


def test_time_reverse_examples():
    assert np.allclose(ent.time_reverse(MIXED), MIXED)
    assert np.allclose(ent.time_reverse(P_SINGLET), P_SINGLET)
    assert np.allclose(ent.time_reverse(P_UPUP), np.diag([0, 0, 0, 1]))


def test_concurrence_examples():
    cf, arg = ent.concurrence_formation(MIXED)
    assert cf == 0.0 and arg == pytest.approx(-0.5)
    assert ent.concurrence_formation(P_SINGLET)[0] == pytest.approx(1.0)
    assert ent.concurrence_assistance(MIXED) == pytest.approx(1.0)
    assert ent.concurrence_assistance(P_UPUP) == pytest.approx(0.0, abs=1e-12)


@pytest.mark.parametrize("p", np.linspace(0, 1, 21))
def test_werner_states(p):
    rho = p * P_SINGLET + (1 - p) * MIXED
    assert ent.concurrence_formation(rho)[0] == pytest.approx(max(0.0, (3 * p - 1) / 2), abs=1e-12)


def test_werner_example_value():
    rho = 0.8 * P_SINGLET + 0.2 * MIXED
    assert ent.concurrence_formation(rho)[0] == pytest.approx(0.7, abs=1e-12)


def test_invalid_state_flagged():
    bad = np.diag([0.5, 0.5, 0.5, -0.5]).astype(complex)
    with pytest.raises(ent.InvalidStateError):
        ent.concurrence_formation(bad)


def test_xxz_closed_form_examples():
    assert ent.xxz_concurrence(0, 1, 1, 1) == 0.0
    assert ent.xxz_concurrence(2, -1, 0, 0) == pytest.approx(1.0)
    assert ent.xxz_assistance(-1, 0, 0) == pytest.approx(1.0)
    assert ent.xxz_assistance(1, 1, 1) == pytest.approx(0.0)
    m = 0.614
    assert ent.xxz_assistance(m * m, m, m) == pytest.approx(1 - m * m)
    assert 1 - m * m == pytest.approx(0.623, abs=1e-3)
    for zz in np.linspace(-1, 1, 11):
        assert ent.xxz_assistance(zz, 0, 0) == pytest.approx(1.0)


def test_negative_radicand_rejected_and_tiny_clamped():
    with pytest.raises(ent.InvalidStateError):
        ent.xxz_concurrence(0.5, 0.0, 1.0, 1.0)
    assert ent.xxz_concurrence(0.0, 1.0, 1.0, 1.0 + 1e-11) == 0.0


def test_tfim_closed_form_examples():
    assert ent.tfim_concurrence(0, 0, 1, 1, 1) == 0.0
    assert ent.tfim_concurrence(1, 0, 0, 0, 0) == 0.0


def test_q_matrix_examples():
    prod = ent.correlators_from_rho(np.kron(np.diag([0.7, 0.3]), np.diag([0.2, 0.8])))
    q, s = ent.connected_q_lower_bound(prod)
    assert np.allclose(q, 0, atol=1e-12) and s == pytest.approx(0, abs=1e-12)
    q, s = ent.connected_q_lower_bound(ent.correlators_from_rho(P_SINGLET))
    assert np.allclose(q, -np.eye(3)) and s == pytest.approx(1.0)


def test_ef_examples():
    assert ent.ef_from_concurrence(0.0) == 0.0
    assert ent.ef_from_concurrence(1.0) == pytest.approx(1.0)
    assert ent.ef_from_concurrence(0.6) == pytest.approx(0.46900, abs=1e-5)
    cs = np.linspace(1e-6, 1, 200)
    assert np.all(np.diff([ent.ef_from_concurrence(c) for c in cs]) > 0)
    with pytest.raises(ValueError):
        ent.ef_from_concurrence(1.1)


def test_single_site_entropy():
    assert ent.single_site_entropy(np.eye(2) / 2) == pytest.approx(1.0)
    assert ent.single_site_entropy(np.diag([1.0, 0.0])) == 0.0
    with pytest.raises(ent.InvalidStateError):
        ent.single_site_entropy(np.diag([0.7, 0.7]))
    with pytest.raises(ent.InvalidStateError):
        ent.single_site_entropy(np.diag([1.2, -0.2]))


def test_psd_projection():
    bad = xstate(0.3, 0.2, 0.2, 0.3, z=0.25)
    fixed = ent.project_psd(bad + np.diag([0.0, 0.0, 0.0, 0.0]))
    assert np.linalg.eigvalsh(fixed).min() > -1e-12
    assert np.trace(fixed).real == pytest.approx(1.0)


def test_u1_closed_forms_on_random_states():
    rng = np.random.default_rng(7)
    for _ in range(300):
        a, b, c, d, z = random_u1_xstate(rng)
        rho = xstate(a, b, c, d, z)
        ch = ent.correlators_from_rho(rho)
        xpy = ch[("x", "x")] + ch[("y", "y")]
        cf = ent.xxz_concurrence(xpy, ch[("z", "z")], ch[("z", "0")], ch[("0", "z")])
        ca = ent.xxz_assistance(ch[("z", "z")], ch[("z", "0")], ch[("0", "z")])
        assert cf == pytest.approx(ent.concurrence_formation(rho)[0], abs=1e-10)
        assert ca == pytest.approx(ent.concurrence_assistance(rho), abs=1e-10)


def test_z2_closed_form_on_random_states():
    rng = np.random.default_rng(8)
    for _ in range(300):
        a, b, _, d = rng.dirichlet(np.ones(4))
        b = c = (b + _) / 2
        z = rng.uniform(-1, 1) * b
        w = rng.uniform(-1, 1) * np.sqrt(a * d)
        rho = xstate(a, b, c, d, z, w)
        ch = ent.correlators_from_rho(rho)
        cf = ent.tfim_concurrence(ch[("x", "x")], ch[("y", "y")], ch[("z", "z")], ch[("z", "0")], ch[("0", "z")])
        assert cf == pytest.approx(ent.concurrence_formation(rho)[0], abs=1e-10)


def _rand_complex(rng, shape):
    return rng.normal(size=shape) + 1j * rng.normal(size=shape)


@settings(max_examples=80, deadline=None)
@given(seed=st.integers(0, 2**31))
def test_pure_state_concurrence(seed):
    rng = np.random.default_rng(seed)
    psi = _rand_complex(rng, 4)
    psi /= np.linalg.norm(psi)
    rho = np.outer(psi, psi.conj())
    a, b, c, d = psi
    expect = 2 * abs(a * d - b * c)
    assert ent.concurrence_formation(rho)[0] == pytest.approx(expect, abs=1e-12)
    assert ent.concurrence_assistance(rho) == pytest.approx(expect, abs=1e-12)


@settings(max_examples=80, deadline=None)
@given(seed=st.integers(0, 2**31), rank=st.integers(1, 4))
def test_ordering_on_random_mixed_states(seed, rank):
    rng = np.random.default_rng(seed)
    g = _rand_complex(rng, (4, rank))
    rho = g @ g.conj().T
    rho /= np.trace(rho).real
    # real part only: the estimators never produce imaginary channels
    rho = rho.real.astype(complex)
    ch = ent.correlators_from_rho(rho)
    pm = ent.pair_measures(ch)
    assert 0 <= pm.cf <= pm.ca + 1e-9
    assert 0 <= pm.ca <= 1 + 1e-9
    assert 0 <= pm.ef <= 1 + 1e-9
    assert pm.el_lower >= 0


def test_bounds_ordering_on_ed_states():
    for spec, geom in [(ModelSpec("xxz", 4.0, delta=0.5), build_lattice(4, 1)),
                       (ModelSpec("xxz", 4.0, delta=1.0, h_stag=0.2), build_lattice(4, 1)),
                       (ModelSpec("tfim", 6.0, lam=1.0, h_x=0.001), build_lattice(3, 2)),
                       (ModelSpec("tfim", 6.0, lam=0.2), build_lattice(6, 1))]:
        st_ = ed.diagonalize(spec, geom)
        for j in range(1, geom.N):
            pm = ent.pair_measures(ed.exact_pair_correlators(st_, 0, j))
            assert pm.cf <= pm.ca + 1e-9
            assert pm.el_lower <= pm.ca + 1e-9


def test_xxz_closed_form_on_field_broken_ed_state():
    spec = ModelSpec("xxz", 4.0, delta=1.5, h_stag=0.3)
    geom = build_lattice(4, 1)
    st_ = ed.diagonalize(spec, geom)
    for j in (1, 2):
        ch = ed.exact_pair_correlators(st_, 0, j)
        rho = ent.assemble_rho(ch)
        cf = ent.xxz_concurrence(ch[("x", "x")] + ch[("y", "y")], ch[("z", "z")], ch[("z", "0")], ch[("0", "z")])
        assert cf == pytest.approx(ent.concurrence_formation(rho)[0], abs=1e-10)
        ca = ent.xxz_assistance(ch[("z", "z")], ch[("z", "0")], ch[("0", "z")])
        assert ca == pytest.approx(ent.concurrence_assistance(rho), abs=1e-10)
