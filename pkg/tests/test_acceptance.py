"""Acceptance criteria at their stated tolerances.

Each check prints one PASS/FAIL line (collected again in the terminal
summary). Criteria that cannot be met at the prescribed desk scale are run as
stated and marked ``xfail(strict=True)``; the reasons are in the decisions
ledger.
"""
import logging
import time

import numpy as np
import pytest
from scipy.optimize import curve_fit

from sseconc import ed, runner
from sseconc import entanglement as ent
from sseconc.config import from_dict
from sseconc.estimators import BROKEN, SYMMETRIC, jackknife, pair_channels, staggered_moment
from sseconc.lattice import build_lattice
from sseconc.model import LAMBDA_C, ModelSpec

pytestmark = pytest.mark.slow
SIGMA_MAX = 2e-3
Z_BAR = 3.0
TFIM_RATIOS = (0.2, 0.5, 0.8, 1.0, 1.2, 1.5, 2.0, 3.0)


def config(model, Lx, Ly, seps, sweeps, bins=100, seed=2024, **run):
    return from_dict({"model": model, "lattice": {"Lx": Lx, "Ly": Ly},
                      "run": {"separations": [list(s) for s in seps], "sweeps": sweeps, "bins": bins,
                              "seed": seed, **run}})


def bounce_free_epsilon(delta):
    return max(0.1, 1.0 - abs(delta))


@pytest.fixture(autouse=True)
def quiet_bounce_warning():
    logging.getLogger("sseconc.engine").setLevel(logging.ERROR)
    yield
    logging.getLogger("sseconc.engine").setLevel(logging.NOTSET)


# -- 1, 2: oracle equivalence -------------------------------------------------

def _oracle(cfg, criterion, label, sigma_bar):
    t = time.perf_counter()
    res = runner.run_point(cfg)
    elapsed = time.perf_counter() - t
    report = runner.validate(cfg, res, threshold=Z_BAR)
    print(report.format())
    channels = [r for r in report.rows if "@" in r.name]
    worst_sigma = max(r.estimate.sigma for r in channels)
    worst = max(report.rows, key=lambda r: abs(r.z))
    ok = report.passed and elapsed <= 300 and (sigma_bar is None or worst_sigma <= sigma_bar)
    criterion(label, ok, f"worst |z|={abs(worst.z):.2f} ({worst.name}), max channel sigma={worst_sigma:.2e}, "
                         f"{elapsed:.0f}s")
    return ok, report


@pytest.mark.parametrize("delta", [-0.5, 0.0, 1.0])
def test_c1_xxz_oracle(delta, criterion):
    cfg = config({"kind": "xxz", "beta": 4.0, "delta": delta, "epsilon": bounce_free_epsilon(delta)},
                 4, 1, [(1, 0), (2, 0)], 1_000_000)
    ok, report = _oracle(cfg, criterion, f"C1 XXZ 1x4 beta=4 delta={delta:g}", SIGMA_MAX)
    assert ok, report.format()


@pytest.mark.parametrize("shape", [(4, 1), (2, 2)], ids=["1x4", "2x2"])
@pytest.mark.parametrize("lam", [0.1, LAMBDA_C, 1.0])
@pytest.mark.parametrize("h_x", [0.0, 0.001])
def test_c2_tfim_oracle(shape, lam, h_x, criterion):
    seps = [(1, 0), (2, 0)] if shape == (4, 1) else [(1, 0), (1, 1)]
    cfg = config({"kind": "tfim", "beta": 6.0, "lambda": lam, "h_x": h_x}, *shape, seps, 500_000)
    ok, report = _oracle(cfg, criterion, f"C2 TFIM {shape[1]}x{shape[0]} lambda={lam:g} h_x={h_x:g}", SIGMA_MAX)
    names = {r.name.split("@")[0] for r in report.rows}
    assert {"zz", "yy", "zx", "xz", "xx"} <= names
    assert ok, report.format()


# -- 3: formula equivalence ---------------------------------------------------

def _random_x_state(rng, tfim):
    """Random real X-shaped two-qubit state: U(1) form, or Z2 form with equal singles."""
    while True:
        a, b, c, d = rng.dirichlet(np.ones(4))
        if tfim:
            b = c = 0.5 * (b + c)
        rho = np.diag([a, b, c, d]).astype(complex)
        w = rng.uniform(-1, 1) * np.sqrt(b * c)
        rho[1, 2] = rho[2, 1] = w
        if tfim:
            v = rng.uniform(-1, 1) * np.sqrt(a * d)
            rho[0, 3] = rho[3, 0] = v
        if np.linalg.eigvalsh(rho)[0] >= 0:
            return rho


def test_c3_formula_equivalence(criterion):
    rng = np.random.default_rng(3)
    worst = {"cf_xxz": 0.0, "ca_xxz": 0.0, "cf_tfim": 0.0}
    for _ in range(1000):
        c = ent.correlators_from_rho(_random_x_state(rng, False))
        rho = ent.assemble_rho(c)
        xpy = c[("x", "x")] + c[("y", "y")]
        zz, zi, zj = c[("z", "z")], c[("z", "0")], c[("0", "z")]
        worst["cf_xxz"] = max(worst["cf_xxz"],
                              abs(ent.xxz_concurrence(xpy, zz, zi, zj) - ent.concurrence_formation(rho)[0]))
        worst["ca_xxz"] = max(worst["ca_xxz"],
                              abs(ent.xxz_assistance(zz, zi, zj) - ent.concurrence_assistance(rho)))
        c = ent.correlators_from_rho(_random_x_state(rng, True))
        rho = ent.assemble_rho(c)
        closed = ent.tfim_concurrence(c[("x", "x")], c[("y", "y")], c[("z", "z")], c[("z", "0")], c[("0", "z")])
        worst["cf_tfim"] = max(worst["cf_tfim"], abs(closed - ent.concurrence_formation(rho)[0]))
    ok = max(worst.values()) <= 1e-10
    criterion("C3 closed forms vs density-matrix route (1000 sets each)", ok,
              ", ".join(f"{k} {v:.1e}" for k, v in worst.items()))
    assert ok


ORACLE_SYSTEMS = ([(ModelSpec("xxz", 4.0, delta=d), build_lattice(4, 1)) for d in (-0.5, 0.0, 1.0)]
                  + [(ModelSpec("tfim", 6.0, lam=lam, h_x=h), build_lattice(*shape))
                     for shape in ((4, 1), (2, 2)) for lam in (0.1, LAMBDA_C, 1.0) for h in (0.0, 0.001)])


def test_c3_assemble_rho_vs_partial_trace(criterion):
    worst = 0.0
    for spec, geom in ORACLE_SYSTEMS:
        st = ed.diagonalize(spec, geom)
        for j in range(1, geom.N):
            direct = ed.exact_two_site_rho(spec, geom, 0, j)
            built = ent.assemble_rho(ed.exact_pair_correlators(st, 0, j))
            worst = max(worst, float(np.abs(direct - built).max()))
    ok = worst <= 1e-12
    criterion("C3 assemble_rho vs partial trace on all oracle systems", ok, f"max deviation {worst:.1e}")
    assert ok


# -- shared large runs ------------------------------------------------------

@pytest.fixture(scope="module")
def heisenberg_16():
    cfg = config({"kind": "xxz", "beta": 32.0, "delta": 1.0}, 16, 16, [(1, 0), (8, 8), (8, 0)], 20_000, seed=16)
    t = time.perf_counter()
    res = runner.run_point(cfg)
    return res.table, time.perf_counter() - t


@pytest.fixture(scope="module")
def xxz_planar_8():
    cfg = config({"kind": "xxz", "beta": 16.0, "delta": 0.5}, 8, 8, [(1, 0), (4, 0), (4, 4)], 5_000, seed=8)
    return runner.run_point(cfg).table


@pytest.fixture(scope="module")
def tfim_sweep_8():
    out = {}
    for r in TFIM_RATIOS:
        cfg = config({"kind": "tfim", "beta": 16.0, "lambda_over_lc": r}, 8, 8, [(1, 0)], 4_000, seed=6)
        out[r] = runner.run_point(cfg).table
    return out


@pytest.fixture(scope="module")
def xx_chain_64():
    cfg = config({"kind": "xxz", "beta": 64.0, "delta": 0.0, "epsilon": bounce_free_epsilon(0.0)}, 64, 1,
                 [(r, 0) for r in range(1, 11)], 10_000, seed=64, thermalization=2_000)
    return runner.run_point(cfg).table


# -- 4: headline number -------------------------------------------------------

def test_c4_heisenberg_nearest_neighbor(heisenberg_16, criterion):
    table, elapsed = heisenberg_16
    row, = runner.analyze_table(table, SYMMETRIC, separations=[(1, 0)])
    ok = abs(row["cf"] - 0.169) <= 0.006 and elapsed <= 3600
    criterion("C4 Heisenberg 16x16 beta=32 nearest-neighbour C_F = 0.169 +- 0.006", ok,
              f"C_F = {row['cf']:.4f} +- {row['cf_err']:.4f}, {elapsed:.0f}s")
    assert ok


# -- 5: assistance plateau ---------------------------------------------------

def test_c5_planar_assistance_is_one(xxz_planar_8, criterion):
    rows = runner.analyze_table(xxz_planar_8, SYMMETRIC)
    dev = max(abs(r["ca"] - 1.0) - max(3 * r["ca_err"], 1e-9) for r in rows)
    ok = dev <= 0
    criterion("C5 XXZ 8x8 delta=0.5 beta=16 C_A = 1", ok,
              ", ".join(f"r=({r['dx']},{r['dy']}) {r['ca']:.6f}+-{r['ca_err']:.1e}" for r in rows))
    assert ok


@pytest.mark.xfail(strict=True, reason="far correlator on 16x16 sits below the structure-factor moment; see ledger")
def test_c5_broken_assistance_matches_order(heisenberg_16, criterion):
    table, _ = heisenberg_16
    far = (8, 8)

    def diff(row):
        ch = pair_channels(table, row, far, BROKEN)
        s = staggered_moment(table, row)
        return ent.concurrence_assistance(ent.assemble_rho(ch), tol=1e-3) - (1 - s * s)

    d, err = jackknife(table.bins, diff)
    ms, _ = jackknife(table.bins, lambda r: staggered_moment(table, r))
    ok = abs(float(d)) <= Z_BAR * float(err)
    criterion("C5 broken-symmetry C_A(8,8) vs 1 - m_s^2 on 16x16", ok,
              f"C_A - (1 - m_s^2) = {float(d):.4f} +- {float(err):.4f} at m_s = {float(ms):.4f}")
    assert ok


@pytest.mark.xfail(strict=True, reason="finite-size moment on 16x16 exceeds the thermodynamic anchor; see ledger")
def test_c5_staggered_moment_anchor(heisenberg_16, criterion):
    table, _ = heisenberg_16
    ms, err = jackknife(table.bins, lambda r: staggered_moment(table, r))
    ok = abs(float(ms) - 0.614) <= 0.02
    criterion("C5 m_s on 16x16 beta=32 = 0.614 +- 0.02", ok, f"m_s = {float(ms):.4f} +- {float(err):.4f}")
    assert ok


# -- 6: transverse field sweep -----------------------------------------------

def _nn_cf(tables):
    return {r: runner.analyze_table(t, SYMMETRIC, separations=[(1, 0)])[0] for r, t in tables.items()}


def test_c6_peak_near_critical_point(tfim_sweep_8, criterion):
    rows = _nn_cf(tfim_sweep_8)
    peak = max(rows, key=lambda r: rows[r]["cf"])
    ok = 0.7 <= peak <= 1.3
    criterion("C6 TFIM 8x8 beta=16 C_F peak in [0.7, 1.3] lambda_c", ok,
              f"peak at {peak:g} lambda_c; " + ", ".join(f"{r:g}:{rows[r]['cf']:.4f}" for r in TFIM_RATIOS))
    assert ok


@pytest.mark.xfail(strict=True, reason="nearest-neighbour C_F stays above 0.01 at 0.2 lambda_c (ED agrees); see ledger")
def test_c6_vanishes_at_both_ends(tfim_sweep_8, criterion):
    rows = _nn_cf(tfim_sweep_8)
    lo, hi = rows[TFIM_RATIOS[0]], rows[TFIM_RATIOS[-1]]
    ok = lo["cf"] < 0.01 and hi["cf"] < 0.01
    criterion("C6 TFIM C_F < 0.01 at 0.2 and 3 lambda_c", ok,
              f"0.2: {lo['cf']:.4f} +- {lo['cf_err']:.4f}, 3: {hi['cf']:.4f} +- {hi['cf_err']:.4f}")
    assert ok


# -- 7: bounds ordering -----------------------------------------------------

def test_c7_lower_bound_below_assistance(heisenberg_16, xxz_planar_8, tfim_sweep_8, xx_chain_64, criterion):
    tables = [heisenberg_16[0], xxz_planar_8, xx_chain_64, *tfim_sweep_8.values()]
    bad, count = [], 0
    for t in tables:
        for mode in (SYMMETRIC, BROKEN):
            for r in runner.analyze_table(t, mode):
                if np.isnan(r["ca"]):
                    continue
                count += 1
                slack = 3 * np.hypot(r["el_lower_err"], r["ca_err"]) + 1e-9
                if r["el_lower"] > r["ca"] + slack:
                    bad.append((t.model.kind, r["dx"], r["dy"], mode))
    ok = not bad and count > 0
    criterion("C7 el_lower <= C_A at every computed point", ok, f"{count} points, violations: {bad}")
    assert ok


def test_c7_bounds_coincide_in_ordered_tfim(criterion):
    spec = ModelSpec("tfim", 16.0, lam=3 * LAMBDA_C)
    st = ed.lowest_states(spec, build_lattice(4, 4), k=8)
    pm = ent.pair_measures(ed.exact_pair_correlators(st, 0, 1))
    ok = pm.el_lower >= 0.9 and pm.el_upper >= 0.9 and abs(pm.el_upper - pm.el_lower) <= 0.05
    criterion("C7 4x4 TFIM 3 lambda_c bounds >= 0.9 and within 0.05", ok,
              f"lower {pm.el_lower:.4f}, upper {pm.el_upper:.4f}")
    assert ok


# -- 8: decay exponent --------------------------------------------------------

def test_c8_xx_chain_decay_exponent(xx_chain_64, criterion):
    rows = {r["dx"]: r for r in runner.analyze_table(xx_chain_64, SYMMETRIC)}
    r = np.arange(2, 11)
    y = np.array([rows[k]["el_lower"] for k in r])
    e = np.array([rows[k]["el_lower_err"] for k in r])
    (amp, p), cov = curve_fit(lambda x, a, q: a * x ** (-q), r, y, p0=(1.0, 0.5), sigma=e, absolute_sigma=True)
    ok = abs(p - 0.5) <= 0.1
    criterion("C8 XX chain 64 sites beta=64 el_lower exponent 0.5 +- 0.1", ok,
              f"exponent {p:.3f} +- {np.sqrt(cov[1, 1]):.3f}")
    assert ok


# -- 9: engineering ---------------------------------------------------------

def test_c9_checkpoint_resume_bit_exact(tmp_path, criterion):
    cfg = config({"kind": "xxz", "beta": 4.0, "delta": 1.0}, 4, 4, [(1, 0)], 20_000, checkpoint_every=1_000,
                 thermalization=2_000)
    ref = runner.run_point(cfg, tmp_path / "ref")
    with pytest.raises(runner.RunInterrupted):
        runner.run_point(cfg, tmp_path / "cut", stop_after=11_000)
    (_, res), = runner.resume(tmp_path / "cut")
    same = (tmp_path / "ref" / "chain_0.bins").read_bytes() == (tmp_path / "cut" / "chain_0.bins").read_bytes()
    ok = same and np.array_equal(ref.table.bins, res.table.bins)
    criterion("C9 checkpoint resume bit-exact over 2.2e4 sweeps (cut at 1.1e4)", ok)
    assert ok


def test_c9_jackknife_matches_sem_and_scales(criterion):
    rng = np.random.default_rng(9)
    x = rng.normal(1.0, 0.3, 400)
    v, e = jackknife(x, lambda r: 2 * r[0] - 1)
    sem = 2 * x.std(ddof=1) / np.sqrt(len(x))
    rho = np.diag([0.05, 0.45, 0.45, 0.05]).astype(complex)
    rho[1, 2] = rho[2, 1] = 0.3
    base = ent.correlators_from_rho(rho)
    keys = list(base)
    centre = np.array([base[k] for k in keys])

    def cf(row):
        return ent.concurrence_formation(ent.assemble_rho(dict(zip(keys, row))))[0]

    sig = [float(jackknife(centre + rng.normal(0, 0.01, (nb, len(keys))), cf)[1]) for nb in (100, 400, 1600)]
    ratios = [sig[0] / sig[1], sig[1] / sig[2]]
    ok = abs(float(e) - sem) <= 1e-12 * sem + 1e-15 and all(abs(q - 2) <= 0.5 for q in ratios)
    criterion("C9 jackknife = SEM for linear f, concurrence sigma ~ 1/sqrt(nbins)", ok,
              f"|jk - sem| = {abs(float(e) - sem):.1e}, ratios {ratios[0]:.2f}, {ratios[1]:.2f}")
    assert ok


def test_c9_determinism(tmp_path, criterion):
    cfg = config({"kind": "tfim", "beta": 4.0, "lambda": 0.5, "h_x": 0.1}, 4, 4, [(1, 0)], 2_000, chains=2)
    runner.run_point(cfg, tmp_path / "a")
    runner.run_point(cfg, tmp_path / "b")
    files = ["chain_0.bins", "chain_1.bins", "summary.tsv"]
    ok = all((tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes() for f in files)
    criterion("C9 identical output under a fixed seed", ok)
    assert ok
