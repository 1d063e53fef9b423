"""Orchestration: chains, single points, parameter sweeps, ED validation and analysis.

Output directory of one point::

    config.json         resolved configuration (used by ``resume``)
    chain_<k>.bins      per-chain bin dump (see ``estimators``)
    chain_<k>.ckpt      latest checkpoint of chain k (kept after completion)
    summary.tsv         merged jackknife estimates of every column
"""
from __future__ import annotations

import hashlib
import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from . import ed
from . import entanglement as ent
from .config import RunConfig, from_dict
from .engine import Sampler, init_state, load_checkpoint, save_checkpoint, sweep
from .estimators import (SYMMETRIC, CorrelationTable, EstimateWithError, jackknife, pair_channels,
                         parse_column, require_channels, scalar_observables, staggered_moment)
from .lattice import site_pairs_at_separation
from .model import TFIM, XXZ, vertex_table

log = logging.getLogger(__name__)

WORKERS_ENV = "SSECONC_WORKERS"
Z_FAIL = 4.0


class RunInterrupted(RuntimeError):
    """Raised when a run stops early on purpose (``stop_after``); checkpoints are on disk."""


class ValidationFailure(RuntimeError):
    pass


def worker_count() -> int:
    raw = os.environ.get(WORKERS_ENV, "1")
    try:
        return max(1, int(raw))
    except ValueError:
        raise ValueError(f"{WORKERS_ENV} must be a positive integer, got {raw!r}") from None


def chain_seed(master: int, chain: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([master, chain])


def point_seed(master: int, index: int) -> int:
    return int(np.random.SeedSequence([master, 2**32 + index]).generate_state(1, np.uint64)[0])


@dataclass
class ChainResult:
    table: CorrelationTable
    aborted_loops: int
    cutoff: int
    loops_per_sweep: int


def run_chain(cfg: RunConfig, chain: int, out: Path | None = None, resume: bool = False,
              stop_after: int | None = None) -> ChainResult:
    """Thermalize and sample one Markov chain, checkpointing every ``cfg.checkpoint_every`` sweeps.

    Checkpoints are only written at sweep (thermalization) or bin (sampling)
    boundaries. ``stop_after`` aborts with RunInterrupted once that many sweeps
    have run in this call, right after a checkpoint.
    """
    sampler = Sampler(cfg.model, cfg.geometry())
    ckpt = bins_path = None
    if out is not None:
        ckpt = out / f"chain_{chain}.ckpt"
        bins_path = out / f"chain_{chain}.bins"
        if resume and bins_path.exists():
            return ChainResult(CorrelationTable.read(bins_path), -1, -1, -1)
    rows: list[np.ndarray] = []
    therm_done = 0
    if resume and ckpt is not None and ckpt.exists():
        state, acc = load_checkpoint(ckpt, sampler)
        therm_done = int(acc["progress"][0])
        rows = list(acc["rows"]) if acc["rows"].size else []
    else:
        state = init_state(sampler, chain_seed(cfg.seed, chain))

    every = cfg.checkpoint_every
    ran = 0
    since = 0

    def checkpoint():
        nonlocal since
        since = 0
        if ckpt is None:
            return
        width = sampler.n_observables()
        acc = {"progress": np.array([therm_done], dtype=np.int64),
               "rows": np.array(rows).reshape(len(rows), width)}
        save_checkpoint(ckpt, state, sampler, acc)
        if stop_after is not None and ran >= stop_after:
            raise RunInterrupted(f"chain {chain} stopped after {ran} sweeps")

    while therm_done < cfg.thermalization:
        sweep(state, sampler, thermalize=True)
        therm_done += 1
        ran += 1
        since += 1
        if every and since >= every:
            checkpoint()
    bs = cfg.bin_size
    while len(rows) < cfg.bins:
        rows.append(sampler.run(state, bs))
        ran += bs
        since += bs
        if every and since >= every and len(rows) < cfg.bins:
            checkpoint()
    if every:
        checkpoint()
    table = CorrelationTable.from_rows(sampler, rows, cfg.separations, seed=cfg.seed, chain=chain, bin_size=bs)
    if bins_path is not None:
        table.write(bins_path)
    if state.aborted_loops:
        log.warning("chain %d: %d loops aborted at the length cap", chain, state.aborted_loops)
    return ChainResult(table, state.aborted_loops, state.M, state.loops_per_sweep)


def _chain_job(cfg_dict, chain, out, resume, stop_after):
    return run_chain(from_dict(cfg_dict), chain, None if out is None else Path(out), resume, stop_after)


@dataclass
class PointResult:
    config: RunConfig
    table: CorrelationTable
    chains: list[ChainResult]

    def summary(self) -> dict[str, EstimateWithError]:
        out = {c: self.table.estimate(c) for c in self.table.columns}
        out["m_s"] = scalar_observables(self.table)["m_s"]
        return out


def run_point(cfg: RunConfig, out=None, resume: bool = False, stop_after: int | None = None) -> PointResult:
    """All chains of one parameter point, merged; writes bins, summary and config when ``out`` is set."""
    outp = None
    if out is not None:
        outp = Path(out)
        outp.mkdir(parents=True, exist_ok=True)
        (outp / "config.json").write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n")
    args = [(cfg.to_dict(), k, None if outp is None else str(outp), resume, stop_after) for k in range(cfg.chains)]
    workers = min(worker_count(), cfg.chains)
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_chain_job, *zip(*args)))
    else:
        results = [_chain_job(*a) for a in args]
    table = CorrelationTable.merge([r.table for r in results])
    res = PointResult(cfg, table, results)
    if outp is not None:
        write_summary(outp / "summary.tsv", res)
    return res


def write_summary(path: Path, res: PointResult) -> None:
    cfg = res.config
    lines = [f"# sseconc {__version__}", f"# config_sha256: {cfg.digest()}", f"# seed: {cfg.seed}",
             f"# chains: {cfg.chains}", f"# model: {json.dumps(cfg.model.to_dict(), sort_keys=True)}",
             f"# lattice: {cfg.Lx}x{cfg.Ly}", "name\tvalue\tsigma\tnbins"]
    for name, est in res.summary().items():
        lines.append(f"{name}\t{est.value:.12g}\t{est.sigma:.12g}\t{est.nbins}")
    path.write_text("\n".join(lines) + "\n")


def read_summary(path) -> dict[str, EstimateWithError]:
    out = {}
    for line in Path(path).read_text().splitlines():
        if line.startswith("#") or line.startswith("name\t"):
            continue
        name, v, s, n = line.split("\t")
        out[name] = EstimateWithError(float(v), float(s), int(n))
    return out


def sweep_points(cfg: RunConfig) -> list[tuple[float, RunConfig]]:
    """One config per grid value with its own derived seed and output subdirectory."""
    if not cfg.sweep_parameter:
        raise ValueError("configuration has no [sweep] section")
    pts = []
    for k, v in enumerate(cfg.sweep_values):
        sub = cfg.with_parameter(cfg.sweep_parameter, v)
        sub = sub.with_overrides(seed=point_seed(cfg.seed, k), out=str(Path(cfg.out) / f"{cfg.sweep_parameter}={v:g}"))
        pts.append((v, sub))
    return pts


def run_sweep(cfg: RunConfig, resume: bool = False, stop_after: int | None = None) -> list[tuple[float, PointResult]]:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "sweep.json").write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n")
    results = []
    for v, sub in sweep_points(cfg):
        results.append((v, run_point(sub, sub.out, resume=resume, stop_after=stop_after)))
    return results


def resume(out) -> list:
    """Continue an interrupted ``run`` or ``sweep`` from the files in ``out``."""
    out = Path(out)
    if (out / "sweep.json").exists():
        cfg = from_dict(json.loads((out / "sweep.json").read_text()))
        return run_sweep(cfg, resume=True)
    if (out / "config.json").exists():
        cfg = from_dict(json.loads((out / "config.json").read_text()))
        return [(None, run_point(cfg, out, resume=True))]
    raise FileNotFoundError(f"{out} holds neither config.json nor sweep.json")


# ---------------------------------------------------------------------------
# validation against exact diagonalization

@dataclass
class ValidationRow:
    """One compared column. ``floor`` is the resolution of the run (one part in
    the number of sweeps) and stands in for the error when every bin agrees
    exactly, as for a sector the chain never left."""

    name: str
    estimate: EstimateWithError
    exact: float
    floor: float = 0.0

    @property
    def z(self) -> float:
        sigma = max(self.estimate.sigma, self.floor)
        if sigma == 0:
            return 0.0 if self.estimate.value == self.exact else float("inf")
        return (self.estimate.value - self.exact) / sigma


@dataclass
class ValidationReport:
    rows: list[ValidationRow]
    threshold: float = Z_FAIL

    @property
    def passed(self) -> bool:
        return all(abs(r.z) <= self.threshold for r in self.rows)

    @property
    def failures(self) -> list[str]:
        return [r.name for r in self.rows if abs(r.z) > self.threshold]

    def format(self) -> str:
        lines = [f"{'channel':<16}{'mc':>14}{'sigma':>12}{'exact':>14}{'z':>8}"]
        for r in self.rows:
            flag = "" if abs(r.z) <= self.threshold else "  FAIL"
            lines.append(f"{r.name:<16}{r.estimate.value:>14.6g}{r.estimate.sigma:>12.3g}{r.exact:>14.6g}"
                         f"{r.z:>8.2f}{flag}")
        lines.append("PASS" if self.passed else "FAIL: " + ", ".join(self.failures))
        return "\n".join(lines)


def exact_columns(cfg: RunConfig) -> dict[str, float]:
    """ED values for every column a run of ``cfg`` writes (where an exact counterpart exists)."""
    geom = cfg.geometry()
    spec = cfg.model
    st = ed.diagonalize(spec, geom)
    N = geom.N
    energy = float(np.dot(st.weights, st.energies))
    out = {"energy": energy / N, "n": spec.beta * (vertex_table(spec, geom).total_constant - energy)}
    axis = "z" if spec.kind == XXZ else "x"
    mags = ed.exact_staggered(spec, geom, axis)
    out.update(m=mags["m"], m2=mags["m2"], ms=mags["ms"], ms2=mags["ms2"])
    if spec.kind == TFIM:
        out["z"] = float(np.mean([ed.thermal_expectation(st, ed.site_operator(ed.PAULI["z"], i, N))
                                  for i in range(N)]))
    for sep in cfg.separations:
        pairs = site_pairs_at_separation(geom, sep)
        acc = {}
        for i, j in pairs:
            for k, v in ed.exact_pair_correlators(st, i, j).items():
                acc[k] = acc.get(k, 0.0) + v / len(pairs)
        tag = f"@{sep[0]},{sep[1]}"
        out["zz" + tag] = acc[("z", "z")]
        if spec.kind == XXZ:
            out["xpy" + tag] = acc[("x", "x")] + acc[("y", "y")]
        else:
            out["xx" + tag] = acc[("x", "x")]
            out["yy" + tag] = acc[("y", "y")]
            out["zx" + tag] = acc[("z", "x")]
            out["xz" + tag] = acc[("x", "z")]
    return out


def validate(cfg: RunConfig, result: PointResult | None = None, transform=None,
             threshold: float = Z_FAIL) -> ValidationReport:
    """Run MC (unless ``result`` is given) and compare every column with ED.

    ``transform`` may rewrite the merged table before comparison; tests use it
    as a negative control by corrupting one estimator.
    """
    if cfg.geometry().N > ed.MAX_SITES:
        raise ValueError(f"{cfg.geometry().N} sites exceeds the exact-diagonalization cap of {ed.MAX_SITES}")
    exact = exact_columns(cfg)
    if result is None:
        result = run_point(cfg)
    table = result.table if transform is None else transform(result.table)
    floor = 1.0 / (table.nbins * table.bin_size)
    rows = [ValidationRow(name, table.estimate(name), exact[name], floor) for name in table.columns if name in exact]
    return ValidationReport(rows, threshold)


# ---------------------------------------------------------------------------
# analysis

MEASURES = ent.PairMeasures.names() + ["cf_closed", "ca_closed", "s1"]


def _pair_pipeline(table: CorrelationTable, sep, mode: str, tol: float, psd: bool):
    kind = table.model.kind

    def f(row):
        ch = pair_channels(table, row, sep, mode)
        try:
            pm = ent.pair_measures(ch, tol=tol, psd_project=psd).as_array()
            if kind == XXZ:
                cf_c = ent.xxz_concurrence(ch[("x", "x")] + ch[("y", "y")], ch[("z", "z")], ch[("z", "0")],
                                           ch[("0", "z")])
                ca_c = ent.xxz_assistance(ch[("z", "z")], ch[("z", "0")], ch[("0", "z")])
            else:
                cf_c = ent.tfim_concurrence(ch[("x", "x")], ch[("y", "y")], ch[("z", "z")], ch[("z", "0")],
                                            ch[("0", "z")])
                ca_c = np.nan
            z, x = ch[("z", "0")], ch[("x", "0")]
            rho1 = 0.5 * (ent.PAULI["0"] + z * ent.PAULI["z"] + x * ent.PAULI["x"])
            s1 = ent.single_site_entropy(rho1, tol)
        except ent.InvalidStateError:
            return np.full(len(MEASURES), np.nan)
        return np.concatenate([pm, [cf_c, ca_c, s1]])
    return f


def analyze_table(table: CorrelationTable, mode: str = SYMMETRIC, scale: float = 1.0,
                  psd_project: bool = False, separations=None) -> list[dict]:
    """Entanglement measures with jackknife errors for every separation of a table.

    ``scale`` multiplies the reported C_F (presentation only, for comparing
    lattices of different coordination).
    """
    seps = table.separations if separations is None else separations
    require_channels(table, seps)
    m = table.model
    rows = []
    ms_val, ms_err = jackknife(table.bins, lambda r: staggered_moment(table, r))
    for sep in seps:
        cols = [table.index(c) for c in table.columns if parse_column(c)[1] == tuple(sep)]
        _, sig = jackknife(table.bins[:, cols])
        tol = max(ent.EXACT_TOL, float(np.max(sig)))
        val, err = jackknife(table.bins, _pair_pipeline(table, sep, mode, tol, psd_project))
        row = {"kind": m.kind, "beta": m.beta, "delta": m.delta, "lambda": m.lam, "h_x": m.h_x,
               "h_stag": m.h_stag, "Lx": table.geometry.Lx, "Ly": table.geometry.Ly, "dx": sep[0], "dy": sep[1],
               "mode": mode, "nbins": table.nbins, "m_s": float(ms_val), "m_s_err": float(ms_err)}
        for k, name in enumerate(MEASURES):
            s = scale if name in ("cf", "cf_arg", "cf_closed") else 1.0
            row[name] = float(val[k]) * s
            row[name + "_err"] = float(err[k]) * s
        rows.append(row)
    return rows


def _group_key(t: CorrelationTable):
    return (json.dumps(t.model.to_dict(), sort_keys=True), t.geometry.Lx, t.geometry.Ly, t.bin_size, tuple(t.columns))


def analyze(paths, mode: str = SYMMETRIC, scale: float = 1.0, psd_project: bool = False, out=None) -> list[dict]:
    """Read bin dumps (files or directories), merge chains of the same point, tabulate measures."""
    files = []
    for p in paths:
        p = Path(p)
        files += sorted(p.rglob("chain_*.bins")) if p.is_dir() else [p]
    if not files:
        raise FileNotFoundError("no bin files found")
    groups: dict = {}
    for f in files:
        t = CorrelationTable.read(f)
        groups.setdefault(_group_key(t), []).append(t)
    rows = []
    for key in sorted(groups):
        rows += analyze_table(CorrelationTable.merge(groups[key]), mode, scale, psd_project)
    if out is not None:
        write_analysis(out, rows, files, mode, scale, psd_project)
    return rows


def write_analysis(path, rows, files, mode, scale, psd_project) -> None:
    header = [f"# sseconc {__version__} analyze", f"# mode: {mode}", f"# cf_scale: {scale:g}",
              f"# psd_project: {str(psd_project).lower()}"]
    for f in files:
        header.append(f"# input: {Path(f).name} sha256={hashlib.sha256(Path(f).read_bytes()).hexdigest()[:16]}")
    if not rows:
        Path(path).write_text("\n".join(header) + "\n")
        return
    cols = list(rows[0])
    lines = header + ["\t".join(cols)]
    for r in rows:
        lines.append("\t".join(v if isinstance(v, str) else f"{v:.10g}" for v in (r[c] for c in cols)))
    Path(path).write_text("\n".join(lines) + "\n")
