"""Binned Monte Carlo estimates, jackknife errors and the correlation table.

A run produces one row of observable means per bin. ``CorrelationTable`` keeps
those rows for the scalars and for every requested separation, knows how to
turn a row of means into the Pauli channel map of one site pair, and reads and
writes the plain-text bin dump.

Bin dump layout::

    # sseconc-bins 1
    # model: {...json...}
    # geometry: {"Lx": 4, "Ly": 4, "periodic": true}
    # seed: 12345
    # chain: 0
    # bin_size: 100
    n energy ... zz@1,0 xpy@1,0 ...
    <one whitespace-separated row per bin, values printed with 17 significant digits>
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from .lattice import LatticeGeometry, build_lattice, canonical_separation
from .model import TFIM, XXZ, ModelSpec

DEFAULT_BINS = 100
DUMP_MAGIC = "# sseconc-bins 1"

SYMMETRIC = "symmetric"
BROKEN = "broken"

# Per-separation channels stored for each model (XXZ: sz basis, TFIM: sx basis
# translated back to physical Pauli labels).
STORED_CHANNELS = {XXZ: ("zz", "xpy"), TFIM: ("xx", "zz", "yy", "zx", "xz")}


@dataclass(frozen=True)
class EstimateWithError:
    value: float
    sigma: float
    nbins: int

    def zscore(self, reference: float) -> float:
        if self.sigma == 0:
            return 0.0 if self.value == reference else float("inf")
        return (self.value - reference) / self.sigma

    def __format__(self, spec: str) -> str:
        spec = spec or ".6g"
        return f"{self.value:{spec}} +- {self.sigma:{spec}}"


@dataclass
class BinnedSeries:
    bin_size: int
    means: np.ndarray

    def __post_init__(self):
        self.means = np.asarray(self.means, dtype=float)

    @property
    def count(self) -> int:
        return len(self.means)


def bin_series(samples, nbins: int = DEFAULT_BINS) -> BinnedSeries:
    """Cut a per-sweep time series into ``nbins`` equal consecutive bins; the remainder is dropped."""
    samples = np.asarray(samples, dtype=float)
    size = len(samples) // nbins
    if size == 0:
        raise ValueError(f"{len(samples)} samples cannot fill {nbins} bins")
    used = samples[: size * nbins]
    return BinnedSeries(size, used.reshape(nbins, size, *samples.shape[1:]).mean(axis=1))


def _as_bin_matrix(data) -> np.ndarray:
    if isinstance(data, BinnedSeries):
        arr = data.means
    elif isinstance(data, (list, tuple)) and data and isinstance(data[0], BinnedSeries):
        arr = np.column_stack([s.means for s in data])
    else:
        arr = np.asarray(data, dtype=float)
    if arr.ndim == 1:
        arr = arr[:, None]
    return arr


def jackknife(data, f: Callable | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Delete-one jackknife of ``f(bin-mean vector)``.

    ``data`` is an ``(nbins, k)`` array, a BinnedSeries or a list of them. The
    value is ``f`` of the full mean; the error is
    ``sqrt((n-1)/n * sum_i (f_i - mean f_i)^2)`` over the leave-one-out means.
    Returns arrays shaped like ``f``'s output.
    """
    bins = _as_bin_matrix(data)
    nb = bins.shape[0]
    if nb < 2:
        raise ValueError(f"jackknife needs at least 2 bins, got {nb}")
    if f is None:
        f = _identity
    total = bins.sum(axis=0)
    value = np.asarray(f(total / nb), dtype=float)
    loo = (total[None, :] - bins) / (nb - 1)
    thetas = np.array([np.asarray(f(row), dtype=float) for row in loo])
    dev = thetas - thetas.mean(axis=0)
    sigma = np.sqrt((nb - 1) / nb * np.sum(dev * dev, axis=0))
    return value, sigma


def _identity(x):
    return x[0] if len(x) == 1 else x


def jackknife_estimate(data, f: Callable | None = None) -> EstimateWithError:
    value, sigma = jackknife(data, f)
    if value.ndim:
        raise ValueError("f must return a scalar; use jackknife() for vector-valued functions")
    return EstimateWithError(float(value), float(sigma), _as_bin_matrix(data).shape[0])


def column_name(channel: str, sep: tuple[int, int]) -> str:
    return f"{channel}@{sep[0]},{sep[1]}"


def parse_column(name: str) -> tuple[str, tuple[int, int] | None]:
    if "@" not in name:
        return name, None
    ch, rest = name.split("@")
    dx, dy = rest.split(",")
    return ch, (int(dx), int(dy))


@dataclass
class CorrelationTable:
    """Bin means for scalars and per-separation channels of one run (or merged runs)."""

    model: ModelSpec
    geometry: LatticeGeometry
    columns: list[str]
    bins: np.ndarray
    bin_size: int
    seed: int = 0
    chains: list[int] = field(default_factory=lambda: [0])

    def __post_init__(self):
        self.bins = np.atleast_2d(np.asarray(self.bins, dtype=float))
        if self.bins.shape[1] != len(self.columns):
            raise ValueError(f"{self.bins.shape[1]} data columns for {len(self.columns)} names")
        self._index = {c: k for k, c in enumerate(self.columns)}

    @property
    def nbins(self) -> int:
        return self.bins.shape[0]

    @property
    def separations(self) -> list[tuple[int, int]]:
        seen = []
        for c in self.columns:
            _, sep = parse_column(c)
            if sep is not None and sep not in seen:
                seen.append(sep)
        return seen

    def index(self, name: str) -> int:
        try:
            return self._index[name]
        except KeyError:
            raise KeyError(f"column {name!r} not in table; available: {', '.join(self.columns)}") from None

    def series(self, name: str) -> BinnedSeries:
        return BinnedSeries(self.bin_size, self.bins[:, self.index(name)])

    def means(self) -> np.ndarray:
        return self.bins.mean(axis=0)

    def estimate(self, name: str) -> EstimateWithError:
        return jackknife_estimate(self.series(name))

    def estimate_fn(self, f: Callable[[np.ndarray], float]) -> EstimateWithError:
        """Jackknife of an arbitrary function of the full mean row."""
        value, sigma = jackknife(self.bins, f)
        return EstimateWithError(float(value), float(sigma), self.nbins)

    @classmethod
    def from_rows(cls, sampler, rows, separations, seed: int = 0, chain: int = 0, bin_size: int = 1):
        """Keep the scalars and the requested separations of raw ``Sampler.run`` rows."""
        rows = np.atleast_2d(np.asarray(rows, dtype=float))
        scalars, channels = sampler.observable_layout()
        geom = sampler.geometry
        N = geom.N
        ns = len(scalars)
        seps = [canonical_separation(geom, s) for s in separations]
        cols = list(scalars)
        data = [rows[:, :ns]]
        raw = {ch: rows[:, ns + k * N: ns + (k + 1) * N] for k, ch in enumerate(channels)}
        for sep in seps:
            r = sep[0] + geom.Lx * sep[1]
            rneg = _neg_index(geom, sep)
            for ch in STORED_CHANNELS[sampler.spec.kind]:
                cols.append(column_name(ch, sep))
                if ch == "xz":
                    data.append(raw["zx"][:, rneg:rneg + 1])
                else:
                    data.append(raw[ch][:, r:r + 1])
        return cls(sampler.spec, geom, cols, np.hstack(data), bin_size, seed, [chain])

    # -- merging and dumps ---------------------------------------------------

    @staticmethod
    def merge(tables: Sequence["CorrelationTable"]) -> "CorrelationTable":
        """Pool independent chains by concatenating their bins (order does not affect estimates)."""
        if not tables:
            raise ValueError("nothing to merge")
        first = tables[0]
        for t in tables[1:]:
            if t.columns != first.columns:
                raise ValueError("cannot merge tables with different columns")
            if t.model != first.model or (t.geometry.Lx, t.geometry.Ly) != (first.geometry.Lx, first.geometry.Ly):
                raise ValueError("cannot merge tables from different models or lattices")
            if t.bin_size != first.bin_size:
                raise ValueError("cannot merge tables with different bin sizes")
        chains = [c for t in tables for c in t.chains]
        return CorrelationTable(first.model, first.geometry, list(first.columns),
                                np.vstack([t.bins for t in tables]), first.bin_size, first.seed, chains)

    def header(self) -> list[str]:
        geom = {"Lx": self.geometry.Lx, "Ly": self.geometry.Ly, "periodic": self.geometry.periodic}
        return [
            DUMP_MAGIC,
            f"# model: {json.dumps(self.model.to_dict(), sort_keys=True)}",
            f"# geometry: {json.dumps(geom, sort_keys=True)}",
            f"# seed: {self.seed}",
            f"# chain: {','.join(str(c) for c in self.chains)}",
            f"# bin_size: {self.bin_size}",
        ]

    def write(self, path) -> None:
        lines = self.header() + [" ".join(self.columns)]
        lines += [" ".join(f"{v:.17g}" for v in row) for row in self.bins]
        Path(path).write_text("\n".join(lines) + "\n")

    @classmethod
    def read(cls, path) -> "CorrelationTable":
        text = Path(path).read_text().splitlines()
        if not text or text[0] != DUMP_MAGIC:
            raise ValueError(f"{path}: not a bin dump (missing '{DUMP_MAGIC}' header)")
        meta = {}
        k = 1
        while k < len(text) and text[k].startswith("#"):
            key, _, val = text[k][2:].partition(": ")
            meta[key] = val
            k += 1
        try:
            model = ModelSpec(**json.loads(meta["model"]))
            g = json.loads(meta["geometry"])
            geometry = build_lattice(g["Lx"], g["Ly"], g["periodic"])
            columns = text[k].split()
            rows = np.array([[float(v) for v in line.split()] for line in text[k + 1:] if line.strip()])
            return cls(model, geometry, columns, rows, int(meta["bin_size"]), int(meta["seed"]),
                       [int(c) for c in meta["chain"].split(",")])
        except (KeyError, IndexError, ValueError) as exc:
            raise ValueError(f"{path}: malformed bin dump ({exc})") from exc

    # -- physics views -------------------------------------------------------

    def staggered_moment(self, means: np.ndarray | None = None) -> float:
        return staggered_moment(self, self.means() if means is None else means)

    def pair_channels(self, means: np.ndarray, sep, mode: str = SYMMETRIC) -> dict:
        return pair_channels(self, means, sep, mode)


def _neg_index(geom: LatticeGeometry, sep) -> int:
    dx, dy = (-sep[0]) % geom.Lx, (-sep[1]) % geom.Ly
    return dx + geom.Lx * dy


def _sep_parity(sep) -> int:
    return 1 if (sep[0] + sep[1]) % 2 == 0 else -1


def order_parameter_factor(model: ModelSpec) -> float:
    """Components of the order parameter hidden from a single-axis estimator.

    At the isotropic points the order can point anywhere on the sphere, so the
    z-axis structure factor sees a third of it.
    """
    if model.kind == XXZ and abs(abs(model.delta) - 1.0) < 1e-12:
        return 3.0
    return 1.0


def staggered_moment(table: CorrelationTable, means: np.ndarray) -> float:
    """Order-parameter magnitude in Pauli units.

    XXZ with a staggered field: the measured staggered mean. Otherwise the
    root of the squared order parameter (staggered for antiferromagnets,
    uniform for ferromagnets and for the TFIM), times the isotropy factor.
    """
    model = table.model
    ix = table.index
    if model.kind == XXZ and model.h_stag > 0:
        return abs(float(means[ix("ms")]))
    ferro = model.kind == TFIM or model.delta < 0
    sq = means[ix("m2")] if ferro else means[ix("ms2")]
    return float(np.sqrt(max(order_parameter_factor(model) * sq, 0.0)))


def pair_channels(table: CorrelationTable, means: np.ndarray, sep, mode: str = SYMMETRIC) -> dict:
    """All 15 Pauli channels of the pair ``(i, i + sep)`` with ``i`` on the even sublattice.

    ``mode='symmetric'`` sets single-site moments that a symmetry of the
    Hamiltonian forces to zero explicitly to zero and uses measured means for
    the rest. ``mode='broken'`` replaces the vanishing order-parameter moments
    by the estimated order parameter, aligned by sublattice (XXZ |delta| >= 1)
    or uniformly (TFIM, where the sz-sx channels become <sz><sx>). At the isotropic points the ordered part of the
    transverse correlators, m_s^2/3 each, is moved into zz so the order points
    along z; elsewhere correlators are unchanged.
    """
    if mode not in (SYMMETRIC, BROKEN):
        raise ValueError(f"mode must be '{SYMMETRIC}' or '{BROKEN}', got {mode!r}")
    model = table.model
    sep = canonical_separation(table.geometry, sep)
    ix = table.index

    def col(ch):
        return float(means[ix(column_name(ch, sep))])

    par = _sep_parity(sep)
    out = {(a, b): 0.0 for a in "0xyz" for b in "0xyz" if (a, b) != ("0", "0")}
    if model.kind == XXZ:
        half = 0.5 * col("xpy")
        out[("x", "x")] = half
        out[("y", "y")] = half
        out[("z", "z")] = col("zz")
        if model.h_stag > 0:
            m, ms = means[ix("m")], means[ix("ms")]
            zi, zj = m + ms, m + par * ms
        elif mode == BROKEN and abs(model.delta) >= 1.0:
            s = staggered_moment(table, means)
            o = 1 if model.delta < 0 else par
            zi, zj = s, o * s
            k = order_parameter_factor(model)
            if k > 1:
                # isotropic point: rotate the ordered part of every axis onto z
                ordered = s * s * o / k
                out[("x", "x")] -= ordered
                out[("y", "y")] -= ordered
                out[("z", "z")] += (k - 1) * ordered
        else:
            zi = zj = 0.0
        out[("z", "0")] = float(zi)
        out[("0", "z")] = float(zj)
        return out
    for ch in ("xx", "yy", "zz"):
        out[(ch[0], ch[1])] = col(ch)
    z = float(means[ix("z")])
    out[("z", "0")] = out[("0", "z")] = z
    if model.h_x > 0:
        x = float(means[ix("m")])
        out[("z", "x")] = col("zx")
        out[("x", "z")] = col("xz")
    elif mode == BROKEN:
        x = staggered_moment(table, means)
        # connected sz-sx part is not measurable in the symmetric run; take it as zero
        out[("z", "x")] = out[("x", "z")] = z * x
    else:
        x = 0.0
    out[("x", "0")] = out[("0", "x")] = x
    return out


REQUIRED = {
    "cf": "concurrence of formation",
    "ca": "concurrence of assistance",
    "el": "localizable-entanglement bounds",
}


def require_channels(table: CorrelationTable, separations: Iterable) -> None:
    """Raise naming the formula and the missing column when a table cannot feed the pipeline."""
    needed = ["m", "ms", "m2", "ms2"] + (["z"] if table.model.kind == TFIM else [])
    for sep in separations:
        sep = canonical_separation(table.geometry, sep)
        needed += [column_name(ch, sep) for ch in STORED_CHANNELS[table.model.kind]]
    for name in needed:
        if name not in table._index:
            raise KeyError(f"column {name!r} is missing; the {REQUIRED['cf']}, {REQUIRED['ca']} and "
                           f"{REQUIRED['el']} all need it")


def scalar_observables(table: CorrelationTable) -> dict[str, EstimateWithError]:
    """Energy per site, mean expansion order, magnetizations and the order-parameter estimate."""
    out = {name: table.estimate(name) for name in ("energy", "n", "m", "abs_m", "m2", "ms", "abs_ms", "ms2")}
    if table.model.kind == TFIM:
        out["z"] = table.estimate("z")
    out["m_s"] = table.estimate_fn(lambda row: staggered_moment(table, row))
    return out
