"""SSE Markov chain: state, updates, sweeps and bit-exact checkpoints."""
from __future__ import annotations

import hashlib
import io
import json
import logging
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import _kernels as K
from .lattice import LatticeGeometry
from .model import XXZ, LoopRules, ModelSpec, VertexTable, directed_loop_table, fingerprint, vertex_table

INITIAL_CUTOFF = 20
CUTOFF_HEADROOM = 1.25
LOOP_CAP_LEGS = 100  # loops longer than this many legs per slot are aborted
LEG_TARGET = 2.0  # legs visited per sweep, in units of n
EMA_WEIGHT = 0.1
SLICE_BUDGET = 2**20
BOUNCE_WARN = 0.2

log = logging.getLogger(__name__)


@dataclass
class SseState:
    spins: np.ndarray
    opstring: np.ndarray
    n: int
    rng: np.random.Generator
    sweep_count: int = 0
    loops_per_sweep: int = 1
    legs_ema: float = 0.0
    aborted_loops: int = 0
    last_loop_stats: tuple = field(default=(0, 0), compare=False, repr=False)

    @property
    def M(self) -> int:
        return len(self.opstring)

    def copy(self) -> "SseState":
        rng = np.random.Generator(np.random.PCG64())
        rng.bit_generator.state = self.rng.bit_generator.state
        return SseState(self.spins.copy(), self.opstring.copy(), self.n, rng, self.sweep_count,
                        self.loops_per_sweep, self.legs_ema, self.aborted_loops)


@dataclass
class LoopTrace:
    """Outcome of one off-diagonal update pass.

    ``transverse[r]`` is the per-sweep estimate of the translation-averaged
    <sx_i sx_j + sy_i sy_j> at separation index ``r`` (XXZ only).
    """

    loops: int
    legs: int
    aborted: int
    transverse: np.ndarray = field(repr=False)


class Sampler:
    """Model-derived, read-only data shared by every chain of one simulation."""

    def __init__(self, spec: ModelSpec, geometry: LatticeGeometry, rules: LoopRules | None = None):
        self.spec = spec
        self.geometry = geometry
        self.table: VertexTable = vertex_table(spec, geometry)
        self.is_xxz = spec.kind == XXZ
        if self.is_xxz:
            self.rules = rules if rules is not None else directed_loop_table(self.table)
            self.cum = self.rules.cumulative()
            if self.rules.max_bounce > BOUNCE_WARN:
                # heavy bouncing makes loop lengths heavy-tailed; capped loops then bias the
                # transverse estimator. epsilon >= 1 - |delta| gives bounce-free rules.
                log.warning("directed-loop bounce probability %.2f at delta=%g, epsilon=%g; consider epsilon >= %g",
                            self.rules.max_bounce, spec.delta, spec.epsilon, max(0.0, 1 - abs(spec.delta)))
        else:
            self.rules = None
            self.cum = np.zeros((1, 16, 4, 4))
        self.sepidx = geometry.separation_index()
        self.parity = geometry.parity()
        N = geometry.N
        self.nslices = max(1, SLICE_BUDGET // (N * N))
        self.fingerprint = fingerprint(spec, geometry)

    @property
    def N(self) -> int:
        return self.geometry.N

    def observable_layout(self) -> tuple[list[str], list[str]]:
        """Names of per-sweep scalars and of per-separation channel arrays."""
        scalars = ["n", "n2", "energy", "m", "abs_m", "m2", "ms", "abs_ms", "ms2"]
        if self.is_xxz:
            return scalars, ["zz", "xpy"]
        return scalars + ["z"], ["xx", "zz", "yy", "zx"]

    def n_observables(self) -> int:
        s, c = self.observable_layout()
        return len(s) + len(c) * self.N

    def run(self, state: SseState, nsweeps: int) -> np.ndarray:
        """Run ``nsweeps`` sweeps and return the mean observable vector."""
        N = self.N
        t = self.table
        scal = np.zeros(2)
        mags = np.zeros(6)
        spec = self.spec
        if self.is_xxz:
            zz = np.zeros(N)
            xpy = np.zeros(N)
            cap = LOOP_CAP_LEGS * state.M // 2
            n, loops, legs, aborted = K.run_block_xxz(
                state.spins, state.opstring, state.n, nsweeps, spec.beta, t.bond_sites, t.bond_class, t.diag,
                self.cum, state.loops_per_sweep, cap, self.sepidx, self.parity, self.nslices, state.rng,
                scal, zz, xpy, mags)
            state.aborted_loops += aborted
            state.last_loop_stats = (int(loops), int(legs))
            chans = [zz, xpy]
            extra = []
        else:
            xx = np.zeros(N)
            zz = np.zeros(N)
            yy = np.zeros(N)
            zx = np.zeros(N)
            flip1 = np.zeros(1)
            n, _ = K.run_block_tfim(
                state.spins, state.opstring, state.n, nsweeps, spec.beta, t.bond_sites, t.bond_class, t.diag,
                self.sepidx, self.parity, self.nslices, state.rng, scal, xx, zz, yy, zx, mags, flip1)
            chans = [xx, zz, yy, zx]
            extra = [flip1[0]]
        state.n = int(n)
        state.sweep_count += nsweeps
        nmean = scal[0] / nsweeps
        energy = (t.total_constant - nmean / spec.beta) / N
        vec = np.concatenate([[nmean, scal[1] / nsweeps, energy], mags / nsweeps, np.asarray(extra) / nsweeps,
                              *[c / nsweeps for c in chans]])
        return vec


def init_state(sampler: Sampler, seed) -> SseState:
    """Random spins from a PCG64 stream seeded by ``seed``; empty operator string."""
    rng = np.random.Generator(np.random.PCG64(seed))
    spins = np.where(rng.random(sampler.N) < 0.5, -1, 1).astype(np.int64)
    opstring = np.full(INITIAL_CUTOFF, K.IDENTITY, dtype=np.int64)
    return SseState(spins, opstring, 0, rng)


def diagonal_update(state: SseState, sampler: Sampler) -> SseState:
    t = sampler.table
    nsite = 0 if sampler.is_xxz else sampler.N
    state.n = int(K.diagonal_update(state.spins, state.opstring, state.n, sampler.spec.beta, t.bond_sites,
                                    t.bond_class, t.diag, nsite, t.site_weight, state.rng))
    return state


def loop_update(state: SseState, sampler: Sampler) -> LoopTrace:
    """Directed loops (XXZ) or a cluster pass (TFIM) on the current string."""
    t = sampler.table
    acc = np.zeros(sampler.N)
    if sampler.is_xxz:
        cap = LOOP_CAP_LEGS * state.M // 2
        done, legs, aborted = K.loop_update(state.spins, state.opstring, state.n, t.bond_sites, t.bond_class,
                                           sampler.cum, state.loops_per_sweep, cap, sampler.sepidx, acc, state.rng)
        state.aborted_loops += aborted
        if done:
            acc *= 4.0 / (done * sampler.N)
        return LoopTrace(int(done), int(legs), int(aborted), acc)
    clusters = K.cluster_update(state.spins, state.opstring, state.n, t.bond_sites, t.bond_class, t.diag, state.rng)
    return LoopTrace(int(clusters), 0, 0, acc)


def adjust_cutoff(state: SseState) -> None:
    """Grow M to ceil(1.25 n), padding with identities; M never shrinks."""
    target = math.ceil(CUTOFF_HEADROOM * state.n)
    if target > state.M:
        pad = np.full(target - state.M, K.IDENTITY, dtype=np.int64)
        state.opstring = np.concatenate([state.opstring, pad])


def sweep(state: SseState, sampler: Sampler, thermalize: bool = False) -> np.ndarray:
    """One diagonal pass plus the off-diagonal pass, with measurements.

    During thermalization the cutoff grows and the number of loops per sweep
    is retuned so that about ``2 n`` legs are visited per sweep.
    """
    vec = sampler.run(state, 1)
    if thermalize:
        adjust_cutoff(state)
        if sampler.is_xxz:
            _tune_loops(state)
    return vec


def _tune_loops(state: SseState) -> None:
    loops, legs = state.last_loop_stats
    if loops:
        per_loop = legs / loops
        state.legs_ema = per_loop if state.legs_ema == 0 else (1 - EMA_WEIGHT) * state.legs_ema + EMA_WEIGHT * per_loop
    if state.legs_ema > 0 and state.n > 0:
        state.loops_per_sweep = max(1, int(round(LEG_TARGET * state.n / state.legs_ema)))


def thermalize(state: SseState, sampler: Sampler, nsweeps: int) -> SseState:
    for _ in range(nsweeps):
        sweep(state, sampler, thermalize=True)
    return state


def check_invariants(state: SseState, sampler: Sampler) -> None:
    """Raise AssertionError if time periodicity or leg consistency is violated."""
    t = sampler.table
    nb = t.n_bonds
    s = state.spins.copy()
    n = 0
    for op in state.opstring:
        if op == K.IDENTITY:
            continue
        n += 1
        term = op >> 1
        if op & 1:
            if term < nb:
                i, j = t.bond_sites[term]
                assert t.vertex[t.bond_class[term], _vertex_code(s[i], s[j], -s[i], -s[j])] > 0, "forbidden vertex"
                s[i] *= -1
                s[j] *= -1
            else:
                s[term - nb] *= -1
        elif term < nb:
            i, j = t.bond_sites[term]
            assert t.diag[t.bond_class[term], (s[i] > 0) + 2 * (s[j] > 0)] > 0, "zero-weight diagonal vertex"
    assert n == state.n, f"operator count {n} != n={state.n}"
    assert n <= state.M
    assert np.array_equal(s, state.spins), "propagated spins do not return to the initial state"


def _vertex_code(a, b, c, d) -> int:
    return int(a > 0) | int(b > 0) << 1 | int(c > 0) << 2 | int(d > 0) << 3


# ---------------------------------------------------------------------------
# checkpoints

MAGIC = b"SSECKPT\x00"
VERSION = 1
_HEADER = struct.Struct("<8sI32sQ32s")


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, state: SseState, sampler: Sampler, accumulators: dict[str, np.ndarray] | None = None) -> None:
    """Write a versioned binary checkpoint.

    Layout (little endian): 8-byte magic ``SSECKPT\\0``, uint32 version,
    32-byte SHA-256 model fingerprint, uint64 payload length, 32-byte SHA-256
    of the payload, then the payload: an uncompressed ``.npz`` archive holding
    ``spins``, ``opstring``, ``meta`` (JSON bytes: n, counters, RNG state) and
    one ``acc/<name>`` array per accumulator.
    """
    meta = {
        "n": state.n,
        "sweep_count": state.sweep_count,
        "loops_per_sweep": state.loops_per_sweep,
        "legs_ema": float(state.legs_ema).hex(),
        "aborted_loops": state.aborted_loops,
        "rng": _rng_state_to_json(state.rng),
    }
    arrays = {"spins": state.spins, "opstring": state.opstring,
              "meta": np.frombuffer(json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8)}
    for k, v in (accumulators or {}).items():
        arrays[f"acc/{k}"] = np.asarray(v)
    buf = io.BytesIO()
    np.savez(buf, **arrays)
    payload = buf.getvalue()
    header = _HEADER.pack(MAGIC, VERSION, sampler.fingerprint, len(payload), hashlib.sha256(payload).digest())
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(header + payload)
    tmp.replace(path)


def load_checkpoint(path, sampler: Sampler) -> tuple[SseState, dict[str, np.ndarray]]:
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise CheckpointError(f"{path}: truncated header")
    magic, version, fp, length, digest = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    if version != VERSION:
        raise CheckpointError(f"{path}: checkpoint version {version}, this build reads version {VERSION}")
    if fp != sampler.fingerprint:
        raise CheckpointError(f"{path}: model fingerprint does not match the configured model")
    payload = data[_HEADER.size:]
    if len(payload) != length:
        raise CheckpointError(f"{path}: payload is {len(payload)} bytes, header says {length}")
    if hashlib.sha256(payload).digest() != digest:
        raise CheckpointError(f"{path}: payload checksum mismatch (corrupt file)")
    with np.load(io.BytesIO(payload), allow_pickle=False) as z:
        arrays = {k: z[k] for k in z.files}
    meta = json.loads(arrays.pop("meta").tobytes().decode())
    rng = _rng_from_json(meta["rng"])
    state = SseState(
        spins=arrays.pop("spins").astype(np.int64),
        opstring=arrays.pop("opstring").astype(np.int64),
        n=int(meta["n"]),
        rng=rng,
        sweep_count=int(meta["sweep_count"]),
        loops_per_sweep=int(meta["loops_per_sweep"]),
        legs_ema=float.fromhex(meta["legs_ema"]),
        aborted_loops=int(meta["aborted_loops"]),
    )
    acc = {k[4:]: v for k, v in arrays.items() if k.startswith("acc/")}
    return state, acc


def _rng_state_to_json(rng: np.random.Generator) -> dict:
    st = rng.bit_generator.state
    return {"bit_generator": st["bit_generator"], "state": str(st["state"]["state"]),
            "inc": str(st["state"]["inc"]), "has_uint32": st["has_uint32"], "uinteger": st["uinteger"]}


def _rng_from_json(d: dict) -> np.random.Generator:
    if d["bit_generator"] != "PCG64":
        raise CheckpointError(f"unsupported bit generator {d['bit_generator']}")
    rng = np.random.Generator(np.random.PCG64())
    rng.bit_generator.state = {"bit_generator": "PCG64",
                               "state": {"state": int(d["state"]), "inc": int(d["inc"])},
                               "has_uint32": int(d["has_uint32"]), "uinteger": int(d["uinteger"])}
    return rng
