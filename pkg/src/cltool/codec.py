"""Operational rateless codec: deterministic symbol streams plus decoders.

Every output symbol's graph neighborhood is a pure function of
(stream seed, symbol index) through a counter-mode PRF, so transmitter and
receiver derive identical graphs from indices alone, surviving loss and
reordering.  The PRF is fixed by this package (see ``SymbolPrf``): 64-byte
BLAKE2b blocks over ``b"CLT1" + seed_le64 + index_le64 + counter_le32``,
consumed as little-endian 64-bit words, with rejection sampling for bounded
draws.  Changing any of this breaks wire compatibility.

Decoders: a warm-startable peeling decoder for erasures and a flooding
sum-product decoder for soft (LLR) observations, plus the incremental
rateless session loop that feeds them.
"""

from __future__ import annotations

import hashlib
import math
import struct
from collections import deque
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .channel import BEC, ChannelModel
from .de_bec import EnsembleSpec
from .degree import DegreeDistribution

MAGIC = b"CLT1"
LLR_CLAMP = 30.0  # tanh-rule messages are clamped to +-30
RELIABLE_LLR = 15.0  # received symbols at least this confident gate the
# re-encoding consistency check
_CERTAIN_LLR = 10.0


class IntegrityError(ValueError):
    """Contradictory parity equations: the received values are corrupted."""


@dataclass(frozen=True)
class StreamSpec:
    """One rateless stream: shared seed, block size per position, ensemble."""

    seed: int
    m_per_position: int
    spec: EnsembleSpec

    def __post_init__(self):
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must fit in 64 bits")
        if self.m_per_position < 1:
            raise ValueError("m_per_position must be positive")

    @property
    def L(self) -> int:
        return self.spec.L

    @property
    def w(self) -> int:
        return self.spec.w

    @property
    def n_gen_positions(self) -> int:
        return self.spec.n_gen_positions

    @property
    def total_bits(self) -> int:
        return self.m_per_position * self.L


@dataclass(frozen=True)
class SymbolRecord:
    """Derived output symbol: graph data plus an optional channel observation.

    ``degree`` is the pre-pruning draw from the degree distribution;
    ``neighbors`` are the distinct surviving global bit indices (boundary
    picks dropped, duplicates collapsed) and may number fewer than degree.
    """

    index: int
    position: int
    degree: int
    neighbors: tuple
    value_or_llr: Optional[float] = None


class SymbolPrf:
    """Counter-mode deterministic byte stream for one (seed, index) pair."""

    __slots__ = ("_prefix", "_counter", "_buf", "_pos")

    def __init__(self, seed: int, index: int):
        self._prefix = MAGIC + seed.to_bytes(8, "little") + index.to_bytes(8, "little")
        self._counter = 0
        self._buf = b""
        self._pos = 0

    def _refill(self):
        self._buf = hashlib.blake2b(
            self._prefix + self._counter.to_bytes(4, "little"), digest_size=64
        ).digest()
        self._counter += 1
        self._pos = 0

    def u64(self) -> int:
        if self._pos + 8 > len(self._buf):
            self._refill()
        v = int.from_bytes(self._buf[self._pos : self._pos + 8], "little")
        self._pos += 8
        return v

    def unit(self) -> float:
        """Uniform float in [0, 1) with 64-bit resolution."""
        return self.u64() / 2.0**64

    def bounded(self, n: int) -> int:
        """Uniform integer in [0, n) via rejection sampling (no modulo bias)."""
        limit = 2**64 - (2**64 % n)
        while True:
            v = self.u64()
            if v < limit:
                return v % n


def derive_symbol(stream: StreamSpec, index: int) -> SymbolRecord:
    """Derive symbol ``index``'s position, degree, and pruned neighbor set.

    Draw order (fixed for wire compatibility): position uniform on the
    generator range, degree from the distribution via inverse CDF, then
    ``degree`` picks uniform with replacement over the m*w bits of the
    window [position-w+1, position]; out-of-range picks are dropped and
    duplicates collapsed.
    """
    prf = SymbolPrf(stream.seed, index)
    L, w, m = stream.L, stream.w, stream.m_per_position
    position = prf.bounded(stream.n_gen_positions)
    degree = stream.spec.dist.degree_from_uniform(prf.unit())
    neighbors = set()
    base = position - w + 1
    for _ in range(degree):
        r = prf.bounded(m * w)
        p = base + r // m
        if 0 <= p < L:
            neighbors.add(p * m + r % m)
    return SymbolRecord(index, position, degree, tuple(sorted(neighbors)))


def encode_symbol(stream: StreamSpec, index: int, info_bits) -> int:
    """XOR of the symbol's neighbor bits; an empty neighbor set encodes 0."""
    return encode_record(derive_symbol(stream, index), stream, info_bits)


def encode_record(record: SymbolRecord, stream: StreamSpec, info_bits) -> int:
    info_bits = np.asarray(info_bits)
    if info_bits.shape != (stream.total_bits,):
        raise ValueError(
            f"info_bits must have length {stream.total_bits}, got {info_bits.shape}"
        )
    v = 0
    for b in record.neighbors:
        v ^= int(info_bits[b])
    return v


@dataclass(frozen=True)
class DecodeResult:
    """Outcome of one decode attempt.

    ``bits`` holds the recovered information bits as int8 with -1 marking
    still-unknown positions; ``realized_rate`` is total bits over symbols
    consumed (inf when nothing was consumed yet).
    """

    status: str  # "decoded" | "stalled" | "max_iter"
    bits: np.ndarray
    symbols_used: int
    realized_rate: float
    extras: dict = field(default_factory=dict)


class PeelState:
    """Incremental peeling decoder state; add symbols, then run to exhaustion.

    Keeping the residual equations between batches makes warm-started
    rateless sessions cheap: each received symbol is reduced against the
    already-known bits exactly once.
    """

    def __init__(self, stream: StreamSpec):
        self.stream = stream
        self.bits = np.full(stream.total_bits, -1, dtype=np.int8)
        self.n_unknown = stream.total_bits
        self.adj = [[] for _ in range(stream.total_bits)]
        self.eq_count = []  # unknowns left in each equation
        self.eq_value = []  # residual value of each equation
        self.eq_members = []  # original unknown members (lazy filtering)
        self.queue = deque()
        self.symbols_seen = 0
        self.erased = 0
        self.steps = 0

    def add_symbol(self, record: SymbolRecord, value):
        """Feed one received symbol; value None means erased by the channel."""
        self.symbols_seen += 1
        if value is None:
            self.erased += 1
            return
        v = int(value)
        unknowns = []
        for b in record.neighbors:
            known = self.bits[b]
            if known >= 0:
                v ^= int(known)
            else:
                unknowns.append(b)
        if not unknowns:
            if v != 0:
                raise IntegrityError(
                    f"symbol {record.index}: fully determined equation has "
                    f"residual {v}"
                )
            return
        eq = len(self.eq_count)
        self.eq_count.append(len(unknowns))
        self.eq_value.append(v)
        self.eq_members.append(unknowns)
        for b in unknowns:
            self.adj[b].append(eq)
        if len(unknowns) == 1:
            self.queue.append(eq)

    def run(self, max_steps: Optional[int] = None) -> bool:
        """Peel until the queue drains; returns False if max_steps ran out."""
        while self.queue:
            if max_steps is not None and self.steps >= max_steps:
                return False
            eq = self.queue.popleft()
            count = self.eq_count[eq]
            if count == 0:
                if self.eq_value[eq] != 0:
                    raise IntegrityError("contradictory parity resolution")
                continue
            if count != 1:
                continue
            self.steps += 1
            bit = next(b for b in self.eq_members[eq] if self.bits[b] < 0)
            val = self.eq_value[eq]
            self.bits[bit] = val
            self.n_unknown -= 1
            for eq2 in self.adj[bit]:
                self.eq_count[eq2] -= 1
                if val:
                    self.eq_value[eq2] ^= 1
                c = self.eq_count[eq2]
                if c == 1:
                    self.queue.append(eq2)
                elif c == 0 and self.eq_value[eq2] != 0:
                    raise IntegrityError("contradictory parity resolution")
        return True

    def residual_ok(self) -> bool:
        """Stall postcondition: every live equation keeps >= 2 unknowns."""
        return all(c != 1 for c in self.eq_count)

    def result(self, exhausted: bool = True) -> DecodeResult:
        if self.n_unknown == 0:
            status = "decoded"
        elif exhausted:
            status = "stalled"
        else:
            status = "max_iter"
        used = self.symbols_seen
        rate = self.stream.total_bits / used if used else math.inf
        return DecodeResult(
            status,
            self.bits.copy(),
            used,
            rate,
            extras={
                "unknown": self.n_unknown,
                "erased": self.erased,
                "accepted": self.symbols_seen - self.erased,
                "steps": self.steps,
            },
        )


def peel_decode(stream: StreamSpec, received, max_steps: Optional[int] = None) -> DecodeResult:
    """Peel a batch of (index, value-or-None) erasure-channel observations."""
    state = PeelState(stream)
    for index, value in received:
        state.add_symbol(derive_symbol(stream, index), value)
    exhausted = state.run(max_steps)
    return state.result(exhausted)


def bp_decode(
    stream: StreamSpec,
    received,
    max_iter: int = 200,
    damping: float = 0.0,
    true_bits=None,
) -> DecodeResult:
    """Flooding sum-product on the realized graph from (index, LLR) pairs.

    Generator nodes apply the tanh rule over their neighbors plus their own
    channel LLR; information nodes sum incoming LLRs (they are never
    transmitted).  Messages are clamped to +-30.  Success is judged by genie
    comparison when true_bits is given (test mode), otherwise by convergence
    plus re-encoding consistency against confidently received symbols.
    """
    received = list(received)
    n_bits = stream.total_bits
    edge_sym, edge_bit, ch_llr = [], [], []
    for s, (index, llr) in enumerate(received):
        rec = derive_symbol(stream, index)
        ch_llr.append(llr)
        for b in rec.neighbors:
            edge_sym.append(s)
            edge_bit.append(b)
    n_sym = len(received)
    edge_sym = np.asarray(edge_sym, dtype=np.int64)
    edge_bit = np.asarray(edge_bit, dtype=np.int64)
    ch = np.clip(np.nan_to_num(np.asarray(ch_llr, dtype=float), posinf=LLR_CLAMP, neginf=-LLR_CLAMP), -LLR_CLAMP, LLR_CLAMP)
    t_ch = np.tanh(ch / 2.0)

    m_sb = np.zeros(len(edge_sym))
    iterations = 0
    converged = False
    for iterations in range(1, max_iter + 1):
        tot = np.bincount(edge_bit, weights=m_sb, minlength=n_bits)
        m_bs = np.clip(tot[edge_bit] - m_sb, -LLR_CLAMP, LLR_CLAMP)
        t = np.tanh(m_bs / 2.0)
        zero = t == 0.0
        zcount = np.bincount(edge_sym, weights=zero.astype(float), minlength=n_sym)
        prod_nz = t_ch * _segment_product(np.where(zero, 1.0, t), edge_sym, n_sym)
        ze = zcount[edge_sym]
        with np.errstate(divide="ignore", invalid="ignore"):
            excl = np.where(
                ze == 0.0,
                prod_nz[edge_sym] / np.where(zero, 1.0, t),
                np.where((ze == 1.0) & zero, prod_nz[edge_sym], 0.0),
            )
        excl = np.clip(excl, -1.0 + 1e-15, 1.0 - 1e-15)
        m_new = np.clip(2.0 * np.arctanh(excl), -LLR_CLAMP, LLR_CLAMP)
        if damping > 0.0:
            m_new = (1.0 - damping) * m_new + damping * m_sb
        delta = float(np.max(np.abs(m_new - m_sb))) if len(m_new) else 0.0
        m_sb = m_new
        if delta < 1e-6:
            converged = True
            break

    tot = np.bincount(edge_bit, weights=m_sb, minlength=n_bits)
    bits = (tot < 0.0).astype(np.int8)
    if true_bits is not None:
        decoded = bool(np.array_equal(bits, np.asarray(true_bits, dtype=np.int8)))
    else:
        decoded = converged and _reencode_consistent(
            received, stream, bits, edge_sym, edge_bit, ch, tot
        )
    status = "decoded" if decoded else ("stalled" if converged else "max_iter")
    used = len(received)
    rate = n_bits / used if used else math.inf
    return DecodeResult(
        status,
        bits,
        used,
        rate,
        extras={"iterations": iterations, "converged": converged, "bit_totals": tot},
    )


def _segment_product(values: np.ndarray, seg: np.ndarray, n_seg: int) -> np.ndarray:
    """Product of values grouped by segment id (log-domain for stability)."""
    sign = np.where(values < 0.0, -1.0, 1.0)
    neg = np.bincount(seg, weights=(values < 0.0).astype(float), minlength=n_seg)
    with np.errstate(divide="ignore"):
        logs = np.log(np.abs(values))
    logs = np.where(np.isfinite(logs), logs, -745.0)
    mag = np.exp(np.bincount(seg, weights=logs, minlength=n_seg))
    del sign
    return np.where(neg % 2 == 1, -mag, mag)


def _reencode_consistent(received, stream, bits, edge_sym, edge_bit, ch, tot) -> bool:
    """Hard decisions must satisfy every confidently received equation.

    Also requires every bit to carry a nonzero total (undetermined bits mean
    the neutral guess, never a decode) and at least one confident symbol.
    """
    if np.any(np.abs(tot) < 1e-9):
        return False
    if len(edge_sym):
        parity = np.bincount(
            edge_sym, weights=bits[edge_bit].astype(float), minlength=len(received)
        ).astype(np.int64) % 2
    else:
        parity = np.zeros(len(received), dtype=np.int64)
    reliable = np.abs(ch) >= min(RELIABLE_LLR, LLR_CLAMP)
    if not np.any(reliable):
        return False
    observed = (ch < 0.0).astype(np.int64)
    return bool(np.all(parity[reliable] == observed[reliable]))


def bec_certain_bits(result: DecodeResult) -> np.ndarray:
    """Bits decided with certainty by erasure-message BP (|total LLR| large)."""
    return np.abs(result.extras["bit_totals"]) > _CERTAIN_LLR


def rateless_session(
    stream: StreamSpec,
    channel: ChannelModel,
    info_bits,
    batch: int,
    limit: int,
    rng: np.random.Generator,
    max_iter: int = 200,
    damping: float = 0.0,
    true_bits=None,
) -> DecodeResult:
    """Collect symbols in batches through the channel until decoding succeeds.

    Peeling state is warm-started across batches on the BEC; the sum-product
    decoder restarts on the accumulated observations for soft channels.
    Stops once decoded or ``limit`` symbols have been consumed.
    """
    if batch < 1:
        raise ValueError("batch must be >= 1")
    info_bits = np.asarray(info_bits, dtype=np.int8)
    next_index = 0
    if channel.kind == BEC:
        state = PeelState(stream)
        while True:
            for index in range(next_index, min(next_index + batch, limit)):
                rec = derive_symbol(stream, index)
                value = channel.transmit(encode_record(rec, stream, info_bits), rng)
                state.add_symbol(rec, value)
            next_index = min(next_index + batch, limit)
            state.run()
            if state.n_unknown == 0 or next_index >= limit:
                res = state.result()
                break
        return res

    received = []
    result = None
    while next_index < limit:
        for index in range(next_index, min(next_index + batch, limit)):
            bit = encode_symbol(stream, index, info_bits)
            received.append((index, channel.sample_llr(bit, rng)))
        next_index = min(next_index + batch, limit)
        result = bp_decode(
            stream, received, max_iter=max_iter, damping=damping, true_bits=true_bits
        )
        if result.status == "decoded":
            return result
    return result if result is not None else bp_decode(stream, [], true_bits=true_bits)


# -- wire format -------------------------------------------------------------

_CHANNEL_TAGS = {"BEC": 0, "BSC": 1, "BAWGNC": 2}
_TAGS_CHANNEL = {v: k for k, v in _CHANNEL_TAGS.items()}
ERASURE_BYTE = 0xFF


def write_stream_header(fp, stream: StreamSpec, channel: ChannelModel):
    """Header: magic, seed, L, w, m, degree pairs, channel tag + parameter."""
    fp.write(MAGIC)
    fp.write(struct.pack("<QIII", stream.seed, stream.L, stream.w, stream.m_per_position))
    pairs = stream.spec.dist.pairs()
    fp.write(struct.pack("<H", len(pairs)))
    for d, p in pairs:
        fp.write(struct.pack("<Hd", d, p))
    fp.write(struct.pack("<Bd", _CHANNEL_TAGS[channel.kind], channel.param))


def read_stream_header(fp, m_over_n: float):
    """Inverse of write_stream_header.

    The underlying m/n ratio is not on the wire (it is a session-level
    agreement), so the caller supplies it to rebuild the ensemble.
    """
    if fp.read(4) != MAGIC:
        raise ValueError("bad stream magic")
    seed, L, w, m = struct.unpack("<QIII", fp.read(20))
    (count,) = struct.unpack("<H", fp.read(2))
    pairs = [struct.unpack("<Hd", fp.read(10)) for _ in range(count)]
    tag, param = struct.unpack("<Bd", fp.read(9))
    dist = DegreeDistribution.from_pairs(pairs)
    coupled = (L, w) != (1, 1)
    spec = EnsembleSpec.from_rate(
        dist, m_over_n, L=L if coupled else 0, w=w if coupled else 0
    )
    stream = StreamSpec(seed=seed, m_per_position=m, spec=spec)
    return stream, ChannelModel(_TAGS_CHANNEL[tag], param)


def write_frame(fp, channel: ChannelModel, index: int, position: int, value):
    """One symbol frame; BEC payload is a byte (0xFF = erasure), else f32 LLR."""
    fp.write(struct.pack("<QI", index, position))
    if channel.kind == BEC:
        fp.write(struct.pack("<B", ERASURE_BYTE if value is None else int(value)))
    else:
        fp.write(struct.pack("<f", float(value)))


def read_frames(fp, channel: ChannelModel):
    """Yield (index, position, value) until EOF; erasures come back as None."""
    head = struct.calcsize("<QI")
    while True:
        chunk = fp.read(head)
        if not chunk:
            return
        if len(chunk) != head:
            raise ValueError("truncated frame")
        index, position = struct.unpack("<QI", chunk)
        if channel.kind == BEC:
            (raw,) = struct.unpack("<B", fp.read(1))
            value = None if raw == ERASURE_BYTE else raw
        else:
            (value,) = struct.unpack("<f", fp.read(4))
        yield index, position, value
