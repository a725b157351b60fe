"""Reference stego codecs used for comparison: bins, Huffman, patient
Huffman and fixed-precision arithmetic coding.

Each codec plugs into :mod:`adgstego.runner` with an ``embed_step`` /
``extract_step`` pair and an implicit per-step distribution ``q`` for the
distortion metrics.  Everything each codec decides per step is derived
from the shared quantized distribution (plus static, seed-fixed state),
so the receiver can replay the decision without side channels.
"""

from __future__ import annotations

import heapq
import math
import random
from bisect import bisect_right
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .bitio import BitMessage, index_to_bits, next_index
from .errors import DesyncError, StegoError
from .lm import ConditionalDistribution


class BinsCodec:
    """Static random partition of the vocabulary into ``2**b`` bins.

    Each step consumes ``b`` bits to select a bin and emits the
    highest-mass token inside it; extraction inverts via the token's bin.
    """

    name = "bins"

    def __init__(self, b: int, partition_seed: int, vocab_size: int):
        if b < 1:
            raise ValueError(f"b must be >= 1, got {b}")
        if vocab_size < (1 << b):
            raise StegoError(f"vocabulary of {vocab_size} cannot fill {1 << b} bins")
        self.b = b
        self.nbins = 1 << b
        self.partition_seed = partition_seed
        self.params = {"b": b, "partition_seed": partition_seed, "vocab_size": vocab_size}
        shuffled = list(range(vocab_size))
        random.Random(partition_seed).shuffle(shuffled)
        self.token_to_bin = np.empty(vocab_size, dtype=np.int64)
        for pos, token in enumerate(shuffled):
            self.token_to_bin[token] = pos % self.nbins

    def begin_embed(self) -> None:
        pass

    def begin_extract(self) -> None:
        pass

    def delivered(self, msg: BitMessage) -> bool:
        return msg.exhausted

    def _bin_argmax(self, dist: ConditionalDistribution) -> np.ndarray:
        """Per-bin position of its highest-mass token in ``dist`` (-1 if empty)."""
        # The partition is a function of (vocab size, seed, b); all three
        # must key the per-distribution table.
        key = ("bins", len(self.token_to_bin), self.partition_seed, self.b)
        table = dist.cache.get(key)
        if table is None:
            bins = self.token_to_bin[dist.token_ids]
            table = np.full(self.nbins, -1, dtype=np.int64)
            # dist is mass-desc sorted, so the first occurrence wins.
            values, first = np.unique(bins, return_index=True)
            table[values] = first
            dist.cache[key] = table
        return table

    def embed_step(self, dist, msg, sample_rng, pad_rng):
        index = next_index(msg, self.b, pad_rng)
        pos = int(self._bin_argmax(dist)[index])
        if pos < 0:
            raise StegoError(f"bin {index} holds no token of the current distribution")
        return int(dist.token_ids[pos]), self.b, None

    def extract_step(self, dist, token_id) -> List[int]:
        if not 0 <= token_id < self.token_to_bin.size:
            raise DesyncError(f"token {token_id} outside the partitioned vocabulary")
        return index_to_bits(int(self.token_to_bin[token_id]), self.b)

    def finish_extract(self) -> List[int]:
        return []

    def step_q(self, dist):
        table = self._bin_argmax(dist)
        positions = table[table >= 0]
        ids = dist.token_ids[positions]
        return ids, np.full(ids.size, 1.0 / self.nbins)


def _build_huffman(dist: ConditionalDistribution, k: int):
    """Deterministic Huffman tree over the top ``2**k`` entries.

    Merges the two lowest-mass nodes, ties by the lowest contained token
    id; the left child (lower key) is bit 0.  Returns (root, codes) where
    a leaf is a token id and an internal node a (left, right) pair.
    Cached on the distribution.
    """
    key = ("huffman", k)
    hit = dist.cache.get(key)
    if hit is not None:
        return hit
    top = min(1 << k, len(dist))
    heap = []
    for pos in range(top):
        token = int(dist.token_ids[pos])
        heapq.heappush(heap, (int(dist.masses[pos]), token, token))
    while len(heap) > 1:
        mass_a, min_a, left = heapq.heappop(heap)
        mass_b, min_b, right = heapq.heappop(heap)
        heapq.heappush(heap, (mass_a + mass_b, min(min_a, min_b), (left, right)))
    root = heap[0][2]
    codes: Dict[int, List[int]] = {}
    stack = [(root, [])]
    while stack:
        node, prefix = stack.pop()
        if isinstance(node, tuple):
            stack.append((node[0], prefix + [0]))
            stack.append((node[1], prefix + [1]))
        else:
            codes[node] = prefix
    dist.cache[key] = (root, codes)
    return root, codes


class HuffmanCodec:
    """Per-step Huffman coding of the top ``2**k`` likely tokens."""

    name = "huffman"

    def __init__(self, k: int):
        if k < 1:
            raise ValueError(f"k must be >= 1, got {k}")
        self.k = k
        self.params = {"k": k}

    def begin_embed(self) -> None:
        pass

    def begin_extract(self) -> None:
        pass

    def delivered(self, msg: BitMessage) -> bool:
        return msg.exhausted

    def embed_step(self, dist, msg, sample_rng, pad_rng):
        node, _codes = _build_huffman(dist, self.k)
        bits = 0
        while isinstance(node, tuple):
            node = node[next_index(msg, 1, pad_rng)]
            bits += 1
        return node, bits, None

    def extract_step(self, dist, token_id) -> List[int]:
        _root, codes = _build_huffman(dist, self.k)
        code = codes.get(int(token_id))
        if code is None:
            raise DesyncError(f"token {token_id} outside the top {1 << self.k} set")
        return list(code)

    def finish_extract(self) -> List[int]:
        return []

    def step_q(self, dist):
        _root, codes = _build_huffman(dist, self.k)
        ids = np.asarray(sorted(codes), dtype=np.int64)
        probs = np.asarray([2.0 ** -len(codes[int(t)]) for t in ids])
        return ids, probs


def _huffman_distortion(dist: ConditionalDistribution, k: int) -> float:
    """KL (bits) between the Huffman codeword distribution and the
    renormalized top-``2**k`` slice, computed in a fixed order from the
    shared integer masses so both ends reach the same float."""
    key = ("huffman_distortion", k)
    hit = dist.cache.get(key)
    if hit is not None:
        return hit
    _root, codes = _build_huffman(dist, k)
    top = min(1 << k, len(dist))
    total = int(dist.masses[:top].sum())
    d = 0.0
    for pos in range(top):
        token = int(dist.token_ids[pos])
        q = 2.0 ** -len(codes[token])
        p = int(dist.masses[pos]) / total
        d += q * math.log2(q / p)
    dist.cache[key] = d
    return d


class PatientHuffmanCodec:
    """Huffman embedding gated per step by a distortion threshold.

    A step embeds via Huffman only when the codeword-vs-model KL is below
    ``delta`` bits; otherwise the token is sampled from the full
    distribution and carries nothing.  The receiver recomputes the same
    test from the shared distribution to tell the two step kinds apart.
    """

    name = "patient_huffman"

    def __init__(self, k: int, delta: float):
        if k < 1:
            raise ValueError(f"k must be >= 1, got {k}")
        if delta < 0:
            raise ValueError(f"delta must be >= 0, got {delta}")
        self.k = k
        self.delta = delta
        self.params = {"k": k, "delta": delta}
        self._huffman = HuffmanCodec(k)

    def begin_embed(self) -> None:
        pass

    def begin_extract(self) -> None:
        pass

    def delivered(self, msg: BitMessage) -> bool:
        return msg.exhausted

    def _patient(self, dist) -> bool:
        return not (_huffman_distortion(dist, self.k) < self.delta)

    def _sample_full(self, dist, sample_rng) -> int:
        cumsum = dist.cache.get("cumsum")
        if cumsum is None:
            cumsum = np.cumsum(dist.masses)
            dist.cache["cumsum"] = cumsum
        x = sample_rng.randrange(dist.denominator)
        return int(dist.token_ids[int(np.searchsorted(cumsum, x, side="right"))])

    def embed_step(self, dist, msg, sample_rng, pad_rng):
        if self._patient(dist):
            return self._sample_full(dist, sample_rng), 0, None
        return self._huffman.embed_step(dist, msg, sample_rng, pad_rng)

    def extract_step(self, dist, token_id) -> List[int]:
        if self._patient(dist):
            return []
        return self._huffman.extract_step(dist, token_id)

    def finish_extract(self) -> List[int]:
        return []

    def step_q(self, dist):
        if self._patient(dist):
            return dist.token_ids, dist.probs()
        return self._huffman.step_q(dist)


class ArithmeticCodec:
    """Fixed-precision range coder over the renormalized top ``h`` tokens.

    Embedding decodes the message bitstream as if it were the arithmetic
    code of the text: the token whose cumulative interval contains the
    current code window is emitted.  Extraction re-encodes the observed
    tokens; both ends run identical integer interval updates, including
    the straddle (carry) rule, so the re-encoded stream reproduces every
    message bit that embedding resolved.

    The interval state spans sentence boundaries; ``delivered`` is based
    on resolved bits because lookahead bits are not recoverable.
    """

    name = "arithmetic"

    def __init__(self, h: int, precision: int = 52):
        if h < 2:
            raise ValueError(f"h must be >= 2, got {h}")
        if not 40 <= precision <= 62:
            raise ValueError(f"precision {precision} outside the supported range")
        self.h = h
        self.precision = precision
        self.params = {"h": h, "precision": precision}
        self._full = 1 << precision
        self._half = self._full >> 1
        self._quarter = self._full >> 2
        self.begin_embed()

    def begin_embed(self) -> None:
        self._low = 0
        self._high = self._full - 1
        self._value: Optional[int] = None
        self._pending = 0
        self._resolved = 0

    def begin_extract(self) -> None:
        self._low = 0
        self._high = self._full - 1
        self._value = None
        self._pending = 0
        self._resolved = 0

    def delivered(self, msg: BitMessage) -> bool:
        return self._resolved >= len(msg)

    def _truncated(self, dist: ConditionalDistribution):
        key = ("arith", self.h)
        hit = dist.cache.get(key)
        if hit is None:
            top = min(self.h, len(dist))
            masses = [int(m) for m in dist.masses[:top]]
            cum = []
            running = 0
            for m in masses:
                running += m
                cum.append(running)
            positions = {int(t): i for i, t in enumerate(dist.token_ids[:top])}
            hit = (dist.token_ids[:top], masses, cum, running, positions)
            dist.cache[key] = hit
        return hit

    def _narrow(self, cum: List[int], total: int, j: int) -> None:
        width = self._high - self._low + 1
        lo_cum = cum[j - 1] if j else 0
        self._high = self._low + (width * cum[j]) // total - 1
        self._low = self._low + (width * lo_cum) // total

    def embed_step(self, dist, msg, sample_rng, pad_rng):
        if self._value is None:
            self._value = 0
            for _ in range(self.precision):
                self._value = (self._value << 1) | msg.read_bit(pad_rng)
        ids, masses, cum, total, _positions = self._truncated(dist)
        width = self._high - self._low + 1
        target = ((self._value - self._low + 1) * total - 1) // width
        j = bisect_right(cum, target)
        self._narrow(cum, total, j)
        bits = math.log2(width / (self._high - self._low + 1))
        while True:
            if self._high < self._half:
                self._resolved += 1 + self._pending
                self._pending = 0
            elif self._low >= self._half:
                self._resolved += 1 + self._pending
                self._pending = 0
                self._low -= self._half
                self._high -= self._half
                self._value -= self._half
            elif self._low >= self._quarter and self._high < 3 * self._quarter:
                self._pending += 1
                self._low -= self._quarter
                self._high -= self._quarter
                self._value -= self._quarter
            else:
                break
            self._low <<= 1
            self._high = (self._high << 1) | 1
            self._value = (self._value << 1) | msg.read_bit(pad_rng)
        return int(ids[j]), bits, None

    def extract_step(self, dist, token_id) -> List[int]:
        _ids, _masses, cum, total, positions = self._truncated(dist)
        j = positions.get(int(token_id))
        if j is None:
            raise DesyncError(f"token {token_id} outside the top {self.h} set")
        self._narrow(cum, total, j)
        out: List[int] = []
        while True:
            if self._high < self._half:
                out.append(0)
                out.extend([1] * self._pending)
                self._pending = 0
            elif self._low >= self._half:
                out.append(1)
                out.extend([0] * self._pending)
                self._pending = 0
                self._low -= self._half
                self._high -= self._half
            elif self._low >= self._quarter and self._high < 3 * self._quarter:
                self._pending += 1
                self._low -= self._quarter
                self._high -= self._quarter
            else:
                break
            self._low <<= 1
            self._high = (self._high << 1) | 1
        return out

    def finish_extract(self) -> List[int]:
        # Flush one disambiguating bit plus pending straddle bits.
        self._pending += 1
        if self._low < self._quarter:
            return [0] + [1] * self._pending
        return [1] + [0] * self._pending

    def step_q(self, dist):
        ids, masses, _cum, total, _positions = self._truncated(dist)
        return ids, np.asarray(masses, dtype=np.float64) / total


def make_codec(method: str, vocab_size: int, **params):
    """Instantiate a codec by method tag; used by the CLI and the bench grid."""
    from .adg import ADGCodec

    if method == "adg":
        return ADGCodec()
    if method == "bins":
        return BinsCodec(int(params["b"]), int(params.get("partition_seed", 0)), vocab_size)
    if method == "huffman":
        return HuffmanCodec(int(params["k"]))
    if method == "patient_huffman":
        return PatientHuffmanCodec(int(params.get("k", 3)), float(params["delta"]))
    if method == "arithmetic":
        return ArithmeticCodec(int(params["h"]), int(params.get("precision", 52)))
    raise ValueError(f"unknown method {method!r}")
