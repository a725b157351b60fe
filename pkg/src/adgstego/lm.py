"""Conditional next-token distributions, fixed-point quantized.

Sender and receiver must derive bit-identical distributions or extraction
desynchronizes, so every distribution is apportioned to integer numerators
over a fixed denominator ``D = 2**31`` (largest-remainder method) and all
downstream grouping logic compares integers only.  The float path exists
solely upstream of quantization.

Two sources are provided: a trainable add-k / backoff n-gram model, and a
client for an external provider speaking newline-delimited JSON
(``{"context": [ids]}`` -> ``{"ids": [...], "probs": [...]}``) over stdio
or a stream socket.  Provider probabilities are quantized locally, so the
two endpoints never need to agree on float behavior.
"""

from __future__ import annotations

import json
import math
import socket
import subprocess
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .corpus import BOS_ID, Vocabulary
from .errors import EmptyCorpusError, ModelMismatchError, ProviderError, QuantizationError

DENOMINATOR = 1 << 31
SUM_TOLERANCE = 1e-6
MODEL_FORMAT_VERSION = 1


def quantize(probs: Sequence[float]) -> np.ndarray:
    """Largest-remainder apportionment of ``DENOMINATOR`` among ``probs``.

    Entries that would round to zero are floored at 1, with the deficit
    taken from the largest entry, so every token keeps nonzero mass and
    the numerators sum to ``DENOMINATOR`` exactly.
    """
    arr = np.asarray(probs, dtype=np.float64)
    if arr.ndim != 1 or arr.size == 0:
        raise QuantizationError("expected a nonempty 1-d probability vector")
    if not np.all(np.isfinite(arr)):
        raise QuantizationError("probabilities must be finite")
    if np.any(arr < 0):
        raise QuantizationError("probabilities must be nonnegative")
    total = float(arr.sum())
    if abs(total - 1.0) > SUM_TOLERANCE:
        raise QuantizationError(f"probabilities sum to {total!r}, outside 1 +/- {SUM_TOLERANCE}")

    scaled = (arr / total) * DENOMINATOR
    out = np.floor(scaled).astype(np.int64)
    deficit = DENOMINATOR - int(out.sum())
    if deficit:
        # Hand the leftover units to the largest fractional remainders;
        # ties resolve to the lower index so both ends agree.
        remainders = scaled - out
        order = np.lexsort((np.arange(arr.size), -remainders))
        out[order[:deficit]] += 1

    zero = out == 0
    if np.any(zero):
        out[zero] = 1
        excess = int(out.sum()) - DENOMINATOR
        while excess > 0:
            top = int(np.argmax(out))
            take = min(excess, int(out[top]) - 1)
            out[top] -= take
            excess -= take
    return out


class ConditionalDistribution:
    """Quantized next-token distribution, sorted by mass desc, ties by id asc.

    ``cache`` is scratch space for codec-level derived structures (grouping
    trees, Huffman trees); it never leaves the process.
    """

    __slots__ = ("token_ids", "masses", "denominator", "cache", "_positions")

    def __init__(self, token_ids: np.ndarray, masses: np.ndarray, denominator: int = DENOMINATOR):
        order = np.lexsort((token_ids, -masses))
        self.token_ids = np.ascontiguousarray(token_ids[order], dtype=np.int64)
        self.masses = np.ascontiguousarray(masses[order], dtype=np.int64)
        self.denominator = denominator
        self.cache: Dict = {}
        self._positions: Optional[Dict[int, int]] = None
        if self.masses.size and int(self.masses.min()) < 1:
            raise QuantizationError("zero-mass entries must not be stored")
        if int(self.masses.sum()) != denominator:
            raise QuantizationError("numerators do not sum to the denominator")

    def __len__(self) -> int:
        return int(self.token_ids.size)

    @property
    def p_max_mass(self) -> int:
        return int(self.masses[0])

    def position_of(self, token_id: int) -> Optional[int]:
        if self._positions is None:
            self._positions = {int(t): i for i, t in enumerate(self.token_ids)}
        return self._positions.get(int(token_id))

    def probs(self) -> np.ndarray:
        return self.masses / float(self.denominator)

    @classmethod
    def from_probs(cls, token_ids: Sequence[int], probs: Sequence[float]) -> "ConditionalDistribution":
        ids = np.asarray(token_ids, dtype=np.int64)
        if ids.size != len(probs):
            raise QuantizationError("ids and probs length mismatch")
        if ids.size != np.unique(ids).size:
            raise QuantizationError("duplicate token ids in distribution")
        return cls(ids, quantize(probs))

    @classmethod
    def from_masses(cls, token_ids: Sequence[int], masses: Sequence[int]) -> "ConditionalDistribution":
        """Build directly from integer masses; denominator is their sum."""
        ids = np.asarray(token_ids, dtype=np.int64)
        m = np.asarray(masses, dtype=np.int64)
        return cls(ids, m, denominator=int(m.sum()))


class NGramLM:
    """Add-k smoothed n-gram model with whole-context backoff.

    The conditional distribution is the add-k smoothed maximum-likelihood
    estimate under the longest context suffix that was seen in training,
    backing off to shorter contexts when the full context is unseen and
    bottoming out at the smoothed unigram distribution.  (A stupid-backoff
    scale factor on the backed-off level would cancel under normalization,
    so none is applied.)  Every distribution covers the whole vocabulary,
    so every token is reachable.  Instances are immutable after training
    and safe to share across codec streams.
    """

    def __init__(
        self,
        order: int,
        k: float,
        vocab_size: int,
        vocab_hash: str,
        unigram_counts: np.ndarray,
        context_tables: Dict[int, Dict[Tuple[int, ...], Tuple[np.ndarray, np.ndarray, int]]],
    ):
        self.order = order
        self.k = k
        self.vocab_size = vocab_size
        self.vocab_hash = vocab_hash
        self.unigram_counts = unigram_counts
        self.unigram_total = int(unigram_counts.sum())
        self.context_tables = context_tables

    @property
    def context_window(self) -> int:
        """Only the trailing ``order - 1`` tokens influence the conditional."""
        return self.order - 1

    def next_scores(self, context: Sequence[int]) -> np.ndarray:
        v = self.vocab_size
        for length in range(self.order - 1, 0, -1):
            if len(context) < length:
                continue
            entry = self.context_tables.get(length, {}).get(tuple(context[-length:]))
            if entry is None:
                continue
            ids, counts, total = entry
            s = np.full(v, self.k, dtype=np.float64)
            s[ids] += counts
            return s / (total + self.k * v)
        s = self.unigram_counts + self.k
        return s / (self.unigram_total + self.k * v)

    def next_distribution(self, context: Sequence[int]) -> ConditionalDistribution:
        if not context or context[0] != BOS_ID:
            raise ValueError("context must begin with the BOS id")
        scores = self.next_scores(context)
        return ConditionalDistribution(np.arange(self.vocab_size, dtype=np.int64), quantize(scores))

    def save(self, path: str) -> None:
        contexts = {}
        for length, table in sorted(self.context_tables.items()):
            serial = {}
            for ctx in sorted(table):
                ids, counts, _total = table[ctx]
                serial[",".join(map(str, ctx))] = [ids.tolist(), counts.tolist()]
            contexts[str(length)] = serial
        doc = {
            "format_version": MODEL_FORMAT_VERSION,
            "order": self.order,
            "k": self.k,
            "vocab_size": self.vocab_size,
            "vocab_hash": self.vocab_hash,
            "unigram_counts": self.unigram_counts.tolist(),
            "contexts": contexts,
        }
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(doc, fh, sort_keys=True, separators=(",", ":"))

    @classmethod
    def load(cls, path: str, vocab: Vocabulary) -> "NGramLM":
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
        if doc.get("format_version") != MODEL_FORMAT_VERSION:
            raise ModelMismatchError(f"unsupported model format in {path}")
        if doc["vocab_hash"] != vocab.content_hash():
            raise ModelMismatchError("model file was trained against a different vocabulary")
        tables: Dict[int, Dict[Tuple[int, ...], Tuple[np.ndarray, np.ndarray, int]]] = {}
        for length, serial in doc["contexts"].items():
            table = {}
            for key, (ids, counts) in serial.items():
                ctx = tuple(int(x) for x in key.split(",")) if key else ()
                arr_ids = np.asarray(ids, dtype=np.int64)
                arr_counts = np.asarray(counts, dtype=np.float64)
                table[ctx] = (arr_ids, arr_counts, int(arr_counts.sum()))
            tables[int(length)] = table
        return cls(
            order=int(doc["order"]),
            k=float(doc["k"]),
            vocab_size=int(doc["vocab_size"]),
            vocab_hash=doc["vocab_hash"],
            unigram_counts=np.asarray(doc["unigram_counts"], dtype=np.float64),
            context_tables=tables,
        )


def train_ngram(
    sentences: Sequence[Sequence[int]], order: int, k: float, vocab: Vocabulary
) -> NGramLM:
    """Count n-grams over id sentences (each including BOS and EOS)."""
    if order < 2:
        raise ValueError(f"order must be >= 2, got {order}")
    if k <= 0:
        raise ValueError(f"smoothing constant must be positive, got {k}")
    if not sentences:
        raise EmptyCorpusError("cannot train on an empty corpus")

    v = len(vocab)
    unigrams = np.zeros(v, dtype=np.float64)
    raw: Dict[int, Dict[Tuple[int, ...], Dict[int, int]]] = {
        length: {} for length in range(1, order)
    }
    for sent in sentences:
        for t in range(1, len(sent)):
            token = sent[t]
            unigrams[token] += 1
            for length in range(1, order):
                if t < length:
                    break
                ctx = tuple(sent[t - length : t])
                bucket = raw[length].setdefault(ctx, {})
                bucket[token] = bucket.get(token, 0) + 1

    tables: Dict[int, Dict[Tuple[int, ...], Tuple[np.ndarray, np.ndarray, int]]] = {}
    for length, table in raw.items():
        frozen = {}
        for ctx, bucket in table.items():
            ids = np.asarray(sorted(bucket), dtype=np.int64)
            counts = np.asarray([bucket[i] for i in ids], dtype=np.float64)
            frozen[ctx] = (ids, counts, int(counts.sum()))
        tables[length] = frozen
    return NGramLM(order, k, v, vocab.content_hash(), unigrams, tables)


def _mean_entropy_bits(lm: NGramLM, contexts: Iterable[Sequence[int]]) -> float:
    """Mean Shannon entropy (bits) of the model's distribution over contexts."""
    total, n = 0.0, 0
    for ctx in contexts:
        p = lm.next_scores(ctx)
        p = p[p > 0]
        total += float(-(p * np.log2(p)).sum())
        n += 1
    return total / n if n else math.nan


class ExternalProvider:
    """Client for the newline-delimited JSON provider protocol.

    One connection serves one codec stream.  Replies carry explicit token
    ids and normalized probabilities; quantization happens here.
    """

    def __init__(self, reader, writer, close=None):
        self._reader = reader
        self._writer = writer
        self._close = close

    @classmethod
    def from_command(cls, argv: Sequence[str]) -> "ExternalProvider":
        proc = subprocess.Popen(
            list(argv), stdin=subprocess.PIPE, stdout=subprocess.PIPE, text=True, bufsize=1
        )

        def _close():
            proc.stdin.close()
            proc.wait(timeout=10)

        return cls(proc.stdout, proc.stdin, close=_close)

    @classmethod
    def from_socket(cls, host: str, port: int, timeout: float = 30.0) -> "ExternalProvider":
        conn = socket.create_connection((host, port), timeout=timeout)
        fh = conn.makefile("rw", encoding="utf-8", newline="\n")
        return cls(fh, fh, close=conn.close)

    def close(self) -> None:
        if self._close is not None:
            self._close()

    def next_distribution(self, context: Sequence[int]) -> ConditionalDistribution:
        request = json.dumps({"context": [int(c) for c in context]})
        try:
            self._writer.write(request + "\n")
            self._writer.flush()
            line = self._reader.readline()
        except (OSError, ValueError) as exc:
            raise ProviderError(f"provider transport failed: {exc}") from exc
        if not line:
            raise ProviderError("provider closed the stream")
        try:
            reply = json.loads(line)
            ids = reply["ids"]
            probs = reply["probs"]
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            raise ProviderError(f"malformed provider reply: {line!r}") from exc
        if len(ids) != len(probs) or not ids:
            raise ProviderError("provider reply ids/probs mismatch")
        arr = np.asarray(probs, dtype=np.float64)
        if not np.all(np.isfinite(arr)) or np.any(arr < 0):
            raise ProviderError("provider reply contains non-finite or negative probabilities")
        try:
            return ConditionalDistribution.from_probs(ids, arr)
        except QuantizationError as exc:
            raise ProviderError(f"provider reply is not a distribution: {exc}") from exc
