"""Capacity and imperceptibility metrics computed from traces and corpora.

All divergences and rates are reported in bits (log base 2).  The
sentence vectorizer here is a deterministic hashed bag-of-words random
projection; absolute distribution-level KL values therefore depend on the
vectorizer id and seed, which reports must carry, and only cross-method
comparisons under one fixed vectorizer are meaningful.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass
from typing import Dict, Iterable, List, Optional, Sequence

import numpy as np

from .errors import StegoError
from .runner import EmbedTrace

VECTORIZER_ID = "hashed-bow-signed-projection-v1"
SIGMA_FLOOR = 1e-6


def embedding_rate(trace: EmbedTrace, payload_only: bool = False) -> float:
    """Average bits carried per generated token.

    By default the frame header and padding count as carried bits (the
    rate is a codec property); ``payload_only`` discounts the framing
    overhead instead.
    """
    if not trace.steps:
        raise StegoError("cannot compute an embedding rate from an empty trace")
    bits = trace.total_bits
    if payload_only:
        bits = min(bits, float(trace.payload_bits))
    return bits / trace.total_tokens


def kl_divergence_bits(p: Sequence[float], q: Sequence[float]) -> float:
    """Discrete KL(p || q) in bits; infinite when q lacks mass where p has it."""
    total = 0.0
    for pi, qi in zip(p, q):
        if pi <= 0:
            continue
        if qi <= 0:
            return math.inf
        total += pi * math.log2(pi / qi)
    return total


def group_kl_bits(etas: Sequence[float]) -> float:
    """Group-form distortion of a single grouping level: sum of eta*log2(u*eta)."""
    u = len(etas)
    return float(sum(e * math.log2(u * e) for e in etas if e > 0))


@dataclass
class Kld1Result:
    mean_qp: float
    mean_pq: Optional[float]  # None when any step made it infinite
    steps: int


def kld1(trace: EmbedTrace) -> Kld1Result:
    """Average per-step KL between the implicit and model distributions.

    Requires a trace recorded with per-step stats; both directions are
    averaged, the p||q direction only while finite (truncated-support
    codecs make it infinite).
    """
    qps, pqs = [], []
    finite_pq = True
    for s in trace.steps:
        if s.forced:
            continue
        if s.kld_qp is None:
            raise StegoError("trace lacks per-step divergence stats")
        qps.append(s.kld_qp)
        if s.kld_pq is None or math.isinf(s.kld_pq):
            finite_pq = False
        else:
            pqs.append(s.kld_pq)
    if not qps:
        raise StegoError("trace has no scored steps")
    mean_pq = (sum(pqs) / len(pqs)) if (finite_pq and pqs) else None
    return Kld1Result(mean_qp=sum(qps) / len(qps), mean_pq=mean_pq, steps=len(qps))


def mean_step_entropy(trace: EmbedTrace) -> float:
    values = [s.entropy for s in trace.steps if s.entropy is not None]
    if not values:
        raise StegoError("trace lacks per-step entropy stats")
    return sum(values) / len(values)


_pattern_cache: Dict = {}


def _token_pattern(token: str, dim: int, seed: int) -> np.ndarray:
    key = (token, dim, seed)
    hit = _pattern_cache.get(key)
    if hit is None:
        digest = hashlib.sha256(f"{seed}:{token}".encode("utf-8")).digest()
        rng = np.random.Generator(np.random.PCG64(int.from_bytes(digest[:8], "big")))
        hit = rng.choice(np.asarray([-1.0, 1.0]), size=dim)
        _pattern_cache[key] = hit
    return hit


def sentence_vector(tokens: Sequence[str], dim: int = 100, seed: int = 0) -> np.ndarray:
    """Deterministic unit vector for a sentence (order-insensitive).

    Each token hashes to a fixed signed pattern; patterns are summed and
    L2-normalized, so identical bags of words map to identical vectors.
    """
    if not tokens:
        raise StegoError("cannot vectorize an empty sentence")
    v = np.zeros(dim)
    for tok in tokens:
        v += _token_pattern(tok, dim, seed)
    norm = float(np.linalg.norm(v))
    return v / norm if norm > 0 else v


def kld2(cover_vectors: Sequence[np.ndarray], stego_vectors: Sequence[np.ndarray]) -> float:
    """Gaussian KL (bits) between per-dimension statistics of two vector sets."""
    if len(cover_vectors) < 2 or len(stego_vectors) < 2:
        raise StegoError("need at least 2 vectors per side")
    x = np.stack(cover_vectors)
    y = np.stack(stego_vectors)
    mu_x, mu_y = x.mean(axis=0), y.mean(axis=0)
    sigma_x = np.maximum(x.std(axis=0), SIGMA_FLOOR)
    sigma_y = np.maximum(y.std(axis=0), SIGMA_FLOOR)
    nats = np.log(sigma_y / sigma_x) + (sigma_x**2 + (mu_x - mu_y) ** 2) / (2 * sigma_y**2) - 0.5
    return float(nats.sum() / math.log(2))


def eer(acc: float, er: float) -> float:
    """Effective embedding rate: capacity discounted by detectability."""
    if not 0.0 <= acc <= 1.0:
        raise ValueError(f"accuracy {acc} outside [0, 1]")
    if er < 0:
        raise ValueError(f"embedding rate {er} must be nonnegative")
    acc = max(acc, 1.0 - acc)
    return 2.0 * (1.0 - acc) * er


@dataclass
class MetricReport:
    method: str
    params: Dict
    er: float
    er_payload_only: float
    kld1_qp: float
    kld1_pq: Optional[float]
    kld2: Optional[float]
    eer: Optional[float]
    entropy: Optional[float]  # mean per-step model entropy (bits), if recorded
    sentences: int
    tokens: int
    vectorizer: str = VECTORIZER_ID
    vectorizer_seed: int = 0


def report_from_traces(
    traces: Iterable[EmbedTrace],
    stego_sentences: Optional[Sequence[Sequence[str]]] = None,
    cover_sentences: Optional[Sequence[Sequence[str]]] = None,
    acc: Optional[float] = None,
    vector_dim: int = 100,
    vector_seed: int = 0,
) -> MetricReport:
    """Aggregate one method's traces (and optional texts) into a report."""
    traces = list(traces)
    if not traces:
        raise StegoError("no traces to report on")
    bits = sum(t.total_bits for t in traces)
    payload_bits = sum(min(t.total_bits, t.payload_bits) for t in traces)
    tokens = sum(t.total_tokens for t in traces)
    qps, pqs = [], []
    finite_pq = True
    for t in traces:
        r = kld1(t)
        qps.append((r.mean_qp, r.steps))
        if r.mean_pq is None:
            finite_pq = False
        else:
            pqs.append((r.mean_pq, r.steps))
    total_steps = sum(n for _, n in qps)
    mean_qp = sum(v * n for v, n in qps) / total_steps
    mean_pq = sum(v * n for v, n in pqs) / total_steps if (finite_pq and pqs) else None
    entropies = [
        s.entropy for t in traces for s in t.steps if not s.forced and s.entropy is not None
    ]
    mean_entropy = sum(entropies) / len(entropies) if entropies else None
    kld2_value = None
    if stego_sentences is not None and cover_sentences is not None:
        cover_v = [sentence_vector(s, vector_dim, vector_seed) for s in cover_sentences]
        stego_v = [sentence_vector(s, vector_dim, vector_seed) for s in stego_sentences]
        kld2_value = kld2(cover_v, stego_v)
    er_value = bits / tokens
    return MetricReport(
        method=traces[0].method,
        params=traces[0].params,
        er=er_value,
        er_payload_only=payload_bits / tokens,
        kld1_qp=mean_qp,
        kld1_pq=mean_pq,
        kld2=kld2_value,
        eer=eer(acc, er_value) if acc is not None else None,
        entropy=mean_entropy,
        sentences=len(stego_sentences) if stego_sentences is not None else 0,
        tokens=tokens,
        vectorizer_seed=vector_seed,
    )
