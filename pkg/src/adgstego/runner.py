"""Shared autoregressive generation loop for every stego codec.

A codec object supplies ``embed_step`` / ``extract_step`` plus optional
stream state; this module owns everything the codecs have in common: the
sentence loop, the EOS length constraints, distribution caching, and the
per-step trace used by the metrics layer.

Length constraints are part of the codec contract, not the sampler:
before ``min_len`` content tokens the EOS mass is masked down to 1 (the
excess goes to the largest other entry), and at ``max_len`` the EOS is
forced and carries no bits.  Extraction applies the identical masking, so
both ends group identical integer distributions.
"""

from __future__ import annotations

import json
import math
import random
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .bitio import BitMessage
from .corpus import BOS_ID, EOS_ID
from .errors import CapacityError, DesyncError
from .lm import ConditionalDistribution


class CachedProvider:
    """Memoizes quantized distributions (and their EOS-masked variants) by context."""

    def __init__(self, provider, max_entries: int = 200_000):
        self._provider = provider
        self._max_entries = max_entries
        self._cache: "OrderedDict[Tuple, ConditionalDistribution]" = OrderedDict()
        # A provider may declare that only the trailing N context tokens
        # influence its output; keys truncate accordingly so one cached
        # distribution (and its grouping tree) serves every equivalent
        # context.
        self._window = getattr(provider, "context_window", None)

    def get(self, context: Tuple[int, ...], mask_eos: bool) -> ConditionalDistribution:
        if self._window is not None and len(context) > self._window:
            key = (context[-self._window:], mask_eos)
        else:
            key = (context, mask_eos)
        hit = self._cache.get(key)
        if hit is not None:
            return hit
        if mask_eos:
            dist = mask_eos_min(self.get(context, False))
        else:
            dist = self._provider.next_distribution(list(context))
        self._cache[key] = dist
        if len(self._cache) > self._max_entries:
            self._cache.popitem(last=False)
        return dist


def mask_eos_min(dist: ConditionalDistribution) -> ConditionalDistribution:
    """Reduce the EOS mass to the 1-unit minimum, excess to the largest entry.

    Keeps the total mass exact so grouping stays well defined.  A no-op when
    EOS is absent or already at minimum mass.
    """
    pos = dist.position_of(EOS_ID)
    if pos is None or int(dist.masses[pos]) <= 1:
        return dist
    masses = dist.masses.copy()
    excess = int(masses[pos]) - 1
    masses[pos] = 1
    # First entry is the largest by sort order; step past it if it is EOS itself.
    target = 0 if pos != 0 else 1
    masses[target] += excess
    return ConditionalDistribution(dist.token_ids.copy(), masses, dist.denominator)


@dataclass
class StepRecord:
    token: int
    bits: float
    forced: bool = False
    group_sizes: Optional[List[int]] = None  # per-level group counts (grouping codec only)
    kld_qp: Optional[float] = None
    kld_pq: Optional[float] = None
    entropy: Optional[float] = None


@dataclass
class EmbedTrace:
    method: str
    params: Dict
    frame_bits: int
    payload_bits: int
    steps: List[StepRecord] = field(default_factory=list)

    @property
    def total_bits(self) -> float:
        return sum(s.bits for s in self.steps)

    @property
    def total_tokens(self) -> int:
        return len(self.steps)

    def save(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            header = {
                "record": "header",
                "method": self.method,
                "params": self.params,
                "frame_bits": self.frame_bits,
                "payload_bits": self.payload_bits,
            }
            fh.write(json.dumps(header, sort_keys=True) + "\n")
            for s in self.steps:
                row = {"record": "step", "token": s.token, "bits": s.bits, "forced": s.forced}
                if s.group_sizes is not None:
                    row["group_sizes"] = s.group_sizes
                for key in ("kld_qp", "kld_pq", "entropy"):
                    value = getattr(s, key)
                    if value is not None:
                        row[key] = value
                fh.write(json.dumps(row, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path: str) -> "EmbedTrace":
        with open(path, encoding="utf-8") as fh:
            header = json.loads(fh.readline())
            if header.get("record") != "header":
                raise ValueError(f"trace file {path} lacks a header record")
            trace = cls(
                method=header["method"],
                params=header["params"],
                frame_bits=header["frame_bits"],
                payload_bits=header["payload_bits"],
            )
            for line in fh:
                if not line.strip():
                    continue
                row = json.loads(line)
                trace.steps.append(
                    StepRecord(
                        token=row["token"],
                        bits=row["bits"],
                        forced=row.get("forced", False),
                        group_sizes=row.get("group_sizes"),
                        kld_qp=row.get("kld_qp"),
                        kld_pq=row.get("kld_pq"),
                        entropy=row.get("entropy"),
                    )
                )
        return trace


@dataclass
class GenerationConfig:
    min_len: int = 5
    max_len: int = 200
    max_tokens: int = 1_000_000
    max_sentences: int = 100_000
    sample_seed: int = 0
    pad_seed: int = 1
    collect_stats: bool = False


def _step_stats(dist: ConditionalDistribution, q_ids, q_probs) -> Tuple[float, float, float]:
    """Per-step KL(q||p), KL(p||q) and H(p), all in bits."""
    p = dist.probs()
    entropy = float(-(p * np.log2(p)).sum())
    positions = np.asarray([dist.position_of(t) for t in q_ids], dtype=np.int64)
    q = np.asarray(q_probs, dtype=np.float64)
    support = q > 0
    qp = float((q[support] * np.log2(q[support] / p[positions[support]])).sum())
    if np.count_nonzero(support) == len(dist):
        covered = np.zeros(len(dist), dtype=np.float64)
        covered[positions] = q
        pq = float((p * np.log2(p / covered)).sum())
    else:
        pq = math.inf
    return qp, pq, entropy


def embed_text(
    codec, msg: BitMessage, provider, cfg: GenerationConfig
) -> Tuple[List[List[int]], EmbedTrace]:
    """Generate stegotext sentences until the frame is delivered.

    Returns sentences as lists of content token ids (BOS/EOS implicit) and
    the per-step trace.  Raises :class:`CapacityError` when the token or
    sentence budget runs out first.
    """
    if not isinstance(provider, CachedProvider):
        provider = CachedProvider(provider)
    sample_rng = random.Random(cfg.sample_seed)
    pad_rng = random.Random(cfg.pad_seed)
    codec.begin_embed()
    trace = EmbedTrace(
        method=codec.name,
        params=dict(codec.params),
        frame_bits=len(msg),
        payload_bits=max(len(msg) - 32, 0),
    )
    sentences: List[List[int]] = []
    total_tokens = 0
    while True:
        if len(sentences) >= cfg.max_sentences:
            raise CapacityError(
                f"message not delivered within {cfg.max_sentences} sentences"
            )
        context = [BOS_ID]
        content: List[int] = []
        while True:
            if total_tokens >= cfg.max_tokens and not codec.delivered(msg):
                raise CapacityError(f"message not delivered within {cfg.max_tokens} tokens")
            if len(content) >= cfg.max_len:
                token, record = EOS_ID, StepRecord(token=EOS_ID, bits=0.0, forced=True)
            else:
                dist = provider.get(tuple(context), mask_eos=len(content) < cfg.min_len)
                token, bits, detail = codec.embed_step(dist, msg, sample_rng, pad_rng)
                record = StepRecord(token=token, bits=float(bits), group_sizes=detail)
                if cfg.collect_stats:
                    # Stats depend only on the distribution and the codec
                    # parameters, so they are cached per distribution.
                    skey = ("stats", codec.name, tuple(sorted(codec.params.items())))
                    stats = dist.cache.get(skey)
                    if stats is None:
                        q_ids, q_probs = codec.step_q(dist)
                        stats = _step_stats(dist, q_ids, q_probs)
                        dist.cache[skey] = stats
                    record.kld_qp, record.kld_pq, record.entropy = stats
            trace.steps.append(record)
            total_tokens += 1
            if token == EOS_ID:
                break
            content.append(token)
            context.append(token)
        sentences.append(content)
        if codec.delivered(msg):
            return sentences, trace


def extract_text(codec, sentences: Sequence[Sequence[int]], provider, cfg: GenerationConfig) -> List[int]:
    """Recover the raw bitstream from stegotext sentences (frame included)."""
    if not isinstance(provider, CachedProvider):
        provider = CachedProvider(provider)
    codec.begin_extract()
    bits: List[int] = []
    for sentence in sentences:
        context = [BOS_ID]
        for pos, token in enumerate(list(sentence) + [EOS_ID]):
            if pos >= cfg.max_len:
                if token != EOS_ID:
                    raise DesyncError(f"sentence exceeds the {cfg.max_len}-token limit")
                break  # forced EOS carried no bits
            dist = provider.get(tuple(context), mask_eos=pos < cfg.min_len)
            bits.extend(codec.extract_step(dist, token))
            context.append(token)
    bits.extend(codec.finish_extract())
    return bits
