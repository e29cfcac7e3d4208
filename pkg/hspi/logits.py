"""Logit-distribution attack: probes, logit collection and bit-split features."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import List, Literal, Sequence, Tuple

import numpy as np

from hspi.datasets import to_inputs
from hspi.errors import UsageError
from hspi.oracle.local import Oracle
from hspi.seeding import substream

logger = logging.getLogger(__name__)

FeatureMode = Literal["split", "split-raw", "bits"]
FEATURE_MODES: Tuple[str, ...] = ("split", "split-raw", "bits")

_SIGN = np.uint32(0x80000000)
_EXP = np.uint32(0x7F800000)
_FRAC = np.uint32(0x007FFFFF)


# ═══════════════════════════════════════════════════════════════
# Probes
# ═══════════════════════════════════════════════════════════════

@dataclass(frozen=True)
class ProbeSet:
    pixels: np.ndarray      # uint8 (count, *shape)
    seed: int
    set_size: int = 10

    @property
    def count(self) -> int:
        return len(self.pixels)

    @property
    def shape(self) -> Tuple[int, ...]:
        return tuple(self.pixels.shape[1:])

    @property
    def inputs(self) -> np.ndarray:
        return to_inputs(self.pixels)


def make_probes(seed: int, count: int, shape: Sequence[int], set_size: int = 10) -> ProbeSet:
    """Uniform [0, 1) reals scaled to 0–255 and rounded to integer pixels."""
    if set_size < 1 or count < set_size:
        raise UsageError("too-few-probes", f"count {count} < set_size {set_size}")
    rng = substream(seed, "ld/probes")
    pixels = np.rint(rng.random((count,) + tuple(shape)) * 255.0).astype(np.uint8)
    return ProbeSet(pixels, seed, set_size)


def collect_logits(oracle: Oracle, probes: ProbeSet, batch_group: int | None = None) -> np.ndarray:
    """FP32 logits ``[count, C]``, queried in requests of ``batch_group`` probes."""
    info = oracle.info()
    if info.response_mode != "logits":
        raise UsageError("logits-required", f"oracle {info.profile_id} answers labels only")
    if probes.count == 0:
        raise UsageError("empty-probes", "probe set is empty")
    step = batch_group or info.batch_group
    x = probes.inputs
    out = []
    for i in range(0, len(x), step):
        resp = oracle.query(x[i:i + step])
        if resp.logits is None:
            raise UsageError("logits-required", "oracle returned no logits")
        out.append(np.asarray(resp.logits, dtype=np.float32))
    logits = np.concatenate(out, axis=0)
    logger.info("Collected %d x %d logits from %s", *logits.shape, info.profile_id)
    return logits


# ═══════════════════════════════════════════════════════════════
# Bit splitting
# ═══════════════════════════════════════════════════════════════

def split_bits_array(logits: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    bits = np.asarray(logits, dtype=np.float32).view(np.uint32)
    return (bits & _SIGN) >> np.uint32(31), (bits & _EXP) >> np.uint32(23), bits & _FRAC


def split_bits(logit: float) -> Tuple[int, int, int]:
    """``(sign, exponent, fraction)`` of the IEEE-754 single representation."""
    s, e, f = split_bits_array(np.float32(logit))
    return int(s), int(e), int(f)


def reassemble(sign, exponent, fraction) -> np.ndarray:
    bits = ((np.asarray(sign, dtype=np.uint32) << np.uint32(31))
            | (np.asarray(exponent, dtype=np.uint32) << np.uint32(23))
            | np.asarray(fraction, dtype=np.uint32))
    return bits.view(np.float32)


def feature_vectors(logits: np.ndarray, set_size: int, mode: FeatureMode = "split") -> np.ndarray:
    """Pool ``set_size`` consecutive probes into one feature row; leftover probes are dropped.

    ``split``/``split-raw``: (sign, exponent, fraction) per logit.
    ``bits``: the 32 bits of each logit, most significant first.
    """
    if mode not in FEATURE_MODES:
        raise UsageError("bad-feature-mode", f"{mode!r} not in {FEATURE_MODES}")
    logits = np.asarray(logits, dtype=np.float32)
    samples = len(logits) // set_size
    if samples == 0:
        raise UsageError("too-few-probes", f"{len(logits)} logits rows < set_size {set_size}")
    pooled = logits[:samples * set_size].reshape(samples, set_size * logits.shape[1])
    if mode == "bits":
        shifts = np.arange(31, -1, -1, dtype=np.uint32)
        expanded = (pooled.view(np.uint32)[..., None] >> shifts) & np.uint32(1)
        return expanded.reshape(samples, -1).astype(np.float64)
    s, e, f = split_bits_array(pooled)
    return np.stack([s, e, f], axis=-1).reshape(samples, -1).astype(np.float64)


def bit_frequencies(logits: np.ndarray) -> np.ndarray:
    """Fraction of logits with each bit set; index 0 = least significant bit."""
    bits = np.asarray(logits, dtype=np.float32).view(np.uint32).ravel()
    return np.array([((bits >> np.uint32(k)) & np.uint32(1)).mean() for k in range(32)])


# ═══════════════════════════════════════════════════════════════
# Dumps → labelled samples
# ═══════════════════════════════════════════════════════════════

@dataclass(frozen=True)
class LogitDump:
    profile_id: str
    probe_seed: int
    probe_shape: Tuple[int, ...]
    logits: np.ndarray          # float32 (count, C)

    @property
    def count(self) -> int:
        return len(self.logits)


@dataclass(frozen=True)
class FeatureDataset:
    features: np.ndarray        # (N, D)
    labels: np.ndarray          # int64 (N,)
    class_names: List[str]
    set_size: int
    mode: FeatureMode


def build_samples(dumps: Sequence[LogitDump], set_size: int, mode: FeatureMode = "split",
                  class_names: Sequence[str] | None = None) -> FeatureDataset:
    """One class per dump, labelled by its position; all dumps must come from identical probes."""
    if not dumps:
        raise UsageError("no-dumps", "build_samples needs at least one logit dump")
    names = list(class_names) if class_names is not None else [d.profile_id for d in dumps]
    if len(names) != len(dumps):
        raise UsageError("label-count", f"{len(names)} labels for {len(dumps)} dumps")
    first = dumps[0]
    for d in dumps[1:]:
        if (d.probe_seed, d.probe_shape, d.logits.shape) != (first.probe_seed, first.probe_shape, first.logits.shape):
            raise UsageError("probe-mismatch", f"{d.profile_id} used different probes than {first.profile_id}")
    for i, a in enumerate(dumps):
        for b in dumps[i + 1:]:
            if np.array_equal(a.logits.view(np.uint32), b.logits.view(np.uint32)):
                logger.warning("Profiles %s and %s produced identical logits: same EQC on this probe set",
                               a.profile_id, b.profile_id)
    feats, labels = [], []
    for label, d in enumerate(dumps):
        f = feature_vectors(d.logits, set_size, mode)
        feats.append(f)
        labels.append(np.full(len(f), label, dtype=np.int64))
    return FeatureDataset(np.concatenate(feats), np.concatenate(labels), names, set_size, mode)
