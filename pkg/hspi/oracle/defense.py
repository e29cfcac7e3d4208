"""Response-side defenses applied by an oracle: logit bit flips and input noise.

Bit flips touch only the low fraction bits of finite logits.  Sign and
exponent bits are never flipped, so labels stay mostly stable.
"""

from __future__ import annotations

import logging
from typing import Protocol

import numpy as np

from hspi.config import parse_options
from hspi.errors import UsageError

logger = logging.getLogger(__name__)


class Defense(Protocol):
    name: str

    def perturb_inputs(self, x: np.ndarray, rng: np.random.Generator) -> np.ndarray: ...

    def perturb_logits(self, logits: np.ndarray, rng: np.random.Generator) -> np.ndarray: ...


class NoDefense:
    name = "none"

    def perturb_inputs(self, x, rng):
        return x

    def perturb_logits(self, logits, rng):
        return logits


class LogitBitFlip:
    def __init__(self, p: float, bits: int = 8) -> None:
        if not 0.0 <= p <= 1.0:
            raise UsageError("bad-defense", f"flip probability {p} outside [0, 1]")
        if not 1 <= bits <= 23:
            raise UsageError("bad-defense", f"bit range {bits} outside 1..23")
        self.p = p
        self.bits = bits
        self.name = f"logit-bitflip:p={p:g},bits={bits}"

    def perturb_inputs(self, x, rng):
        return x

    def perturb_logits(self, logits, rng):
        patterns = np.asarray(logits, dtype=np.float32).view(np.uint32).copy()
        flips = rng.random(patterns.shape + (self.bits,)) < self.p
        weights = np.uint32(1) << np.arange(self.bits, dtype=np.uint32)
        mask = (flips * weights).sum(axis=-1).astype(np.uint32)
        finite = np.isfinite(np.asarray(logits, dtype=np.float32))
        patterns[finite] ^= mask[finite]
        return patterns.view(np.float32)


class InputNoise:
    def __init__(self, sigma: float) -> None:
        if sigma < 0:
            raise UsageError("bad-defense", f"noise sigma {sigma} < 0")
        self.sigma = sigma
        self.name = f"input-noise:sigma={sigma:g}"

    def perturb_inputs(self, x, rng):
        if self.sigma == 0:
            return x
        return np.clip(x + rng.normal(0.0, self.sigma, size=x.shape), 0.0, 1.0)

    def perturb_logits(self, logits, rng):
        return logits


def parse_defense(text: str | None) -> Defense:
    """``none`` | ``logit-bitflip:p=0.05[,bits=8]`` | ``input-noise:sigma=0.01`` (sigma in model-input units)."""
    name, _, opts = (text or "none").strip().partition(":")
    options = parse_options(opts)
    try:
        if name == "none" and not options:
            return NoDefense()
        if name == "logit-bitflip":
            p = float(options.pop("p"))
            bits = int(options.pop("bits", 8))
            if not options:
                return LogitBitFlip(p, bits)
        if name == "input-noise":
            sigma = float(options.pop("sigma"))
            if not options:
                return InputNoise(sigma)
    except (KeyError, ValueError) as exc:
        raise UsageError("bad-defense", f"{text!r}: missing or invalid {exc}") from exc
    raise UsageError("bad-defense", f"unknown defense {text!r}")
