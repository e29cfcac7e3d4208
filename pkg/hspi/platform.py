"""Platform profiles, the profile registry file and equivalence-class comparison.

A PlatformProfile is the emulated stand-in for one (accelerator, software
stack) pair.  Two profiles are in the same equivalence class on a
(model, input set) iff every emitted logit is bit-identical.
"""

from __future__ import annotations

import csv
import hashlib
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Annotated, Any, Dict, Iterator, List, Literal, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, PlainSerializer, PlainValidator, PositiveInt, ValidationError

from hspi.config import parse_config_text
from hspi.engine.model import Model, forward
from hspi.errors import ConfigError, UsageError
from hspi.numerics import (
    FP32,
    AccumOrder,
    FormatSpec,
    Scheme,
    format_accum_order,
    format_scheme,
    parse_accum_order,
    parse_scheme,
    quantize_array,
)

logger = logging.getLogger(__name__)


def _parse_float_format(value: Any) -> FormatSpec:
    fmt = parse_scheme(value)
    if not isinstance(fmt, FormatSpec):
        raise ConfigError("bad-format", f"{value!r} is not a floating-point format")
    return fmt


SchemeField = Annotated[Scheme, PlainValidator(parse_scheme), PlainSerializer(format_scheme)]
FloatFormatField = Annotated[FormatSpec, PlainValidator(_parse_float_format), PlainSerializer(format_scheme)]
AccumOrderField = Annotated[AccumOrder, PlainValidator(parse_accum_order), PlainSerializer(format_accum_order)]


class PlatformProfile(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    id: str
    format: SchemeField
    accum_order: AccumOrderField = AccumOrder("blocked", 16)
    accum_format: FloatFormatField = FP32
    conv_kernel: Literal["direct", "gemm"] = "gemm"
    batch_group: PositiveInt = 1
    logit_emit_format: FloatFormatField = FP32

    def replace(self, **changes: Any) -> "PlatformProfile":
        return PlatformProfile(**{**self.model_dump(), **changes})


# Registry file key → PlatformProfile field
_KEYS = {
    "format": "format",
    "accum": "accum_order",
    "accum_format": "accum_format",
    "conv": "conv_kernel",
    "batch_group": "batch_group",
    "emit": "logit_emit_format",
}
_FIELDS = {v: k for k, v in _KEYS.items()}


@dataclass(frozen=True)
class PlatformRegistry:
    profiles: tuple[PlatformProfile, ...]

    def __post_init__(self) -> None:
        if not self.profiles:
            raise ConfigError("empty-registry", "a registry needs at least one profile")
        seen = set()
        for p in self.profiles:
            if p.id in seen:
                raise ConfigError("duplicate-profile", f"profile id {p.id!r} appears twice")
            seen.add(p.id)

    def __len__(self) -> int:
        return len(self.profiles)

    def __iter__(self) -> Iterator[PlatformProfile]:
        return iter(self.profiles)

    @property
    def ids(self) -> List[str]:
        return [p.id for p in self.profiles]

    def index(self, profile_id: str) -> int:
        try:
            return self.ids.index(profile_id)
        except ValueError:
            raise UsageError("unknown-profile", f"{profile_id!r} not in registry {self.ids}") from None

    def get(self, profile_id: str) -> PlatformProfile:
        return self.profiles[self.index(profile_id)]

    def subset(self, ids: Sequence[str]) -> "PlatformRegistry":
        """Profiles named in ``ids``, kept in registry order."""
        wanted = set(ids)
        for pid in ids:
            self.index(pid)
        return PlatformRegistry(tuple(p for p in self.profiles if p.id in wanted))


# ═══════════════════════════════════════════════════════════════
# Registry file
# ═══════════════════════════════════════════════════════════════

def registry_loads(text: str) -> PlatformRegistry:
    blocks = parse_config_text(text)
    if not blocks:
        raise ConfigError("empty-registry", "registry has no profiles")
    profiles = []
    for block in blocks:
        if block.name is None:
            raise ConfigError("bad-section", "entries must follow a [profile-id] header", block.line)
        fields: Dict[str, str] = {"id": block.name}
        for key, (value, lineno) in block.entries.items():
            if key not in _KEYS:
                raise ConfigError("unknown-field", f"{key!r} (allowed: {', '.join(_KEYS)})", lineno)
            fields[_KEYS[key]] = value
        if any(p.id == block.name for p in profiles):
            raise ConfigError("duplicate-profile", f"profile id {block.name!r} appears twice", block.line)
        if "format" not in fields:
            raise ConfigError("missing-field", f"profile {block.name!r} has no format", block.line)
        try:
            profiles.append(PlatformProfile(**fields))
        except ValidationError as exc:
            err = exc.errors()[0]
            field = str(err["loc"][0]) if err["loc"] else ""
            raise ConfigError("bad-profile", f"[{block.name}] {field}: {err['msg']}",
                              block.line_of(_FIELDS.get(field, field))) from exc
        except ConfigError as exc:
            raise ConfigError(exc.code, f"[{block.name}] {exc.message}", block.line) from exc
    return PlatformRegistry(tuple(profiles))


def registry_dumps(registry: PlatformRegistry) -> str:
    out = []
    for p in registry:
        data = p.model_dump()
        out.append(f"[{p.id}]")
        out.extend(f"{key} = {data[field]}" for key, field in _KEYS.items())
        out.append("")
    return "\n".join(out)


def registry_load(path: str | Path) -> PlatformRegistry:
    path = Path(path)
    if not path.is_file():
        raise UsageError("registry-not-found", str(path))
    registry = registry_loads(path.read_text(encoding="utf-8"))
    logger.info("Loaded registry %s: %s", path, ", ".join(registry.ids))
    return registry


def registry_save(registry: PlatformRegistry, path: str | Path) -> None:
    Path(path).write_text(registry_dumps(registry), encoding="utf-8")


def registry_hash(registry: PlatformRegistry) -> str:
    return hashlib.sha256(registry_dumps(registry).encode("utf-8")).hexdigest()


def default_registry_path() -> Path:
    return Path(__file__).parent / "data" / "quant7.cfg"


# ═══════════════════════════════════════════════════════════════
# Emitted logits & EQC comparison
# ═══════════════════════════════════════════════════════════════

def emit_logits(model: Model, x: np.ndarray, profile: PlatformProfile) -> np.ndarray:
    """Logits as they leave a server running ``profile``: FP32 values."""
    logits = forward(model, x, profile)
    return quantize_array(logits, profile.logit_emit_format).astype(np.float32)


FIELD_OF_BIT = ["fraction"] * 23 + ["exponent"] * 8 + ["sign"]


@dataclass(frozen=True)
class DiffReport:
    p1: str
    p2: str
    total_logits: int
    differing_logits: int
    max_abs_delta: float
    bit_flips: np.ndarray   # (32,) flip count per FP32 bit, index 0 = least significant

    @property
    def same_eqc(self) -> bool:
        return self.differing_logits == 0

    def summary(self) -> str:
        verdict = "same EQC" if self.same_eqc else "different EQC"
        return (f"{self.p1} vs {self.p2}: {verdict}; {self.differing_logits}/{self.total_logits} "
                f"logits differ, max |Δ| = {self.max_abs_delta:.6g}")

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.DictWriter(fh, fieldnames=["bit", "field", "flips"])
            writer.writeheader()
            for bit in range(31, -1, -1):
                writer.writerow({"bit": bit, "field": FIELD_OF_BIT[bit], "flips": int(self.bit_flips[bit])})


def bit_flip_histogram(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    xor = np.asarray(a, dtype=np.float32).view(np.uint32) ^ np.asarray(b, dtype=np.float32).view(np.uint32)
    return np.array([int(((xor >> np.uint32(k)) & np.uint32(1)).sum()) for k in range(32)], dtype=np.int64)


def eqc_diff(model: Model, inputs: np.ndarray, p1: PlatformProfile, p2: PlatformProfile) -> DiffReport:
    a = emit_logits(model, inputs, p1)
    b = emit_logits(model, inputs, p2)
    differ = a.view(np.uint32) != b.view(np.uint32)
    with np.errstate(invalid="ignore"):
        delta = np.abs(a.astype(np.float64) - b.astype(np.float64))
    report = DiffReport(
        p1=p1.id,
        p2=p2.id,
        total_logits=int(a.size),
        differing_logits=int(differ.sum()),
        max_abs_delta=float(np.nanmax(delta)) if differ.any() else 0.0,
        bit_flips=bit_flip_histogram(a, b),
    )
    logger.info("%s", report.summary())
    return report
