"""Binary artifact files: model weights, border campaigns, logit dumps and SVMs.

All files start with a 6-byte magic.  Campaign, dump and SVM files then
carry a length-prefixed JSON header (validated by a pydantic model) followed
by raw little-endian arrays.  Weights use a purely positional layout.
"""

from __future__ import annotations

import logging
import struct
from pathlib import Path
from typing import List, Literal, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, ValidationError

from hspi.border import BorderInputCampaign
from hspi.engine.layers import LAYER_TYPES, AvgPool2d, Conv2d, Layer, Linear, MaxPool2d
from hspi.engine.model import Model
from hspi.errors import UsageError
from hspi.logits import LogitDump
from hspi.svm import SvmModel

logger = logging.getLogger(__name__)

WEIGHTS_MAGIC = b"HSPIW1"
CAMPAIGN_MAGIC = b"HSPIBC"
DUMP_MAGIC = b"HSPILD"
SVM_MAGIC = b"HSPISV"
FORMAT_VERSION = 1


class _Reader:
    def __init__(self, data: bytes, path: Path) -> None:
        self.data = data
        self.pos = 0
        self.path = path

    def take(self, fmt: str) -> Tuple:
        s = struct.Struct("<" + fmt)
        if self.pos + s.size > len(self.data):
            raise UsageError("corrupt-file", f"{self.path}: truncated")
        out = s.unpack_from(self.data, self.pos)
        self.pos += s.size
        return out

    def array(self, dtype: str, shape: Tuple[int, ...]) -> np.ndarray:
        dt = np.dtype(dtype)
        n = int(np.prod(shape, dtype=np.int64)) * dt.itemsize
        if self.pos + n > len(self.data):
            raise UsageError("corrupt-file", f"{self.path}: truncated")
        out = np.frombuffer(self.data, dtype=dt, count=n // dt.itemsize, offset=self.pos).reshape(shape)
        self.pos += n
        return out.copy()

    def done(self) -> None:
        if self.pos != len(self.data):
            raise UsageError("corrupt-file", f"{self.path}: {len(self.data) - self.pos} trailing bytes")


def _open(path: str | Path, magic: bytes) -> _Reader:
    path = Path(path)
    if not path.is_file():
        raise UsageError("file-not-found", str(path))
    data = path.read_bytes()
    if data[:len(magic)] != magic:
        raise UsageError("bad-magic", f"{path} is not a {magic.decode()} file")
    r = _Reader(data, path)
    r.pos = len(magic)
    return r


def _header(r: _Reader, model: type[BaseModel]):
    (version, length) = r.take("HI")
    if version != FORMAT_VERSION:
        raise UsageError("unsupported-version", f"{r.path}: version {version}")
    try:
        return model.model_validate_json(r.data[r.pos:r.pos + length])
    except ValidationError as exc:
        raise UsageError("corrupt-file", f"{r.path}: bad header: {exc.errors()[0]['msg']}") from exc
    finally:
        r.pos += length


def _pack_header(meta: BaseModel) -> bytes:
    body = meta.model_dump_json().encode("utf-8")
    return struct.pack("<HI", FORMAT_VERSION, len(body)) + body


def _write(path: str | Path, blob: bytes) -> None:
    Path(path).write_bytes(blob)
    logger.info("Wrote %s (%d bytes)", path, len(blob))


# ═══════════════════════════════════════════════════════════════
# Weights
# ═══════════════════════════════════════════════════════════════

def _layer_meta(layer: Layer) -> List[int]:
    if isinstance(layer, Conv2d):
        return [layer.stride, layer.pad]
    if isinstance(layer, (MaxPool2d, AvgPool2d)):
        return [layer.k]
    return []


def dump_model(model: Model) -> bytes:
    """Magic, u32 layer count, per layer (tag, meta, params as shape + FP32 data), then the input shape."""
    out = [WEIGHTS_MAGIC, struct.pack("<I", len(model.layers))]
    for layer in model.layers:
        meta = _layer_meta(layer)
        params = layer.params()
        out.append(struct.pack(f"<BB{len(meta)}IB", layer.tag, len(meta), *meta, len(params)))
        for p in params:
            out.append(struct.pack(f"<B{p.ndim}I", p.ndim, *p.shape))
            out.append(p.astype("<f4").tobytes())
    out.append(struct.pack(f"<B{len(model.input_shape)}I", len(model.input_shape), *model.input_shape))
    return b"".join(out)


def save_model(model: Model, path: str | Path) -> None:
    _write(path, dump_model(model))


def load_model(path: str | Path) -> Model:
    r = _open(path, WEIGHTS_MAGIC)
    (count,) = r.take("I")
    layers: List[Layer] = []
    for _ in range(count):
        tag, n_meta = r.take("BB")
        meta = r.take(f"{n_meta}I")
        (n_params,) = r.take("B")
        params = []
        for _ in range(n_params):
            (pdim,) = r.take("B")
            shape = r.take(f"{pdim}I")
            params.append(r.array("<f4", shape).astype(np.float64))
        cls = LAYER_TYPES.get(tag)
        if cls is None:
            raise UsageError("corrupt-file", f"{path}: unknown layer tag {tag}")
        if cls is Linear:
            layers.append(Linear(*params))
        elif cls is Conv2d:
            layers.append(Conv2d(params[0], params[1], *meta))
        elif cls in (MaxPool2d, AvgPool2d):
            layers.append(cls(*meta))
        else:
            layers.append(cls())
    (ndim,) = r.take("B")
    input_shape = r.take(f"{ndim}I")
    r.done()
    return Model(input_shape, layers)


# ═══════════════════════════════════════════════════════════════
# Border campaigns
# ═══════════════════════════════════════════════════════════════

class _CampaignHeader(BaseModel):
    model_config = ConfigDict(extra="forbid")

    profile_ids: List[str]
    input_shape: List[int]
    count: int
    loss: Literal["pair-divergence", "one-vs-one-targeted", "one-vs-rest-targeted"]
    target_class: int | None
    singled_out: int
    batch_group_used: int
    iterations_used: int
    seed: int
    status: Literal["success", "indistinguishable", "exhausted"]
    registry_hash: str = ""
    history: List[int] = []


def save_campaign(campaign: BorderInputCampaign, path: str | Path) -> None:
    header = _CampaignHeader(
        profile_ids=campaign.profile_ids,
        input_shape=list(campaign.pixels.shape[1:]),
        count=len(campaign.pixels),
        loss=campaign.loss,
        target_class=campaign.target_class,
        singled_out=campaign.singled_out,
        batch_group_used=campaign.batch_group_used,
        iterations_used=campaign.iterations_used,
        seed=campaign.seed,
        status=campaign.status,
        registry_hash=campaign.registry_hash,
        history=campaign.history,
    )
    _write(path, b"".join([
        CAMPAIGN_MAGIC, _pack_header(header),
        np.ascontiguousarray(campaign.pixels, dtype=np.uint8).tobytes(),
        campaign.border.astype(np.uint8).tobytes(),
        campaign.expected_labels.astype("<u4").tobytes(),
    ]))


def load_campaign(path: str | Path) -> BorderInputCampaign:
    r = _open(path, CAMPAIGN_MAGIC)
    h = _header(r, _CampaignHeader)
    pixels = r.array("u1", (h.count, *h.input_shape))
    border = r.array("u1", (h.count,)).astype(bool)
    expected = r.array("<u4", (h.count, len(h.profile_ids))).astype(np.int64)
    r.done()
    return BorderInputCampaign(
        pixels=pixels, expected_labels=expected, border=border, profile_ids=h.profile_ids, loss=h.loss,
        target_class=h.target_class, singled_out=h.singled_out, batch_group_used=h.batch_group_used,
        iterations_used=h.iterations_used, seed=h.seed, status=h.status, registry_hash=h.registry_hash,
        history=h.history,
    )


# ═══════════════════════════════════════════════════════════════
# Logit dumps
# ═══════════════════════════════════════════════════════════════

class _DumpHeader(BaseModel):
    model_config = ConfigDict(extra="forbid")

    profile_id: str
    probe_seed: int
    probe_shape: List[int]
    count: int
    num_classes: int


def save_logits(dump: LogitDump, path: str | Path) -> None:
    header = _DumpHeader(profile_id=dump.profile_id, probe_seed=dump.probe_seed,
                         probe_shape=list(dump.probe_shape), count=dump.logits.shape[0],
                         num_classes=dump.logits.shape[1])
    bits = np.ascontiguousarray(dump.logits, dtype=np.float32).view(np.uint32).astype("<u4")
    _write(path, DUMP_MAGIC + _pack_header(header) + bits.tobytes())


def load_logits(path: str | Path) -> LogitDump:
    r = _open(path, DUMP_MAGIC)
    h = _header(r, _DumpHeader)
    bits = r.array("<u4", (h.count, h.num_classes)).astype(np.uint32)
    r.done()
    return LogitDump(h.profile_id, h.probe_seed, tuple(h.probe_shape), bits.view(np.float32))


# ═══════════════════════════════════════════════════════════════
# SVM
# ═══════════════════════════════════════════════════════════════

class _SvmHeader(BaseModel):
    model_config = ConfigDict(extra="forbid")

    class_names: List[str]
    feature_dim: int
    feature_mode: Literal["split", "split-raw", "bits"]
    set_size: int
    lam: float
    epochs: int
    seed: int
    probe_seed: int | None = None
    probe_shape: List[int] | None = None
    training_accuracy: float | None = None


def save_svm(model: SvmModel, path: str | Path) -> None:
    header = _SvmHeader(
        class_names=model.class_names, feature_dim=model.feature_dim, feature_mode=model.feature_mode,
        set_size=model.set_size, lam=model.lam, epochs=model.epochs, seed=model.seed,
        probe_seed=model.probe_seed,
        probe_shape=list(model.probe_shape) if model.probe_shape is not None else None,
        training_accuracy=model.training.accuracy if model.training else None,
    )
    arrays = [model.weights, model.biases, model.mean, model.scale]
    _write(path, SVM_MAGIC + _pack_header(header) + b"".join(a.astype("<f8").tobytes() for a in arrays))


def load_svm(path: str | Path) -> SvmModel:
    r = _open(path, SVM_MAGIC)
    h = _header(r, _SvmHeader)
    c, d = len(h.class_names), h.feature_dim
    weights = r.array("<f8", (c, d)).astype(np.float64)
    biases = r.array("<f8", (c,)).astype(np.float64)
    mean = r.array("<f8", (d,)).astype(np.float64)
    scale = r.array("<f8", (d,)).astype(np.float64)
    r.done()
    return SvmModel(weights, biases, mean, scale, h.class_names, h.feature_mode, h.set_size, h.lam, h.epochs,
                    h.seed, h.probe_seed, tuple(h.probe_shape) if h.probe_shape is not None else None)
