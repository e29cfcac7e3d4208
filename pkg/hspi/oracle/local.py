"""In-process oracle: a model served under one platform profile."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Literal, Protocol, Tuple

import numpy as np

from hspi.config import settings
from hspi.engine.model import Model
from hspi.errors import ProtocolError
from hspi.oracle.defense import Defense, NoDefense
from hspi.platform import PlatformProfile, emit_logits

logger = logging.getLogger(__name__)

ResponseMode = Literal["logits", "label-only"]


@dataclass(frozen=True)
class QueryResponse:
    labels: np.ndarray                 # int64 (B,)
    logits: np.ndarray | None          # float32 (B, C); None in label-only mode
    served_batch_size: int


@dataclass(frozen=True)
class OracleInfo:
    profile_id: str
    input_shape: Tuple[int, ...]
    num_classes: int
    response_mode: ResponseMode
    batch_group: int
    max_batch: int
    defense: str


class Oracle(Protocol):
    def info(self) -> OracleInfo: ...

    def query(self, inputs: np.ndarray) -> QueryResponse: ...


def labels_of(logits: np.ndarray) -> np.ndarray:
    """Row-wise argmax; ties go to the lowest index."""
    return np.argmax(logits, axis=1).astype(np.int64)


class LocalOracle:
    def __init__(
        self,
        model: Model,
        profile: PlatformProfile,
        response_mode: ResponseMode = "logits",
        defense: Defense | None = None,
        seed: int | None = None,
        max_batch: int | None = None,
    ) -> None:
        self.model = model
        self.profile = profile
        self.response_mode = response_mode
        self.defense = defense or NoDefense()
        self.seed = settings.HSPI_ORACLE_SEED if seed is None else seed
        self.max_batch = max_batch or settings.HSPI_MAX_BATCH
        self._rng = np.random.default_rng(self.seed)

    def session(self, seed: int) -> "LocalOracle":
        """Same model and profile with a fresh defense RNG."""
        return LocalOracle(self.model, self.profile, self.response_mode, self.defense, seed, self.max_batch)

    def info(self) -> OracleInfo:
        return OracleInfo(
            profile_id=self.profile.id,
            input_shape=self.model.input_shape,
            num_classes=self.model.num_classes,
            response_mode=self.response_mode,
            batch_group=self.profile.batch_group,
            max_batch=self.max_batch,
            defense=self.defense.name,
        )

    def query(self, inputs: np.ndarray) -> QueryResponse:
        x = np.asarray(inputs, dtype=np.float64)
        if x.ndim != len(self.model.input_shape) + 1 or x.shape[1:] != self.model.input_shape or x.shape[0] < 1:
            raise ProtocolError("shape-mismatch", f"expected (B, {self.model.input_shape}), got {x.shape}", 400)
        if x.shape[0] > self.max_batch:
            raise ProtocolError("batch-too-large", f"{x.shape[0]} > {self.max_batch}", 413)
        if not np.isfinite(x).all():
            raise ProtocolError("bad-input", "inputs must be finite", 400)

        x = self.defense.perturb_inputs(x, self._rng)
        logits = self.defense.perturb_logits(emit_logits(self.model, x, self.profile), self._rng)
        labels = labels_of(logits)
        return QueryResponse(
            labels=labels,
            logits=logits if self.response_mode == "logits" else None,
            served_batch_size=x.shape[0],
        )
