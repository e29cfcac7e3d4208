"""Border-input attack.

Signed-gradient PGD searches for integer-pixel images on which platforms in
different equivalence classes disagree about the class label.  A campaign
of such images, with the label each platform is expected to produce, then
identifies a black-box platform from labels alone.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import List, Literal, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, NonNegativeInt, PositiveFloat, PositiveInt, model_validator

from hspi.datasets import to_inputs
from hspi.engine.model import Model, Tape, backward, cross_entropy, forward
from hspi.errors import ProtocolError, ShapeError, UsageError
from hspi.numerics import quantize_array
from hspi.oracle.local import Oracle, labels_of
from hspi.platform import PlatformProfile, emit_logits
from hspi.seeding import substream

logger = logging.getLogger(__name__)

LossKind = Literal["pair-divergence", "one-vs-one-targeted", "one-vs-rest-targeted"]
CampaignStatus = Literal["success", "indistinguishable", "exhausted"]

LOSS_ALIASES = {"pair": "pair-divergence", "1v1": "one-vs-one-targeted", "1vr": "one-vs-rest-targeted"}


class PgdConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    loss: LossKind = "pair-divergence"
    step_size: PositiveFloat = 2 / 255
    max_iters: NonNegativeInt = 400
    target_class: NonNegativeInt | None = None
    singled_out: NonNegativeInt = 1     # profile index pushed away from the target (one-vs-rest)
    batch_size: PositiveInt = 8
    seed: int = 0

    @model_validator(mode="after")
    def _target_iff_targeted(self) -> "PgdConfig":
        targeted = self.loss != "pair-divergence"
        if targeted and self.target_class is None:
            raise ValueError(f"{self.loss} needs target_class")
        if not targeted and self.target_class is not None:
            raise ValueError("pair-divergence takes no target_class")
        return self


# ═══════════════════════════════════════════════════════════════
# Losses
# ═══════════════════════════════════════════════════════════════
# Each loss accepts single logit vectors or batches and, with
# ``with_grad=True``, also returns d(loss)/d(logits) for every argument.

def loss_pair_divergence(logits_h, logits_h2, y_prime, y, *, with_grad: bool = False):
    """CE(F_H, y') + CE(F_H', y); maximized."""
    l1, g1 = cross_entropy(logits_h, y_prime)
    l2, g2 = cross_entropy(logits_h2, y)
    value = l1 + l2
    return (value, [g1, g2]) if with_grad else value


def loss_one_vs_one_targeted(logits_h, logits_h2, y_t, *, with_grad: bool = False):
    """CE(F_H, y_t) − CE(F_H', y_t); minimized."""
    l1, g1 = cross_entropy(logits_h, _broadcast_label(y_t, logits_h))
    l2, g2 = cross_entropy(logits_h2, _broadcast_label(y_t, logits_h2))
    value = l1 - l2
    return (value, [g1, -g2]) if with_grad else value


def loss_one_vs_rest_targeted(all_logits: Sequence[np.ndarray], singled_out: int, y_t, *, with_grad: bool = False):
    """Σ_{k≠i} CE(F_k, y_t) − CE(F_i, y_t); minimized."""
    if not 0 <= singled_out < len(all_logits):
        raise UsageError("bad-singled-out", f"index {singled_out} for {len(all_logits)} profiles")
    value = 0.0
    grads = []
    for k, logits in enumerate(all_logits):
        loss, grad = cross_entropy(logits, _broadcast_label(y_t, logits))
        sign = -1.0 if k == singled_out else 1.0
        value = value + sign * loss
        grads.append(sign * grad)
    return (value, grads) if with_grad else value


def _broadcast_label(y, logits):
    logits = np.asarray(logits)
    return y if logits.ndim == 1 else np.full(logits.shape[0], y, dtype=np.int64)


def project(x: np.ndarray) -> np.ndarray:
    """Clamp to [0, 1] and snap to the 8-bit pixel grid k/255."""
    return np.rint(np.clip(x, 0.0, 1.0) * 255.0) / 255.0


def to_pixels(x: np.ndarray) -> np.ndarray:
    return np.rint(np.clip(x, 0.0, 1.0) * 255.0).astype(np.uint8)


def border_mask(labels: np.ndarray, loss: LossKind, singled_out: int) -> np.ndarray:
    """Rows of an (N, P) label matrix that separate the target profiles."""
    if loss == "one-vs-rest-targeted":
        others = np.delete(labels, singled_out, axis=1)
        return (others != labels[:, [singled_out]]).all(axis=1)
    return labels[:, 0] != labels[:, 1]


# ═══════════════════════════════════════════════════════════════
# Campaign
# ═══════════════════════════════════════════════════════════════

@dataclass
class BorderInputCampaign:
    pixels: np.ndarray                 # uint8 (N, *input_shape)
    expected_labels: np.ndarray        # int64 (N, P); column p = label under profile_ids[p]
    border: np.ndarray                 # bool (N,)
    profile_ids: List[str]
    loss: LossKind
    target_class: int | None
    singled_out: int
    batch_group_used: int
    iterations_used: int
    seed: int
    status: CampaignStatus
    registry_hash: str = ""
    history: List[int] = field(default_factory=list)   # border count after each iteration

    @property
    def inputs(self) -> np.ndarray:
        return to_inputs(self.pixels)

    @property
    def success_rate(self) -> float:
        return float(self.border.mean()) if len(self.border) else 0.0

    @property
    def target_ids(self) -> List[str]:
        return list(self.profile_ids)

    def summary(self) -> str:
        return (f"{self.status}: {int(self.border.sum())}/{len(self.border)} border inputs for "
                f"{','.join(self.profile_ids)} ({self.loss}) after {self.iterations_used} iterations")


def _label_matrix(model: Model, x: np.ndarray, profiles: Sequence[PlatformProfile], request: int) -> np.ndarray:
    cols = []
    for p in profiles:
        labels = [labels_of(emit_logits(model, x[i:i + request], p)) for i in range(0, len(x), request)]
        cols.append(np.concatenate(labels))
    return np.stack(cols, axis=1)


def _objective(cfg: PgdConfig, logits: List[np.ndarray]) -> Tuple[np.ndarray, List[np.ndarray], float]:
    """Per-sample loss, per-profile logit gradients and the step direction (+1 ascent, −1 descent)."""
    if cfg.loss == "pair-divergence":
        y = logits[0].argmax(axis=1)
        y_prime = logits[1].argmax(axis=1)
        value, grads = loss_pair_divergence(logits[0], logits[1], y_prime, y, with_grad=True)
        return value, grads, 1.0
    if cfg.loss == "one-vs-one-targeted":
        value, grads = loss_one_vs_one_targeted(logits[0], logits[1], cfg.target_class, with_grad=True)
        return value, grads, -1.0
    value, grads = loss_one_vs_rest_targeted(logits, cfg.singled_out, cfg.target_class, with_grad=True)
    return value, grads, -1.0


def generate_border_inputs(
    models: Model | Sequence[Model],
    profiles: Sequence[PlatformProfile],
    cfg: PgdConfig,
    start: np.ndarray | None = None,
) -> BorderInputCampaign:
    """Run PGD from ``cfg.batch_size`` random starting images.

    With several support models the losses are summed over models; success
    and expected labels are judged on the first one.  A sample is frozen at
    its first successful iterate.
    """
    models = [models] if isinstance(models, Model) else list(models)
    if not models:
        raise UsageError("no-models", "border search needs at least one model")
    if len(profiles) < 2:
        raise UsageError("too-few-profiles", "border search needs at least two profiles")
    if cfg.loss != "one-vs-rest-targeted" and len(profiles) != 2:
        raise UsageError("bad-profiles", f"{cfg.loss} compares exactly two profiles, got {len(profiles)}")
    if cfg.loss == "one-vs-rest-targeted" and cfg.singled_out >= len(profiles):
        raise UsageError("bad-singled-out", f"index {cfg.singled_out} for {len(profiles)} profiles")
    ref = models[0]
    for m in models[1:]:
        if m.input_shape != ref.input_shape or m.num_classes != ref.num_classes:
            raise ShapeError("model-mismatch", "support models must share input shape and classes")
    if cfg.target_class is not None and cfg.target_class >= ref.num_classes:
        raise UsageError("bad-target", f"target class {cfg.target_class} >= {ref.num_classes}")

    if start is None:
        rng = substream(cfg.seed, "bi/start")
        x = rng.integers(0, 256, size=(cfg.batch_size,) + ref.input_shape) / 255.0
    else:
        x = project(np.asarray(start, dtype=np.float64))
    n = len(x)
    done = np.zeros(n, dtype=bool)
    ever_differed = False
    history: List[int] = []
    iteration = 0

    while True:
        per_model = []
        for m in models:
            tapes = [Tape() for _ in profiles]
            raw = [forward(m, x, p, t) for p, t in zip(profiles, tapes)]
            per_model.append((m, tapes, raw))

        emitted = [quantize_array(r, p.logit_emit_format).astype(np.float32)
                   for r, p in zip(per_model[0][2], profiles)]
        bits = [e.view(np.uint32) for e in emitted]
        ever_differed |= any((b != bits[0]).any() for b in bits[1:])
        labels = np.stack([labels_of(e) for e in emitted], axis=1)
        done |= border_mask(labels, cfg.loss, cfg.singled_out)
        history.append(int(done.sum()))
        if done.all() or iteration >= cfg.max_iters:
            break

        grad = np.zeros_like(x)
        for m, tapes, raw in per_model:
            _, logit_grads, direction = _objective(cfg, raw)
            for t, g in zip(tapes, logit_grads):
                grad += direction * backward(m, x, g, t).d_input
        active = (~done).reshape((n,) + (1,) * (x.ndim - 1))
        x = np.where(active, project(x + cfg.step_size * np.sign(grad)), x)
        iteration += 1
        if iteration % 50 == 0:
            logger.info("iteration %d: %d/%d border inputs", iteration, int(done.sum()), n)

    batch_group_used = max(p.batch_group for p in profiles)
    expected = _label_matrix(ref, x, profiles, batch_group_used)
    border = border_mask(expected, cfg.loss, cfg.singled_out)
    if border.any():
        status: CampaignStatus = "success"
    elif not ever_differed:
        status = "indistinguishable"
    else:
        status = "exhausted"
    campaign = BorderInputCampaign(
        pixels=to_pixels(x),
        expected_labels=expected,
        border=border,
        profile_ids=[p.id for p in profiles],
        loss=cfg.loss,
        target_class=cfg.target_class,
        singled_out=cfg.singled_out,
        batch_group_used=batch_group_used,
        iterations_used=iteration,
        seed=cfg.seed,
        status=status,
        history=history,
    )
    logger.info("%s", campaign.summary())
    return campaign


# ═══════════════════════════════════════════════════════════════
# Identification
# ═══════════════════════════════════════════════════════════════

@dataclass(frozen=True)
class PlatformRanking:
    profile_ids: List[str]
    scores: np.ndarray           # fraction of matching labels per profile
    posteriors: np.ndarray       # scores normalized to sum to 1

    def ranked(self) -> List[Tuple[str, float]]:
        order = sorted(range(len(self.scores)), key=lambda i: (-self.scores[i], i))
        return [(self.profile_ids[i], float(self.scores[i])) for i in order]

    @property
    def top(self) -> str:
        return self.ranked()[0][0]

    def table(self) -> str:
        lines = [f"{'profile':<16}{'score':>8}{'posterior':>11}"]
        for pid, score in self.ranked():
            i = self.profile_ids.index(pid)
            lines.append(f"{pid:<16}{score:>8.3f}{self.posteriors[i]:>11.3f}")
        return "\n".join(lines)


def observe_labels(campaign: BorderInputCampaign, oracle: Oracle) -> np.ndarray:
    info = oracle.info()
    if tuple(info.input_shape) != tuple(campaign.pixels.shape[1:]):
        raise ProtocolError("shape-mismatch", f"oracle expects {info.input_shape}, "
                            f"campaign holds {campaign.pixels.shape[1:]}", 400)
    x = campaign.inputs
    step = campaign.batch_group_used
    return np.concatenate([oracle.query(x[i:i + step]).labels for i in range(0, len(x), step)])


def identify_platform(campaign: BorderInputCampaign, oracle: Oracle) -> PlatformRanking:
    """Score each profile by how often the oracle's label matches the label expected under it."""
    rows = campaign.border if campaign.border.any() else np.ones(len(campaign.border), dtype=bool)
    observed = observe_labels(campaign, oracle)
    matches = campaign.expected_labels[rows] == observed[rows, None]
    scores = matches.mean(axis=0)
    total = scores.sum()
    posteriors = scores / total if total > 0 else np.full(len(scores), 1.0 / len(scores))
    ranking = PlatformRanking(list(campaign.profile_ids), scores, posteriors)
    logger.info("Identified %s (score %.3f)", ranking.top, ranking.ranked()[0][1])
    return ranking
