"""Experiment orchestration: spec file → results.csv + summary.md.

Studies:
  whitebox-ld   SVM over logits of every profile; training accuracy per class
  whitebox-bi   border-input search between a reference and every other profile
  batch-group   campaign separating a profile at two batch groups, identified at each
  defense       clean-trained SVM applied to the same probes re-queried through a defense
  transfer      LD classifier / border campaign built on model A, applied to model B

All randomness derives from the listed seeds through named substreams, and
artifacts carry no timestamps, so reruns are byte-identical.
"""

from __future__ import annotations

import csv
import logging
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterator, List, Literal

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, PositiveFloat, PositiveInt, ValidationError, model_validator

from hspi import __version__
from hspi.border import PgdConfig, generate_border_inputs, identify_platform
from hspi.config import read_flat_config
from hspi.datasets import Dataset, load_dataset
from hspi.engine.model import Model
from hspi.engine.training import DEFAULT_LR, accuracy, parse_model_config, train_reference
from hspi.errors import ConfigError, HspiError
from hspi.logits import LogitDump, build_samples, collect_logits, feature_vectors, make_probes
from hspi.metrics import MetricsReport, report_metrics
from hspi.oracle.defense import LogitBitFlip, parse_defense
from hspi.oracle.local import LocalOracle
from hspi.platform import PlatformProfile, PlatformRegistry, default_registry_path, registry_hash, registry_load
from hspi.seeding import subseed
from hspi.svm import SvmModel, svm_predict, svm_train

logger = logging.getLogger(__name__)

Study = Literal["whitebox-ld", "whitebox-bi", "batch-group", "defense", "transfer"]
_ATTACK_OF_STUDY = {"whitebox-ld": "ld", "whitebox-bi": "bi", "batch-group": "bi", "defense": "ld"}

CSV_FIELDS = ["experiment", "study", "seed", "subject", "metric", "value", "registry_hash"]


class ExperimentSpec(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    name: str
    study: Study
    attack: Literal["bi", "ld"]
    seeds: List[int] = Field(min_length=1)
    registry: Path = Field(default_factory=default_registry_path)
    profiles: List[str] = []
    reference: str | None = None
    dataset: str = "synthetic:n=600,size=16,seed=0"
    model: str = "cnn:width=8"
    train_epochs: PositiveInt = 12
    lr: PositiveFloat = DEFAULT_LR
    # ld
    probes: PositiveInt = 250
    set_size: PositiveInt = 10
    feature_mode: Literal["split", "split-raw", "bits"] = "bits"
    svm_epochs: PositiveInt = 200
    svm_lambda: PositiveFloat = 1e-3
    # bi
    loss: Literal["pair-divergence", "one-vs-one-targeted", "one-vs-rest-targeted"] = "pair-divergence"
    target_class: int | None = None
    iters: PositiveInt = 400
    batch_size: PositiveInt = 8
    step_size: PositiveFloat = 2 / 255
    # studies
    batch_groups: List[PositiveInt] = [1, 8]
    defense: str = "logit-bitflip:p=0.05,bits=8"
    iter_levels: List[PositiveInt] = []
    output: Path | None = None

    @model_validator(mode="after")
    def _consistent(self) -> "ExperimentSpec":
        expected = _ATTACK_OF_STUDY.get(self.study)
        if expected and self.attack != expected:
            raise ValueError(f"study {self.study} runs the {expected} attack, not {self.attack}")
        if self.study == "whitebox-bi" and not self.reference:
            raise ValueError("study whitebox-bi needs a reference profile")
        if self.study == "batch-group" and len(set(self.batch_groups)) < 2:
            raise ValueError("study batch-group needs at least two distinct batch_groups")
        if self.attack == "bi" and self.study == "transfer" and not self.reference:
            raise ValueError("bi transfer needs a reference profile")
        if self.probes < self.set_size:
            raise ValueError(f"probes {self.probes} < set_size {self.set_size}")
        return self


_LIST_FIELDS = {"seeds", "profiles", "batch_groups", "iter_levels"}


def load_experiment_spec(path: str | Path) -> ExperimentSpec:
    path = Path(path)
    if not path.is_file():
        raise ConfigError("spec-not-found", str(path))
    block = read_flat_config(path)
    fields: Dict[str, object] = {}
    for key, (value, lineno) in block.entries.items():
        if key not in ExperimentSpec.model_fields:
            raise ConfigError("unknown-field", repr(key), lineno)
        if key in _LIST_FIELDS:
            fields[key] = [v.strip() for v in value.split(",") if v.strip()]
        elif key in ("registry", "output"):
            fields[key] = value if value == "builtin" else str(path.parent / value)
        else:
            fields[key] = value
    if fields.get("registry") == "builtin":
        fields.pop("registry")
    try:
        return ExperimentSpec(**fields)
    except ValidationError as exc:
        err = exc.errors()[0]
        key = str(err["loc"][0]) if err["loc"] else ""
        raise ConfigError("bad-spec", f"{key}: {err['msg']}", block.line_of(key) if key else block.line) from exc


def bundled_spec(name: str) -> Path:
    return Path(__file__).parent / "data" / "experiments" / f"{name}.cfg"


# ═══════════════════════════════════════════════════════════════
# Run
# ═══════════════════════════════════════════════════════════════

@dataclass
class ExperimentResult:
    csv_path: Path
    summary_path: Path
    rows: List[Dict[str, str]] = field(default_factory=list)


@contextmanager
def _stage(name: str) -> Iterator[None]:
    logger.info("Stage %s", name)
    try:
        yield
    except HspiError as exc:
        exc.stage = name  # type: ignore[attr-defined]
        logger.error("Stage %s failed: %s", name, exc)
        raise


def at_batch_group(profile: PlatformProfile, batch_group: int) -> PlatformProfile:
    return profile.replace(id=f"{profile.id}@bg{batch_group}", batch_group=batch_group)


def flipped_weight_share(svm: SvmModel, defense) -> float | None:
    """Fraction of the SVM's absolute weight on the bit positions a LogitBitFlip can touch (bits mode only)."""
    if svm.feature_mode != "bits" or not isinstance(defense, LogitBitFlip):
        return None
    w = np.abs(svm.weights).reshape(svm.class_count, -1, 32)
    total = w.sum()
    return float(w[..., 32 - defense.bits:].sum() / total) if total > 0 else 0.0


def _changed_bits(clean: List[LogitDump], defended: List[LogitDump]) -> float:
    """Mean number of differing bits per logit."""
    diff = np.concatenate([(a.logits.view(np.uint32) ^ b.logits.view(np.uint32)).ravel()
                           for a, b in zip(clean, defended)])
    return float(np.unpackbits(diff.view(np.uint8)).sum() / max(1, diff.size))


class _Run:
    def __init__(self, spec: ExperimentSpec, registry: PlatformRegistry, profiles: List[PlatformProfile],
                 reg_hash: str) -> None:
        self.spec = spec
        self.registry = registry
        self.profiles = profiles
        self.reg_hash = reg_hash
        self.rows: List[Dict[str, str]] = []
        self.sections: List[str] = []

    def row(self, seed: int, subject: str, metric: str, value) -> None:
        text = f"{value:.6f}" if isinstance(value, float) else str(value)
        self.rows.append({"experiment": self.spec.name, "study": self.spec.study, "seed": str(seed),
                          "subject": subject, "metric": metric, "value": text, "registry_hash": self.reg_hash})

    def metric_rows(self, seed: int, prefix: str, report: MetricsReport) -> None:
        for r in report.rows():
            for metric in ("accuracy", "f1", "random_f1"):
                self.row(seed, f"{prefix}{r['class']}", metric, r[metric])

    def section(self, title: str, body: str) -> None:
        self.sections.append(f"## {title}\n\n```\n{body}\n```\n")

    # ── shared pieces ────────────────────────────────────────
    def train(self, dataset: Dataset, seed: int, tag: str) -> Model:
        with _stage(f"train-{tag}"):
            model = train_reference(parse_model_config(self.spec.model), dataset, self.spec.train_epochs,
                                    self.spec.lr, subseed(seed, f"model/{tag}"))
            self.row(seed, f"model-{tag}", "train_accuracy", accuracy(model, dataset))
            return model

    def collect(self, model: Model, seed: int, defense: str = "none") -> List[LogitDump]:
        probes = make_probes(subseed(seed, "probes"), self.spec.probes, model.input_shape, self.spec.set_size)
        dumps = []
        for p in self.profiles:
            oracle = LocalOracle(model, p, "logits", parse_defense(defense), seed=subseed(seed, f"oracle/{p.id}"))
            dumps.append(LogitDump(p.id, probes.seed, probes.shape, collect_logits(oracle, probes)))
        return dumps

    def fit(self, dumps: List[LogitDump], seed: int) -> SvmModel:
        data = build_samples(dumps, self.spec.set_size, self.spec.feature_mode)
        return svm_train(data, self.spec.svm_lambda, self.spec.svm_epochs, subseed(seed, "svm"))

    def evaluate(self, svm: SvmModel, dumps: List[LogitDump]) -> MetricsReport:
        preds, labels = [], []
        for label, d in enumerate(dumps):
            pred, _ = svm_predict(svm, feature_vectors(d.logits, self.spec.set_size, self.spec.feature_mode))
            preds.append(pred)
            labels.append(np.full(len(pred), label))
        return report_metrics(np.concatenate(preds), np.concatenate(labels), svm.class_names)

    def pgd(self, seed: int, iters: int | None = None) -> PgdConfig:
        return PgdConfig(loss=self.spec.loss, step_size=self.spec.step_size, max_iters=iters or self.spec.iters,
                         target_class=self.spec.target_class, batch_size=self.spec.batch_size,
                         seed=subseed(seed, "pgd"))

    # ── studies ──────────────────────────────────────────────
    def whitebox_ld(self, dataset: Dataset) -> None:
        for seed in self.spec.seeds:
            model = self.train(dataset, seed, "a")
            with _stage("collect"):
                dumps = self.collect(model, seed)
            with _stage("svm"):
                svm = self.fit(dumps, seed)
            assert svm.training is not None
            self.metric_rows(seed, "", svm.training)
            self.section(f"Training accuracy, seed {seed}", svm.training.table())

    def defense(self, dataset: Dataset) -> None:
        for seed in self.spec.seeds:
            model = self.train(dataset, seed, "a")
            with _stage("collect"):
                clean = self.collect(model, seed)
            with _stage("svm"):
                svm = self.fit(clean, seed)
            # Same probes as training, queried again: ld-predict regenerates them from the svm file.
            with _stage("defended-collect"):
                requery = self.collect(model, seed)
                defended = self.collect(model, seed, self.spec.defense)
            base = self.evaluate(svm, requery)
            hit = self.evaluate(svm, defended)
            self.metric_rows(seed, "none/", base)
            self.metric_rows(seed, "defended/", hit)
            self.row(seed, "overall", "accuracy_drop", base.accuracy - hit.accuracy)
            share = flipped_weight_share(svm, parse_defense(self.spec.defense))
            if share is not None:
                self.row(seed, "overall", "flipped_bit_weight_share", share)
            self.row(seed, "overall", "changed_logit_bits", _changed_bits(requery, defended))
            self.section(f"No defense, seed {seed}", base.table())
            self.section(f"{self.spec.defense}, seed {seed}", hit.table())

    def whitebox_bi(self, dataset: Dataset) -> None:
        ref = self.registry.get(self.spec.reference or "")
        lines = [f"{'pair':<24}{'success':>10}"]
        models = {seed: self.train(dataset, seed, "a") for seed in self.spec.seeds}
        for p in self.profiles:
            if p.id == ref.id:
                continue
            wins = 0
            for seed, model in models.items():
                with _stage(f"bi-{p.id}"):
                    camp = generate_border_inputs(model, [ref, p], self.pgd(seed))
                wins += camp.status == "success"
                self.row(seed, f"{ref.id}/{p.id}", "status", camp.status)
                self.row(seed, f"{ref.id}/{p.id}", "border_inputs", int(camp.border.sum()))
                self.row(seed, f"{ref.id}/{p.id}", "iterations", camp.iterations_used)
            lines.append(f"{ref.id + ' vs ' + p.id:<24}{wins / len(models):>10.2f}")
        self.section("Border-input success rate over seeds", "\n".join(lines))

    def batch_group(self, dataset: Dataset) -> None:
        built, *others = list(dict.fromkeys(self.spec.batch_groups))
        lines = [f"{'campaign':<28}{'status':>12}{'served':>10}{'built_score':>13}{'top':>22}"]
        for seed in self.spec.seeds:
            model = self.train(dataset, seed, "a")
            for p in self.profiles:
                for bg in others:
                    pair = [at_batch_group(p, built), at_batch_group(p, bg)]
                    subject = f"{pair[0].id}/{pair[1].id}"
                    with _stage(f"bi-{subject}"):
                        camp = generate_border_inputs(model, pair, self.pgd(seed))
                    self.row(seed, subject, "status", camp.status)
                    self.row(seed, subject, "border_inputs", int(camp.border.sum()))
                    for served in pair:
                        ranking = identify_platform(camp, LocalOracle(model, served))
                        top, _ = ranking.ranked()[0]
                        built_score = float(ranking.scores[0])
                        self.row(seed, f"{subject}@{served.id}", "built_score", built_score)
                        self.row(seed, f"{subject}@{served.id}", "top_profile", top)
                        lines.append(f"{subject:<28}{camp.status:>12}{served.batch_group:>10}"
                                     f"{built_score:>13.3f}{top:>22}")
        self.section(f"Campaign built at batch group {built}, identified at each served batch group",
                     "\n".join(lines))

    def transfer(self, dataset: Dataset) -> None:
        for seed in self.spec.seeds:
            model_a = self.train(dataset, seed, "a")
            model_b = self.train(dataset, seed, "b")
            if self.spec.attack == "ld":
                with _stage("collect"):
                    dumps_a = self.collect(model_a, seed)
                    dumps_b = self.collect(model_b, seed)
                with _stage("svm"):
                    svm = self.fit(dumps_a, seed)
                report = self.evaluate(svm, dumps_b)
                self.metric_rows(seed, "", report)
                self.row(seed, "overall", "classes_above_random", report.classes_above_random)
                self.section(f"Model A → model B, seed {seed}", report.table())
            else:
                self._transfer_bi(model_a, model_b, seed)

    def _transfer_bi(self, model_a: Model, model_b: Model, seed: int) -> None:
        ref = self.registry.get(self.spec.reference or "")
        levels = self.spec.iter_levels or [self.spec.iters]
        lines = [f"{'pair':<24}{'iters':>8}{'border':>8}{'transfer':>10}"]
        for p in self.profiles:
            if p.id == ref.id:
                continue
            for iters in levels:
                with _stage(f"bi-{p.id}"):
                    camp = generate_border_inputs([model_a], [ref, p], self.pgd(seed, iters))
                correct = 0
                for served in (ref, p):
                    ranking = identify_platform(camp, LocalOracle(model_b, served))
                    correct += ranking.top == served.id and ranking.scores.max() > ranking.scores.min()
                rate = correct / 2
                self.row(seed, f"{ref.id}/{p.id}@{iters}", "border_inputs", int(camp.border.sum()))
                self.row(seed, f"{ref.id}/{p.id}@{iters}", "transfer_identification", rate)
                lines.append(f"{ref.id + ' vs ' + p.id:<24}{iters:>8}{int(camp.border.sum()):>8}{rate:>10.2f}")
        self.section(f"Border inputs from model A identifying model B, seed {seed}", "\n".join(lines))


def run_experiment(spec: ExperimentSpec, out_dir: str | Path | None = None) -> ExperimentResult:
    with _stage("validate"):
        registry = registry_load(spec.registry)
        profiles = registry.subset(spec.profiles) if spec.profiles else registry
        if spec.reference:
            registry.get(spec.reference)
            if spec.reference not in profiles.ids:
                raise ConfigError("bad-spec", f"reference {spec.reference!r} is not among the profiles")
        parse_model_config(spec.model)
        parse_defense(spec.defense)
        if spec.attack == "ld" and len(profiles) < 2:
            raise ConfigError("bad-spec", "the ld attack needs at least two profiles")
        out = Path(out_dir or spec.output or Path("results") / spec.name)
    with _stage("dataset"):
        dataset = load_dataset(spec.dataset)

    run = _Run(spec, registry, list(profiles), registry_hash(registry))
    getattr(run, spec.study.replace("-", "_"))(dataset)

    out.mkdir(parents=True, exist_ok=True)
    csv_path = out / "results.csv"
    with open(csv_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=CSV_FIELDS)
        writer.writeheader()
        writer.writerows(run.rows)
    summary_path = out / "summary.md"
    header = (f"# {spec.name}\n\n"
              f"- study: {spec.study} ({spec.attack})\n"
              f"- hspi version: {__version__}\n"
              f"- registry: sha256 {run.reg_hash}\n"
              f"- profiles: {', '.join(profiles.ids)}\n"
              f"- seeds: {', '.join(map(str, spec.seeds))}\n"
              f"- dataset: {spec.dataset}; model: {spec.model}\n\n")
    summary_path.write_text(header + "\n".join(run.sections), encoding="utf-8")
    logger.info("Wrote %s and %s", csv_path, summary_path)
    return ExperimentResult(csv_path, summary_path, run.rows)
