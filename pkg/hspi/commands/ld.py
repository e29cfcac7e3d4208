"""``hspi ld-collect`` / ``ld-train`` / ``ld-predict``: logit-distribution attack."""

from __future__ import annotations

import argparse
import logging
from collections import Counter

from hspi.commands.common import add_oracle_args, close_oracle, csv_list, open_oracle
from hspi.config import parse_options
from hspi.errors import UsageError
from hspi.logits import FEATURE_MODES, LogitDump, build_samples, collect_logits, feature_vectors, make_probes
from hspi.storage import load_logits, load_svm, save_logits, save_svm
from hspi.svm import svm_predict, svm_train

logger = logging.getLogger(__name__)


def register(sub: argparse._SubParsersAction) -> None:
    p = sub.add_parser("ld-collect", help="query an oracle with random probes and dump its logits")
    add_oracle_args(p)
    p.add_argument("--probes", default="seed=7,count=250", help="seed=N,count=N")
    p.add_argument("--batch-group", type=int, help="probes per request (default: the oracle's batch group)")
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_ld_collect)

    p = sub.add_parser("ld-train", help="train the platform classifier on logit dumps")
    p.add_argument("--in", dest="inputs", required=True, help="comma-separated logit dumps, one per platform")
    p.add_argument("--labels", help="class names, one per dump (default: the profile ids stored in the dumps)")
    p.add_argument("--set-size", type=int, default=10, help="probe logits pooled per sample")
    p.add_argument("--mode", choices=FEATURE_MODES, default="split")
    p.add_argument("--lambda", dest="lam", type=float, default=1e-3)
    p.add_argument("--epochs", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_ld_train)

    p = sub.add_parser("ld-predict", help="classify an oracle's platform from fresh logits")
    p.add_argument("--svm", required=True)
    add_oracle_args(p)
    p.add_argument("--samples", type=int, default=10, help="pooled samples to vote over")
    p.set_defaults(handler=cmd_ld_predict)


def _probe_args(text: str) -> tuple[int, int]:
    opts = parse_options(text)
    try:
        return int(opts.get("seed", 7)), int(opts.get("count", 250))
    except ValueError as exc:
        raise UsageError("bad-probes", f"{text!r}: {exc}") from exc


def cmd_ld_collect(args: argparse.Namespace) -> int:
    seed, count = _probe_args(args.probes)
    oracle = open_oracle(args)
    try:
        info = oracle.info()
        probes = make_probes(seed, count, info.input_shape, set_size=1)
        logits = collect_logits(oracle, probes, args.batch_group)
    finally:
        close_oracle(oracle)
    save_logits(LogitDump(info.profile_id, seed, probes.shape, logits), args.out)
    print(f"{count} x {logits.shape[1]} logits from {info.profile_id} → {args.out}")
    return 0


def cmd_ld_train(args: argparse.Namespace) -> int:
    dumps = [load_logits(path) for path in csv_list(args.inputs)]
    labels = csv_list(args.labels) if args.labels else None
    data = build_samples(dumps, args.set_size, args.mode, labels)
    model = svm_train(data, args.lam, args.epochs, args.seed)
    model.probe_seed = dumps[0].probe_seed
    model.probe_shape = dumps[0].probe_shape
    save_svm(model, args.out)
    assert model.training is not None
    print(model.training.table())
    return 0


def cmd_ld_predict(args: argparse.Namespace) -> int:
    svm = load_svm(args.svm)
    if svm.probe_seed is None or svm.probe_shape is None:
        raise UsageError("no-probe-info", f"{args.svm} does not record its probe set")
    probes = make_probes(svm.probe_seed, args.samples * svm.set_size, svm.probe_shape, svm.set_size)
    oracle = open_oracle(args)
    try:
        logits = collect_logits(oracle, probes)
    finally:
        close_oracle(oracle)
    preds, _ = svm_predict(svm, feature_vectors(logits, svm.set_size, svm.feature_mode))
    votes = Counter(int(p) for p in preds)
    winner = min(votes, key=lambda c: (-votes[c], c))
    for c in sorted(votes, key=lambda c: (-votes[c], c)):
        print(f"{svm.class_names[c]:<16}{votes[c]:>4}/{len(preds)}")
    print(f"predicted platform: {svm.class_names[winner]}")
    return 0
