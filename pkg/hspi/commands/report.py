"""``hspi report``: evaluate a trained classifier on logit dumps and export CSV tables."""

from __future__ import annotations

import argparse
import csv
from pathlib import Path

import numpy as np

from hspi.commands.common import csv_list
from hspi.errors import UsageError
from hspi.logits import bit_frequencies, feature_vectors
from hspi.metrics import report_metrics
from hspi.platform import FIELD_OF_BIT
from hspi.storage import load_logits, load_svm
from hspi.svm import svm_predict


def register(sub: argparse._SubParsersAction) -> None:
    p = sub.add_parser("report", help="accuracy/F1 tables and logit-bit histograms as text and CSV")
    p.add_argument("--in", dest="inputs", required=True, help="comma-separated logit dumps")
    p.add_argument("--svm", help="classifier to evaluate; dumps are matched to its classes by profile id")
    p.add_argument("--out", required=True, help="directory for metrics.csv and bit_histogram.csv")
    p.set_defaults(handler=cmd_report)


def write_bit_histogram(dumps, path: Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=["profile", "bit", "field", "fraction_set"])
        writer.writeheader()
        for d in dumps:
            freq = bit_frequencies(d.logits)
            for bit in range(31, -1, -1):
                writer.writerow({"profile": d.profile_id, "bit": bit, "field": FIELD_OF_BIT[bit],
                                 "fraction_set": f"{freq[bit]:.6f}"})


def cmd_report(args: argparse.Namespace) -> int:
    dumps = [load_logits(path) for path in csv_list(args.inputs)]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_bit_histogram(dumps, out / "bit_histogram.csv")
    if args.svm:
        svm = load_svm(args.svm)
        preds, labels = [], []
        for d in dumps:
            if d.profile_id not in svm.class_names:
                raise UsageError("unknown-class", f"{d.profile_id!r} is not a class of {args.svm}")
            p, _ = svm_predict(svm, feature_vectors(d.logits, svm.set_size, svm.feature_mode))
            preds.append(p)
            labels.append(np.full(len(p), svm.class_names.index(d.profile_id)))
        report = report_metrics(np.concatenate(preds), np.concatenate(labels), svm.class_names)
        report.write_csv(out / "metrics.csv")
        print(report.table())
    print(f"wrote {out}")
    return 0
