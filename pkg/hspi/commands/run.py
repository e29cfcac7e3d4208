"""``hspi run``: run an experiment spec (a path or a bundled spec name)."""

from __future__ import annotations

import argparse
from pathlib import Path

from hspi.experiment import bundled_spec, load_experiment_spec, run_experiment


def register(sub: argparse._SubParsersAction) -> None:
    p = sub.add_parser("run", help="run an experiment and write results.csv + summary.md")
    p.add_argument("--spec", required=True,
                   help="spec file, or a bundled name: quant7-whitebox-ld, quant-pairs-whitebox-bi, "
                        "batch-group, bitflip-defense, transfer")
    p.add_argument("--out", help="output directory (default: the experiment's output field, else results/<name>)")
    p.set_defaults(handler=cmd_run)


def cmd_run(args: argparse.Namespace) -> int:
    path = Path(args.spec)
    if not path.exists() and bundled_spec(args.spec).is_file():
        path = bundled_spec(args.spec)
    result = run_experiment(load_experiment_spec(path), args.out)
    print(result.summary_path.read_text(encoding="utf-8"))
    return 0
