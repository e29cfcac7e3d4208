"""``hspi eqc-diff``: compare the logits two profiles emit for the same inputs."""

from __future__ import annotations

import argparse

from hspi.commands.common import registry_arg
from hspi.logits import make_probes
from hspi.platform import eqc_diff, registry_load
from hspi.storage import load_model


def register(sub: argparse._SubParsersAction) -> None:
    p = sub.add_parser("eqc-diff", help="check whether two profiles share an equivalence class")
    p.add_argument("--model", required=True)
    p.add_argument("--registry", help="registry file (default: bundled quant7)")
    p.add_argument("--p1", required=True)
    p.add_argument("--p2", required=True)
    p.add_argument("--inputs", type=int, default=100, help="number of random probe images")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="write the per-bit flip histogram as CSV")
    p.set_defaults(handler=cmd_eqc_diff)


def cmd_eqc_diff(args: argparse.Namespace) -> int:
    model = load_model(args.model)
    registry = registry_load(registry_arg(args.registry))
    probes = make_probes(args.seed, args.inputs, model.input_shape, set_size=1)
    report = eqc_diff(model, probes.inputs, registry.get(args.p1), registry.get(args.p2))
    print(report.summary())
    if args.out:
        report.write_csv(args.out)
    return 0
