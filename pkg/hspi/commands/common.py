"""Helpers shared by the subcommand routers."""

from __future__ import annotations

import argparse
from pathlib import Path

from hspi.errors import UsageError


def add_oracle_args(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("oracle (remote --oracle, or in-process --model/--registry/--profile)")
    g.add_argument("--oracle", metavar="HOST:PORT", help="address of a running `hspi serve`")
    g.add_argument("--model", help="weights file for an in-process oracle")
    g.add_argument("--registry", help="registry file for an in-process oracle (default: bundled quant7)")
    g.add_argument("--profile", help="profile id for an in-process oracle")
    g.add_argument("--response-mode", choices=["logits", "label-only"], default="logits")
    g.add_argument("--defense", default="none", help="none | logit-bitflip:p=P[,bits=N] | input-noise:sigma=S")


def open_oracle(args: argparse.Namespace):
    from hspi.oracle.client import connect
    from hspi.oracle.defense import parse_defense
    from hspi.oracle.local import LocalOracle
    from hspi.platform import default_registry_path, registry_load
    from hspi.storage import load_model

    if args.oracle:
        return connect(args.oracle)
    if not (args.model and args.profile):
        raise UsageError("no-oracle", "give --oracle HOST:PORT or --model and --profile")
    profile = registry_load(args.registry or default_registry_path()).get(args.profile)
    return LocalOracle(load_model(args.model), profile, args.response_mode, parse_defense(args.defense))


def close_oracle(oracle) -> None:
    close = getattr(oracle, "close", None)
    if close is not None:
        close()


def csv_list(text: str) -> list[str]:
    return [t.strip() for t in text.split(",") if t.strip()]


def registry_arg(value: str | None) -> Path:
    from hspi.platform import default_registry_path

    return Path(value) if value else default_registry_path()
