"""``hspi serve``: run an oracle service from a config file."""

from __future__ import annotations

import argparse

from hspi.oracle.server import load_oracle_config, serve


def register(sub: argparse._SubParsersAction) -> None:
    p = sub.add_parser("serve", help="serve a model under one platform profile over TCP")
    p.add_argument("--config", required=True, help="oracle config file (see hspi/data/oracle.example.cfg)")
    p.add_argument("--host", help="override the configured host")
    p.add_argument("--port", type=int, help="override the configured port")
    p.set_defaults(handler=cmd_serve)


def cmd_serve(args: argparse.Namespace) -> int:
    config = load_oracle_config(args.config)
    overrides = {k: v for k, v in (("host", args.host), ("port", args.port)) if v is not None}
    if overrides:
        config = config.model_copy(update=overrides)
    serve(config)
    return 0
