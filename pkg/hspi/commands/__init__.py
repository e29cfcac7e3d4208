"""Subcommand routers.  Each module exposes ``register(subparsers)``."""

from hspi.commands import border, eqc, ld, model, report, run, serve

# Order is the order of ``hspi --help``.
ROUTERS = [model, serve, eqc, border, ld, report, run]
