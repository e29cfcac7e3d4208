"""Command-line entry point.

Exit codes:
    0  success
    1  border search ran out of iterations
    2  usage / configuration error
    3  profiles indistinguishable on the inputs tried
    4  protocol error talking to an oracle
    5  internal error
  130  interrupted
"""

from __future__ import annotations

import argparse
import logging
import sys
from typing import Sequence

from hspi import __version__
from hspi.commands import ROUTERS
from hspi.config import settings
from hspi.errors import HspiError


def _setup_logging(level: str | None = None) -> None:
    fmt = logging.Formatter(
        "%(asctime)s  %(levelname)-8s  %(name)s  %(message)s",
        datefmt="%Y-%m-%d %H:%M:%S",
    )
    handler = logging.StreamHandler(sys.stdout)
    handler.setFormatter(fmt)
    logging.root.handlers = [handler]
    logging.root.setLevel((level or settings.LOG_LEVEL).upper())


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hspi",
        description="Identify the hardware/software platform behind an inference endpoint.",
    )
    parser.add_argument("--version", action="version", version=f"hspi {__version__}")
    parser.add_argument("--log-level", default=None, help="DEBUG, INFO, WARNING … (default: $LOG_LEVEL or INFO)")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")
    for router in ROUTERS:
        router.register(sub)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    _setup_logging(args.log_level)
    logger = logging.getLogger("hspi")
    try:
        return int(args.handler(args) or 0)
    except HspiError as exc:
        stage = getattr(exc, "stage", None)
        logger.error("%s%s", f"[{stage}] " if stage else "", exc)
        return exc.exit_code
    except KeyboardInterrupt:
        logger.info("Interrupted")
        return 130
    except Exception as exc:
        logger.critical("Unhandled error: %s", exc, exc_info=True)
        return 5


if __name__ == "__main__":
    sys.exit(main())
