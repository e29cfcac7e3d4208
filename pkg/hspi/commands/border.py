"""``hspi bi-gen`` / ``hspi bi-probe``: border-input campaigns."""

from __future__ import annotations

import argparse
import logging

from pydantic import ValidationError

from hspi.border import LOSS_ALIASES, PgdConfig, generate_border_inputs, identify_platform
from hspi.commands.common import add_oracle_args, close_oracle, csv_list, open_oracle, registry_arg
from hspi.errors import BorderSearchExhausted, Indistinguishable, UsageError
from hspi.platform import registry_hash, registry_load
from hspi.storage import load_campaign, load_model, save_campaign

logger = logging.getLogger(__name__)


def register(sub: argparse._SubParsersAction) -> None:
    p = sub.add_parser("bi-gen", help="generate border inputs separating profiles (white box)")
    p.add_argument("--model", required=True, help="weights file; comma-separate several support models")
    p.add_argument("--registry", help="registry file (default: bundled quant7)")
    p.add_argument("--pair", help="two profile ids, e.g. fp16,int8")
    p.add_argument("--profiles", help="profile ids for one-vs-rest (comma-separated)")
    p.add_argument("--single", help="profile singled out by one-vs-rest (default: second listed)")
    p.add_argument("--loss", default="pair", help="pair | 1v1 | 1vr (or the full loss names)")
    p.add_argument("--target", type=int, help="target class for the targeted losses")
    p.add_argument("--iters", type=int, default=400)
    p.add_argument("--step", type=float, default=2 / 255, help="signed-gradient step in input units")
    p.add_argument("--batch-size", type=int, default=8, help="starting images optimized together")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="campaign file to write")
    p.set_defaults(handler=cmd_bi_gen)

    p = sub.add_parser("bi-probe", help="identify an oracle's platform from a campaign (labels only)")
    p.add_argument("--campaign", required=True)
    add_oracle_args(p)
    p.set_defaults(handler=cmd_bi_probe)


def cmd_bi_gen(args: argparse.Namespace) -> int:
    registry = registry_load(registry_arg(args.registry))
    ids = csv_list(args.pair or args.profiles or "")
    if len(ids) < 2:
        raise UsageError("too-few-profiles", "give --pair a,b or --profiles a,b,c")
    profiles = [registry.get(i) for i in ids]
    singled = ids.index(args.single) if args.single in ids else 1
    if args.single and args.single not in ids:
        raise UsageError("bad-singled-out", f"{args.single!r} is not among {ids}")
    try:
        cfg = PgdConfig(loss=LOSS_ALIASES.get(args.loss, args.loss), step_size=args.step, max_iters=args.iters,
                        target_class=args.target, singled_out=singled, batch_size=args.batch_size, seed=args.seed)
    except ValidationError as exc:
        raise UsageError("bad-pgd-config", exc.errors()[0]["msg"]) from exc
    models = [load_model(path) for path in csv_list(args.model)]

    campaign = generate_border_inputs(models, profiles, cfg)
    campaign.registry_hash = registry_hash(registry)
    save_campaign(campaign, args.out)
    print(campaign.summary())
    if campaign.status == "indistinguishable":
        raise Indistinguishable("indistinguishable", f"{', '.join(ids)} emit identical logits on every iterate")
    if campaign.status == "exhausted":
        raise BorderSearchExhausted("exhausted", f"no border input within {args.iters} iterations")
    return 0


def cmd_bi_probe(args: argparse.Namespace) -> int:
    campaign = load_campaign(args.campaign)
    oracle = open_oracle(args)
    try:
        ranking = identify_platform(campaign, oracle)
    finally:
        close_oracle(oracle)
    print(ranking.table())
    return 0
