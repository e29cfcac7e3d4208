"""``hspi train``: train a reference model and write its weights."""

from __future__ import annotations

import argparse
import logging

from hspi.datasets import load_dataset
from hspi.engine.training import DEFAULT_LR, accuracy, parse_model_config, train_reference
from hspi.storage import save_model

logger = logging.getLogger(__name__)


def register(sub: argparse._SubParsersAction) -> None:
    p = sub.add_parser("train", help="train a reference model (float64 Adam, FP32 weights)")
    p.add_argument("--dataset", default="synthetic:n=600,size=16,seed=0",
                   help="synthetic:n=…,size=…,seed=… | blobs:n=… | cifar:<path>[,limit=N]")
    p.add_argument("--model-config", default="cnn:width=8", help="cnn[:width=N] | mlp[:hidden=N]")
    p.add_argument("--epochs", type=int, default=12)
    p.add_argument("--lr", type=float, default=DEFAULT_LR)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="weights file to write")
    p.set_defaults(handler=cmd_train)


def cmd_train(args: argparse.Namespace) -> int:
    dataset = load_dataset(args.dataset)
    model = train_reference(parse_model_config(args.model_config), dataset, args.epochs, args.lr, args.seed)
    save_model(model, args.out)
    print(f"{model}\ntrain accuracy: {accuracy(model, dataset):.4f}")
    return 0
