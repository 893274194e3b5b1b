#!/usr/bin/env python3
"""Run the full synthetic protocol and write every artifact to --out.

    python3 scripts/reproduce.py --out runs/seed0

Rerunning with the same flags reproduces every file except timing.txt
byte for byte.
"""

import argparse
import dataclasses
import logging
import sys
import time

from smartrul.experiment import ProtocolConfig, run_protocol
from smartrul.synth import FleetConfig
from smartrul.trainer import TrainConfig


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", required=True)
    ap.add_argument("--seed", type=int, default=0, help="fleet and training seed")
    ap.add_argument("--devices", type=int, default=300)
    ap.add_argument("--epochs", type=int, default=TrainConfig.max_epochs)
    ap.add_argument("-v", "--verbose", action="store_true")
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")

    config = ProtocolConfig(
        fleet=FleetConfig(n_devices=args.devices, seed=args.seed),
        train=dataclasses.replace(TrainConfig(), seed=args.seed, max_epochs=args.epochs),
    )
    t0 = time.perf_counter()
    result = run_protocol(config, args.out)
    sys.stdout.write(result.summary())
    print(f"\nwall time {time.perf_counter() - t0:.0f} s; files in {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
