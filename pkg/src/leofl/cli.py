"""Command-line entry point: ``leofl simulate|windows|baseline|partition``."""

from __future__ import annotations

import argparse
import logging
import sys
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from . import orbital
from .config import ConfigError, ScenarioConfig, bundled_scenarios, load_scenario
from .data import IdxFormatError, PartitionError, partition
from .learning import TrainingDivergedError, evaluate, train_centralized
from .simulator import build_simulation, load_datasets, write_event_log, write_metrics_csv

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_MISSING_FILE = 3
EXIT_DIVERGED = 4
EXIT_DATA = 5

log = logging.getLogger("leofl")


def _load(ref) -> ScenarioConfig:
    cfg = load_scenario(ref)
    cfg.check_files()
    return cfg


def _simulate_one(ref: str, seed: int | None, out: str | None, events: str | None) -> str:
    cfg = _load(ref)
    sim = build_simulation(cfg, seed)
    records = sim.run()
    out = out or cfg.simulation.output or f"{cfg.name.replace('/', '_')}.csv"
    write_metrics_csv(records, out)
    events = events or cfg.simulation.event_log
    if events:
        write_event_log(sim.event_log, events)
    last = records[-1]
    return f"{cfg.name}: {len(records) - 1} global updates, final accuracy {last.test_accuracy:.4f} -> {out}"


def cmd_simulate(args) -> int:
    if len(args.config) > 1 and (args.out or args.events):
        raise ConfigError("--out/--events only apply to a single scenario")
    jobs = [(ref, args.seed, args.out, args.events) for ref in args.config]
    if args.jobs > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            for line in pool.map(_simulate_one, *zip(*jobs)):
                print(line)
    else:
        for job in jobs:
            print(_simulate_one(*job))
    return EXIT_OK


def cmd_windows(args) -> int:
    cfg = load_scenario(args.config)
    gs = cfg.ground()
    horizon = args.horizon if args.horizon is not None else cfg.simulation.horizon_s
    out = open(args.out, "w") if args.out else sys.stdout
    try:
        out.write("sat_id,rise_s,set_s\n")
        for sat in cfg.satellites():
            for w in orbital.contact_windows(gs, sat, 0.0, horizon):
                out.write(f"{w.satellite_id},{w.rise_time:.3f},{w.set_time:.3f}\n")
    finally:
        if out is not sys.stdout:
            out.close()
    return EXIT_OK


def cmd_baseline(args) -> int:
    cfg = _load(args.config)
    train, test = load_datasets(cfg)
    model = train_centralized(train, cfg.train_config(), args.epochs, seed=args.seed)
    acc, loss = evaluate(model, test)
    print(f"epochs={args.epochs} accuracy={acc:.4f} loss={loss:.4f}")
    return EXIT_OK


def cmd_partition(args) -> int:
    cfg = _load(args.config)
    train, _ = load_datasets(cfg)
    sats = cfg.satellites()
    local = partition(train, [(s.id, s.shell_id) for s in sats], cfg.partition_spec())
    if args.summary:
        print("sat_id,shell_id,samples," + ",".join(f"class_{c}" for c in range(train.class_count)))
        for s in sats:
            counts = np.bincount(local[s.id].labels, minlength=train.class_count)
            print(f"{s.id},{s.shell_id},{len(local[s.id])}," + ",".join(str(int(c)) for c in counts))
    else:
        print(f"{len(local)} local datasets of {len(next(iter(local.values()))) if local else 0} samples")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="leofl", description="Ground-assisted federated learning in LEO constellations")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="run one or more scenarios and write metrics CSV")
    p.add_argument("config", nargs="+", help="scenario file or bundled scenario name")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", default=None, help="metrics CSV path (single scenario only)")
    p.add_argument("--events", default=None, help="write the protocol event log as JSON lines")
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("windows", help="list contact windows as CSV")
    p.add_argument("config")
    p.add_argument("--horizon", type=float, default=None, help="seconds (default: scenario horizon)")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_windows)

    p = sub.add_parser("baseline", help="centralized training reference")
    p.add_argument("config")
    p.add_argument("--epochs", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_baseline)

    p = sub.add_parser("partition", help="inspect the per-satellite data split")
    p.add_argument("config")
    p.add_argument("--summary", action="store_true")
    p.set_defaults(func=cmd_partition)

    sub.add_parser("list", help="list bundled scenarios").set_defaults(
        func=lambda args: print("\n".join(bundled_scenarios())) or EXIT_OK
    )
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: invalid scenario: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MISSING_FILE
    except TrainingDivergedError as exc:
        print(f"error: training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (IdxFormatError, PartitionError) as exc:
        print(f"error: bad data: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
