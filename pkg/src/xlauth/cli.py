"""xlauth command line: datasets, training, protocol demos, attacks, costs.

Subcommands: dataset, train, eval, demo, attack, overhead, bench.

Global flags may appear before or after the subcommand:
  --config PATH   JSON with any of n_subcarriers, cp_len, sample_rate_hz,
                  n_symbols_per_frame, n_paths, snr_db, seed
  --seed N        master seed (default 0)
  --out PATH      primary output path (per-command default otherwise)
  --force         allow overwriting existing outputs

Every key can also come from the environment with the XLAUTH_ prefix
(e.g. XLAUTH_SEED=7, XLAUTH_SNR_DB=10). Precedence: flag > environment >
config file > default. Each run logs its fully resolved configuration and
seed as one JSON line on stderr.

Exit codes: 0 success, 2 configuration error, 3 input error, 4 internal
assertion failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
from pathlib import Path

from . import classify, features, netsim, overhead, report
from .errors import (
    InputShapeError,
    RosterError,
    ScenarioError,
    StratificationError,
    ValidationError,
    XlauthError,
)
from .ofdm import ChannelConfig, OfdmConfig

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_INPUT = 3
EXIT_FAILURE = 4

ENV_PREFIX = "XLAUTH_"

_OFDM_KEYS = ("n_subcarriers", "cp_len", "sample_rate_hz", "n_symbols_per_frame")
_CHAN_KEYS = ("n_paths", "snr_db")
_INT_KEYS = {"n_subcarriers", "cp_len", "n_symbols_per_frame", "n_paths", "seed"}


class ConfigError(XlauthError):
    pass


@dataclasses.dataclass
class RunConfig:
    seed: int
    out: str | None
    force: bool
    ofdm: OfdmConfig
    channel: ChannelConfig

    def log(self, command: str) -> None:
        doc = {
            "command": command,
            "seed": self.seed,
            "out": self.out,
            "force": self.force,
            "ofdm": dataclasses.asdict(self.ofdm),
            "channel": dataclasses.asdict(self.channel),
        }
        print(json.dumps(doc, sort_keys=True), file=sys.stderr)


def _env(key: str) -> str | None:
    return os.environ.get(ENV_PREFIX + key.upper())


def _coerce(key: str, value):
    return int(value) if key in _INT_KEYS else float(value)


def resolve_run_config(args: argparse.Namespace) -> RunConfig:
    config_path = getattr(args, "config", None) or _env("config")
    raw: dict = {}
    if config_path:
        try:
            with open(config_path, encoding="utf-8") as fh:
                raw = json.load(fh)
        except FileNotFoundError as exc:
            raise ConfigError(f"config file not found: {config_path}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file is not valid JSON: {exc}") from exc
    known = set(_OFDM_KEYS) | set(_CHAN_KEYS) | {"seed"}
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    merged = dict(raw)
    for key in known:
        env_val = _env(key)
        if env_val is not None:
            merged[key] = _coerce(key, env_val)
    seed = getattr(args, "seed", None)
    if seed is None:
        seed = int(merged.get("seed", 0))
    out = getattr(args, "out", None) or _env("out")
    force = bool(getattr(args, "force", False) or _env("force"))
    try:
        ofdm = OfdmConfig(**{k: merged[k] for k in _OFDM_KEYS if k in merged})
        channel = ChannelConfig(**{k: merged[k] for k in _CHAN_KEYS if k in merged})
    except ValidationError as exc:
        raise ConfigError(str(exc)) from exc
    return RunConfig(seed=seed, out=out, force=force, ofdm=ofdm, channel=channel)


def _ensure_writable(path: str, force: bool) -> None:
    if os.path.exists(path) and not force:
        raise FileExistsError(f"{path} exists; pass --force to overwrite")


def _stem(path: str) -> str:
    p = Path(path)
    return str(p.parent / p.stem)


# --------------------------------------------------------------------------
# Subcommands

def cmd_dataset(args: argparse.Namespace, rc: RunConfig) -> int:
    scenario = features.Scenario(args.scenario)
    roster = features.default_roster(args.devices, scenario, rc.ofdm)
    dataset = features.gen_dataset(
        roster, scenario, args.frames, rc.ofdm, rc.channel, rc.seed
    )
    out = rc.out or "dataset.csv"
    _ensure_writable(out, rc.force)
    features.save_dataset_csv(dataset, out)
    roster_path = _stem(out) + "_roster.json"
    features.save_roster_json(roster, roster_path, rc.ofdm.n_subcarriers)
    written = [out, roster_path]
    if not args.no_figures:
        written.append(report.save_feature_histograms(dataset, _stem(out) + "_hist.png"))
    print(
        f"wrote {len(dataset.rows)} rows for {args.devices} devices "
        f"({scenario.value}) -> {', '.join(written)}"
    )
    return EXIT_OK


def cmd_train(args: argparse.Namespace, rc: RunConfig) -> int:
    dataset = features.load_dataset_csv(args.dataset)
    train_rows, test_rows = classify.split(dataset, args.train_fraction, rc.seed)
    model = classify.train(train_rows, algo=args.algo, k=args.k, seed=rc.seed)
    result = classify.evaluate(model, test_rows, split_seed=rc.seed)
    out = rc.out or "model.json"
    _ensure_writable(out, rc.force)
    classify.save_model(model, out)
    stem = _stem(out)
    classify.save_report(result, stem + "_eval.json", stem + "_confusion.csv")
    written = [out, stem + "_eval.json", stem + "_confusion.csv"]
    if not args.no_figures:
        written.append(report.save_confusion_figure(result, stem + "_confusion.png"))
    print(
        f"{args.algo} on {len(train_rows)} train / {len(test_rows)} test rows: "
        f"accuracy {result.accuracy:.4f}, recall {result.recall_mean:.4f}, "
        f"f1 {result.f1_mean:.4f} -> {', '.join(written)}"
    )
    return EXIT_OK


def cmd_eval(args: argparse.Namespace, rc: RunConfig) -> int:
    model = classify.load_model(args.model)
    dataset = features.load_dataset_csv(args.dataset)
    if args.full:
        rows = dataset.rows
    else:
        _, rows = classify.split(dataset, args.train_fraction, rc.seed)
    result = classify.evaluate(model, rows, split_seed=rc.seed)
    out = rc.out or "report.json"
    _ensure_writable(out, rc.force)
    stem = _stem(out)
    classify.save_report(result, out, stem + "_confusion.csv")
    written = [out, stem + "_confusion.csv"]
    if not args.no_figures:
        written.append(report.save_confusion_figure(result, stem + "_confusion.png"))
    print(
        f"evaluated {len(rows)} rows: accuracy {result.accuracy:.4f}, "
        f"recall {result.recall_mean:.4f}, f1 {result.f1_mean:.4f} "
        f"-> {', '.join(written)}"
    )
    return EXIT_OK


def _build_scenario(args: argparse.Namespace, rc: RunConfig) -> netsim.Scenario:
    if getattr(args, "scenario_file", None):
        scenario = netsim.load_scenario(args.scenario_file)
        if getattr(args, "seed", None) is not None:
            scenario = dataclasses.replace(scenario, seed=rc.seed)
        return scenario
    roster = features.default_roster(args.devices, features.Scenario.FIXED_SKEW, rc.ofdm)
    return netsim.Scenario(
        roster=roster,
        messages_per_device=args.messages,
        registration_frames=args.registration_frames,
        seed=rc.seed,
        ofdm=rc.ofdm,
        channel=rc.channel,
    )


def cmd_demo(args: argparse.Namespace, rc: RunConfig) -> int:
    scenario = _build_scenario(args, rc)
    trace = netsim.run(scenario)
    out = rc.out or "trace.jsonl"
    _ensure_writable(out, rc.force)
    with open(out, "w", encoding="utf-8") as fh:
        fh.write(trace.to_jsonl())
    summary_path = _stem(out) + "_summary.json"
    with open(summary_path, "w", encoding="utf-8") as fh:
        json.dump({"metrics": trace.metrics, "meta": trace.meta}, fh, sort_keys=True, indent=2)
        fh.write("\n")
    accepted = sum(1 for e in trace.events if e.verdict == "accept")
    rejected = [e for e in trace.events if e.verdict == "reject"]
    print(f"{len(trace.events)} events: {accepted} accepted, {len(rejected)} rejected")
    for e in rejected:
        print(f"  t={e.time} {e.actor} {e.kind}: rejected ({e.reason})")
    m = trace.metrics
    print(
        f"honest false-reject rate {m['false_reject_rate']:.4f} "
        f"over {m['honest_messages']} messages; "
        f"classifier accuracy {trace.meta['classifier_accuracy']:.4f}"
    )
    if m["detection_rate"] is not None:
        print(f"adversary detection rate {m['detection_rate']:.4f}")
    print(f"trace -> {out}, summary -> {summary_path}")
    return EXIT_OK


def cmd_attack(args: argparse.Namespace, rc: RunConfig) -> int:
    if getattr(args, "scenario_file", None):
        scenario = _build_scenario(args, rc)
        if scenario.adversary is None:
            raise ScenarioError("scenario file has no adversary")
    else:
        adversary = netsim.AdversaryConfig(
            kind=args.kind,
            n_injections=args.trials,
            modify_field=args.modify_field,
            replay_within_session=args.within_session,
        )
        base = _build_scenario(args, rc)
        scenario = dataclasses.replace(base, adversary=adversary)
    record = netsim.measure_detection(scenario, n_trials=args.trials)
    out = rc.out or "attack_metrics.json"
    _ensure_writable(out, rc.force)
    with open(out, "w", encoding="utf-8") as fh:
        json.dump(record, fh, sort_keys=True, indent=2)
        fh.write("\n")
    det = record["detection_rate"]
    ci = record["detection_ci95"]
    print(
        f"{record['adversary_kind']}: detection rate {det:.4f} "
        f"(95% CI [{ci[0]:.4f}, {ci[1]:.4f}]) over {record['adversary_messages']} "
        f"injected messages -> {out}"
    )
    print(
        f"honest false-reject {record['false_reject_rate']:.4f}, "
        f"classifier accuracy {record['classifier_accuracy']:.4f}"
    )
    return EXIT_OK


def cmd_overhead(args: argparse.Namespace, rc: RunConfig) -> int:
    rows = overhead.comparison_table(list(range(1, args.n_max + 1)), args.d)
    out = rc.out or "overhead.csv"
    _ensure_writable(out, rc.force)
    overhead.save_comparison_csv(rows, out)
    written = [out]
    if not args.no_figures:
        written += report.save_overhead_figures(rows, _stem(out))
    t1 = overhead.compute_time_ms("ours", 1, 1)
    t1000 = overhead.compute_time_ms("ours", 1000, args.d)
    cross = overhead.bytes_crossover("xiang", args.d)
    print(
        f"{len(rows)} rows -> {', '.join(written)}\n"
        f"initial handshake {t1:.3f} ms; n=1000 total {t1000:.3f} ms; "
        f"byte cost drops below the cheapest per-message baseline at n={cross}"
    )
    return EXIT_OK


def cmd_bench(args: argparse.Namespace, rc: RunConfig) -> int:
    record = overhead.bench_primitives(args.iterations, seed=rc.seed)
    text = json.dumps(record, sort_keys=True, indent=2) + "\n"
    if rc.out:
        _ensure_writable(rc.out, rc.force)
        with open(rc.out, "w", encoding="utf-8") as fh:
            fh.write(text)
        print(f"bench ({args.iterations} iterations) -> {rc.out}")
    else:
        sys.stdout.write(text)
    return EXIT_OK


# --------------------------------------------------------------------------
# Parser

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=argparse.SUPPRESS, help="JSON config file")
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="master seed")
    common.add_argument("--out", default=argparse.SUPPRESS, help="primary output path")
    common.add_argument(
        "--force", action="store_true", default=argparse.SUPPRESS,
        help="overwrite existing outputs",
    )

    parser = argparse.ArgumentParser(
        prog="xlauth",
        parents=[common],
        description=__doc__,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("dataset", parents=[common], help="generate a labeled feature dataset")
    p.add_argument("--scenario", choices=[s.value for s in features.Scenario],
                   default=features.Scenario.FIXED_SKEW.value)
    p.add_argument("--devices", type=int, default=10)
    p.add_argument("--frames", type=int, default=200, help="frames per device")
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(func=cmd_dataset)

    p = sub.add_parser("train", parents=[common], help="split, train, and evaluate a model")
    p.add_argument("--dataset", required=True)
    p.add_argument("--algo", choices=[classify.KNN, classify.LOGISTIC_REGRESSION],
                   default=classify.KNN)
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--train-fraction", type=float, default=0.8)
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", parents=[common], help="evaluate a saved model on a dataset")
    p.add_argument("--dataset", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--train-fraction", type=float, default=0.8)
    p.add_argument("--full", action="store_true",
                   help="evaluate on all rows instead of the held-out split")
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("demo", parents=[common], help="run a full protocol session")
    p.add_argument("--scenario-file", help="scenario JSON (overrides the flags below)")
    p.add_argument("--devices", type=int, default=3)
    p.add_argument("--messages", type=int, default=20, help="messages per device")
    p.add_argument("--registration-frames", type=int, default=200)
    p.set_defaults(func=cmd_demo)

    p = sub.add_parser("attack", parents=[common], help="measure adversary detection")
    p.add_argument("--scenario-file", help="scenario JSON with an adversary")
    p.add_argument("--kind", choices=netsim.ADVERSARY_KINDS, default=netsim.IMPERSONATE)
    p.add_argument("--trials", type=int, default=1000)
    p.add_argument("--devices", type=int, default=10)
    p.add_argument("--messages", type=int, default=10, help="honest messages per device")
    p.add_argument("--registration-frames", type=int, default=200)
    p.add_argument("--modify-field", choices=("cert", "cid", "sig", "pid", "payload"),
                   default="cid")
    p.add_argument("--within-session", action="store_true",
                   help="replay the captured M4 before the PID refresh")
    p.set_defaults(func=cmd_attack)

    p = sub.add_parser("overhead", parents=[common], help="cost comparison table and figures")
    p.add_argument("--n-max", type=int, default=1000)
    p.add_argument("--d", type=int, default=10, help="messages per session")
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(func=cmd_overhead)

    p = sub.add_parser("bench", parents=[common], help="time the local crypto primitives")
    p.add_argument("--iterations", type=int, default=200)
    p.set_defaults(func=cmd_bench)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        rc = resolve_run_config(args)
        rc.log(args.command)
        return args.func(args, rc)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ScenarioError as exc:
        print(f"scenario error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (FileNotFoundError, FileExistsError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (InputShapeError, RosterError, StratificationError, ValidationError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (AssertionError, XlauthError) as exc:
        print(f"failure: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
