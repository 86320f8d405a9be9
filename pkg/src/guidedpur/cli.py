"""Command-line entry point.

Exit codes: 0 success, 1 configuration error, 2 runtime or assertion error.
Every subcommand that takes ``--config`` reads one JSON document holding a
(possibly partial) run configuration; missing keys take their defaults.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import harness
from .attacks import check_ball
from .classifier import accuracy, load_dataset, load_model, save_dataset, save_model
from .diffusion import GMMDenoiser
from .errors import ConfigError
from .numerics import RandomSource, load_tensor, save_tensor
from .purifier import purify
from .schedule import linear_schedule, respace

log = logging.getLogger("guidedpur")


def load_config(path: str | None) -> harness.RunConfig:
    if path is None:
        return harness.RunConfig()
    try:
        raw = json.loads(Path(path).read_text())
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    try:
        return harness.RunConfig.from_dict(raw)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def _eval_split(path: str) -> Path:
    """Accept either a dataset directory or a gen-data output with an ``eval`` split."""
    p = Path(path)
    return p / "eval" if (p / "eval" / "dataset.json").exists() else p


def _train_split(path: str) -> Path:
    p = Path(path)
    return p / "train" if (p / "train" / "dataset.json").exists() else p


def cmd_gen_data(args) -> None:
    cfg = load_config(args.config)
    train_set, eval_set, gmm = harness.build_datasets(cfg)
    out = Path(args.out)
    save_dataset(train_set, gmm, out / "train")
    save_dataset(eval_set, gmm, out / "eval")
    print(f"wrote {len(train_set)} train and {len(eval_set)} eval images to {out}")


def cmd_train(args) -> None:
    cfg = load_config(args.config)
    train_set, _ = load_dataset(_train_split(args.data))
    model, history = harness.build_model(cfg, train_set)
    save_model(model, args.out)
    acc = accuracy(model, train_set.images, train_set.labels)
    print(f"train loss {history[0]:.4f} -> {history[-1]:.4f}, train accuracy {acc:.4f}")


def _bench_from_files(cfg, model_dir, data_dir) -> harness.Benchmark:
    data, gmm = load_dataset(_eval_split(data_dir))
    model = load_model(model_dir)
    return harness.Benchmark(data, data, gmm, model, cfg.schedule.build(), [])


def cmd_attack(args) -> None:
    cfg = load_config(args.config)
    bench = _bench_from_files(cfg, args.model, args.data)
    x, y = bench.eval.images, bench.eval.labels
    purifier = harness.make_purifier(cfg, bench) if cfg.defense else None
    x_adv = harness._stage("attack", harness.run_attack, cfg, bench, purifier, x, y)
    check_ball(x, x_adv, cfg.attack.gamma)
    bin_path = save_tensor(args.out, x_adv)
    manifest = {"kind": cfg.attack.kind, "gamma": cfg.attack.gamma, "steps": cfg.attack.steps,
                "seed": cfg.seed, "tensor": bin_path.name,
                "undefended_robust_accuracy": accuracy(bench.model, x_adv, y)}
    bin_path.with_name(bin_path.stem + "_attack.json").write_text(json.dumps(manifest, indent=2))
    print(f"attacked {len(x)} images; undefended robust accuracy "
          f"{manifest['undefended_robust_accuracy']:.4f}")


def cmd_purify(args) -> None:
    cfg = load_config(args.config)
    x = load_tensor(args.inp)
    gmm = load_dataset(_eval_split(args.data))[1] if args.data else harness.data_prior(cfg.data)
    out = harness._stage("purify", purify, x, cfg.purify, GMMDenoiser(gmm), cfg.schedule.build(),
                         RandomSource(cfg.seed).spawn(harness.PURIFY))
    save_tensor(args.out, out)
    print(f"purified tensor of shape {tuple(out.shape)}")


def cmd_eval(args) -> None:
    cfg = load_config(args.config)
    report = harness.evaluate(cfg)
    if args.out:
        harness.report_write(report, args.out)
    print(report.summary())


def _parse_value(text: str):
    if text.lower() == "none":
        return None
    try:
        return int(text)
    except ValueError:
        return float(text)


def cmd_sweep(args) -> None:
    cfg = load_config(args.config)
    if args.axis not in harness.SWEEP_AXES:
        raise ConfigError(f"unknown sweep axis {args.axis!r}; choose from {harness.SWEEP_AXES}")
    try:
        values = [_parse_value(v) for v in args.values.split(",")]
    except ValueError as exc:
        raise ConfigError(f"bad sweep values {args.values!r}") from exc
    results = harness.sweep(cfg, args.axis, values)
    rows = harness.sweep_table(args.axis, results)
    if args.out:
        harness.write_csv(rows, args.out)
    for row in rows:
        print(",".join(str(v) for v in row.values()))


def cmd_schedule_dump(args) -> None:
    s = linear_schedule(args.T, args.beta1, args.betaT, args.policy)
    if args.respace is not None:
        s = respace(s, args.respace).schedule
    text = s.to_csv()
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="guidedpur", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="generate train/eval toy datasets")
    g.add_argument("--config")
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="train the toy classifier")
    t.add_argument("--config")
    t.add_argument("--data", required=True)
    t.add_argument("--out", required=True)
    t.set_defaults(func=cmd_train)

    a = sub.add_parser("attack", help="attack a dataset with the configured attack")
    a.add_argument("--model", required=True)
    a.add_argument("--data", required=True)
    a.add_argument("--config")
    a.add_argument("--out", required=True)
    a.set_defaults(func=cmd_attack)

    u = sub.add_parser("purify", help="purify a tensor file")
    u.add_argument("--in", dest="inp", required=True)
    u.add_argument("--out", required=True)
    u.add_argument("--config")
    u.add_argument("--data", help="dataset whose mixture prior to use (default: from config)")
    u.set_defaults(func=cmd_purify)

    e = sub.add_parser("eval", help="end-to-end evaluation")
    e.add_argument("--config")
    e.add_argument("--out", help="JSON report path")
    e.set_defaults(func=cmd_eval)

    w = sub.add_parser("sweep", help="evaluate over one hyper-parameter axis")
    w.add_argument("--config")
    w.add_argument("--axis", required=True)
    w.add_argument("--values", required=True, help="comma-separated, e.g. 1000,500,250")
    w.add_argument("--out", help="CSV table path")
    w.set_defaults(func=cmd_sweep)

    d = sub.add_parser("schedule-dump", help="print a noise schedule as CSV")
    d.add_argument("--T", type=int, default=1000)
    d.add_argument("--beta1", type=float, default=1e-4)
    d.add_argument("--betaT", type=float, default=2e-2)
    d.add_argument("--respace", type=int)
    d.add_argument("--policy", default="small", choices=("small", "large"))
    d.add_argument("--out")
    d.set_defaults(func=cmd_schedule_dump)
    return p


def main(argv: list[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:  # argparse: usage errors are configuration errors
        return 0 if exc.code in (0, None) else 1
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - mapped to the runtime exit code
        log.debug("failure", exc_info=True)
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
