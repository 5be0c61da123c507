"""``texttpp`` command line: train, eval, simulate, stats, predict, gradcheck, perturb, fetch."""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import logging
import os
import sys
import tempfile
import urllib.error
import urllib.request
from pathlib import Path

import numpy as np

from . import __version__
from .config import HYPER_KEYS, RUN_KEYS, ConfigError, RunConfig, load_config, make_run_config, save_config
from .core import dataset_stats, load_dataset, save_dataset, split_dataset
from .estimator import CONVENTIONS, TPPEstimator, check_sequences
from .exceptions import DataError, NumericalError, SequenceTooLongError
from .gradcheck import TOLERANCE, run_suite
from .model import load_checkpoint, save_checkpoint
from .synth import HawkesParams, perturb_dataset, simulate_dataset

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERICAL = 0, 1, 2, 3
SPLITS = ("train", "val", "test", "all")
CHECKPOINT_NAME = "model.json"
LOG_NAME = "train_log.jsonl"


class UsageError(Exception):
    pass


class Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.replace(",", " ").split()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected numbers, got {text!r}") from None


def _dump_json(obj, path=None) -> None:
    text = json.dumps(obj, sort_keys=True, indent=2) + "\n"
    if path in (None, "-"):
        sys.stdout.write(text)
    else:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(text, encoding="utf-8")


def _select_split(ds, split: str, ratios, seed):
    if split == "all":
        return ds
    train, val, test = split_dataset(ds, ratios, seed)
    return {"train": train, "val": val, "test": test}[split]


# train / eval / predict


def cmd_train(args) -> int:
    cfg = load_config(args.config) if args.config else RunConfig()
    overrides = {k: v for k, v in vars(args).items() if k in HYPER_KEYS + RUN_KEYS and v is not None}
    cfg = make_run_config(overrides, cfg)
    if not cfg.data:
        raise UsageError("train: no dataset given (use --data or the 'data' config key)")
    ds = load_dataset(cfg.data)
    if cfg.dataset_name:
        ds = dataclasses.replace(ds, name=cfg.dataset_name)
    train, val, _ = split_dataset(ds, cfg.split_ratios, cfg.split_seed)

    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_config(cfg, out / "config.yaml")
    records = []
    est = TPPEstimator(**{k: getattr(cfg.params, k) for k in HYPER_KEYS})
    est.fit(train, X_val=val, callback=records.append)
    with open(out / LOG_NAME, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
    save_checkpoint(
        est.model_,
        out / CHECKPOINT_NAME,
        {"params": est.get_params(), "run": cfg.to_dict(), "best_epoch": est.best_epoch_},
    )
    print(f"trained {len(records)} epoch(s), best epoch {est.best_epoch_}; wrote {out / CHECKPOINT_NAME}")
    return EXIT_OK


def _load_for_inference(args):
    model, extra = load_checkpoint(args.checkpoint)
    est = TPPEstimator.from_model(model, extra.get("params", {}))
    run = extra.get("run", {})
    data = args.data or run.get("data")
    if not data:
        raise UsageError("no dataset given and the checkpoint does not record one")
    ds = load_dataset(data)
    ratios = tuple(run.get("split_ratios", (0.8, 0.1, 0.1)))
    seed = args.split_seed if args.split_seed is not None else run.get("split_seed", 0)
    return est, _select_split(ds, args.split, ratios, seed)


def cmd_eval(args) -> int:
    est, ds = _load_for_inference(args)
    metrics = est.evaluate(ds, num_integrals=args.num_integrals)
    conventions = dict(CONVENTIONS, split=args.split, mc_samples=args.num_integrals or est.num_integrals)
    _dump_json(metrics.to_dict(conventions), args.out)
    return EXIT_OK


def cmd_predict(args) -> int:
    est, ds = _load_for_inference(args)
    seqs = check_sequences(ds, est.n_types_)
    lines = []
    for seq, pred in zip(seqs, est.predict(seqs)):
        for i in range(len(seq)):
            k = int(pred["next_type"][i])
            lines.append(
                json.dumps(
                    {
                        "id": seq.id,
                        "prefix_end": i,
                        "next_type": k,
                        "next_type_text": est.type_texts_[k],
                        "next_time": float(pred["next_time"][i]),
                        "type_probs": [float(p) for p in pred["type_probs"][i]],
                    },
                    sort_keys=True,
                )
            )
    text = "\n".join(lines) + ("\n" if lines else "")
    if args.out in (None, "-"):
        sys.stdout.write(text)
    else:
        Path(args.out).write_text(text, encoding="utf-8")
    return EXIT_OK


# data commands


def cmd_simulate(args) -> int:
    if args.kind == "poisson":
        ds = simulate_dataset(
            "poisson",
            args.num_sequences,
            args.horizon,
            args.seed,
            rate=args.rate,
            num_types=args.types,
            naming=args.naming,
            name=args.name,
        )
    else:
        k = args.types
        mu = np.broadcast_to(np.asarray(args.mu, dtype=float), (k,)) if len(args.mu) in (1, k) else None
        adj = np.asarray(args.adjacency, dtype=float)
        if mu is None or adj.size not in (1, k * k):
            raise UsageError(f"--mu needs 1 or {k} values and --adjacency 1 or {k * k}")
        adj = np.broadcast_to(adj, (k * k,)).reshape(k, k) if adj.size == 1 else adj.reshape(k, k)
        try:
            params = HawkesParams(mu.copy(), adj.copy(), args.decay)
        except ValueError as exc:
            raise UsageError(str(exc)) from exc
        ds = simulate_dataset(
            "hawkes", args.num_sequences, args.horizon, args.seed, hawkes=params, naming=args.naming, name=args.name
        )
    save_dataset(ds, args.out)
    print(f"wrote {len(ds)} sequences to {args.out}")
    return EXIT_OK


def cmd_stats(args) -> int:
    ds = load_dataset(args.data)
    st = dataset_stats(ds)
    if args.json:
        _dump_json({"name": ds.name, **st.__dict__})
    else:
        print(f"dataset        {ds.name}")
        print(f"event types    {st.num_types}")
        print(f"events         {st.num_events}")
        print(f"sequences      {st.num_sequences}")
        print(f"avg length     {st.avg_seq_length:.2f}")
    return EXIT_OK


def cmd_perturb(args) -> int:
    if args.ratio < 0:
        raise UsageError("--ratio must be non-negative")
    ds = perturb_dataset(load_dataset(args.data), args.ratio, args.seed)
    save_dataset(ds, args.out)
    print(f"wrote {args.out} (ratio {args.ratio}, seed {args.seed})")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    results = run_suite(seed=args.seed)
    worst = 0.0
    for r in results:
        status = "ok" if r.passed(args.tol) else "FAIL"
        print(
            f"{r.intensity:6s} {r.temporal:13s} params={r.num_parameters:5d} "
            f"max_rel_err={r.max_error:.3e} ({r.worst_parameter}) {r.seconds:.1f}s {status}"
        )
        worst = max(worst, r.max_error)
    print(f"max relative error {worst:.3e} (tolerance {args.tol:g})")
    return EXIT_OK if worst < args.tol else EXIT_NUMERICAL


def _cache_dir() -> Path:
    base = os.environ.get("XDG_CACHE_HOME") or Path.home() / ".cache"
    return Path(base) / "texttpp"


def cmd_fetch(args) -> int:
    name = args.name or Path(urllib.request.urlparse(args.url).path).name or "dataset.json"
    target = Path(args.cache_dir or _cache_dir()) / name
    expected = args.sha256.lower()
    if target.exists() and hashlib.sha256(target.read_bytes()).hexdigest() == expected:
        print(f"cached {target}")
        return EXIT_OK
    try:
        with urllib.request.urlopen(args.url, timeout=args.timeout) as resp:
            payload = resp.read()
    except (urllib.error.URLError, OSError) as exc:
        raise DataError(f"download failed: {exc}") from exc
    digest = hashlib.sha256(payload).hexdigest()
    if digest != expected:
        raise DataError(f"content hash mismatch: expected {expected}, got {digest}")
    target.parent.mkdir(parents=True, exist_ok=True)
    with tempfile.NamedTemporaryFile(dir=target.parent, suffix=".part", delete=False) as tmp:
        tmp.write(payload)
    try:
        if not args.no_validate:
            load_dataset(tmp.name)
        os.replace(tmp.name, target)
    finally:
        if os.path.exists(tmp.name):
            os.unlink(tmp.name)
    print(f"fetched {target}")
    return EXIT_OK


# parser


def _add_config_flags(p) -> None:
    for key in RUN_KEYS + HYPER_KEYS:
        flag = "--" + key.replace("_", "-")
        if key == "prompt":
            p.add_argument(flag, dest=key, action=argparse.BooleanOptionalAction, default=None)
        elif key == "data":
            p.add_argument(flag, dest=key, default=None, help="dataset JSON")
        else:
            p.add_argument(flag, dest=key, default=None, metavar=key.upper())


def build_parser() -> Parser:
    parser = Parser(prog="texttpp", description="Transformer temporal point processes over textual event types.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=Parser)

    p = sub.add_parser("train", help="fit a model and write checkpoint, config and epoch log")
    p.add_argument("--config", help="YAML key-value config; flags override it")
    _add_config_flags(p)
    p.set_defaults(func=cmd_train)

    for name, func, help_ in (
        ("eval", cmd_eval, "metrics JSON on a split"),
        ("predict", cmd_predict, "next type and time for every prefix, as JSON lines"),
    ):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--checkpoint", required=True)
        p.add_argument("--data", help="dataset JSON (defaults to the one used for training)")
        p.add_argument("--split", choices=SPLITS, default="test" if name == "eval" else "all")
        p.add_argument("--split-seed", type=int)
        p.add_argument("--out", help="output file (default stdout)")
        if name == "eval":
            p.add_argument("--num-integrals", type=int, help="Monte Carlo samples per interval")
        p.set_defaults(func=func)

    p = sub.add_parser("simulate", help="write a synthetic Poisson or Hawkes dataset")
    p.add_argument("kind", choices=("poisson", "hawkes"))
    p.add_argument("--out", required=True)
    p.add_argument("--types", type=int, default=1)
    p.add_argument("--horizon", type=float, default=100.0)
    p.add_argument("--num-sequences", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--rate", type=float, default=1.0, help="per-type Poisson rate")
    p.add_argument("--mu", type=_floats, default=[0.2], help="Hawkes base rates (one or K values)")
    p.add_argument("--adjacency", type=_floats, default=[0.3], help="Hawkes excitation (one or K*K values)")
    p.add_argument("--decay", type=float, default=1.0, help="Hawkes kernel decay")
    p.add_argument("--naming", choices=("textual", "ordinal"), default="textual")
    p.add_argument("--name", default=None)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("stats", help="dataset summary: types, events, sequences, average length")
    p.add_argument("data")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("gradcheck", help="finite-difference check of every gradient")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tol", type=float, default=TOLERANCE)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("perturb", help="jitter event times by a fraction of the preceding gap")
    p.add_argument("data")
    p.add_argument("--ratio", type=float, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_perturb)

    p = sub.add_parser("fetch", help="download a dataset JSON into the cache, checking its sha256")
    p.add_argument("url")
    p.add_argument("--sha256", required=True)
    p.add_argument("--name")
    p.add_argument("--cache-dir")
    p.add_argument("--timeout", type=float, default=60.0)
    p.add_argument("--no-validate", action="store_true")
    p.set_defaults(func=cmd_fetch)
    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (UsageError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (DataError, SequenceTooLongError, FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
