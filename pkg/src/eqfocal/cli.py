"""Command-line entry point: ``eqfocal <command> [--config PATH] [--out DIR] ...``.

Every command writes into its own stage directory under the output
directory. The stage is assembled in a temporary sibling and renamed into
place only when complete, so a crash never leaves a half-written stage.
Exit codes: 0 ok, 2 invalid config or missing inputs, 3 numerical
failure, 4 gradient check failed.
"""
import argparse
import datetime
import json
import logging
import os
import shutil
import sys
import tempfile
from dataclasses import replace
from pathlib import Path

from . import __version__, gradcheck
from .checkpoint import atomic_write_text
from .config import ConfigError, ExperimentConfig, load_config
from .errors import EqFocalError, NumericalError
from .experiment import compare_csv, run_compare, runs_csv
from .losses import Variant
from .metrics import curves_csv, evaluate, loss_curves, margins, margins_csv
from .synth import SyntheticDataset, make_dataset, make_eval_split, stats_csv
from .trainer import ModelParams, train

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_NUMERICAL = 3
EXIT_CHECK_FAILED = 4

log = logging.getLogger("eqfocal")


class MissingInput(EqFocalError):
    pass


class Stage:
    """Temporary directory that atomically replaces ``out/name`` on commit."""

    def __init__(self, out, name):
        self.out = Path(out)
        self.final = self.out / name
        self.out.mkdir(parents=True, exist_ok=True)
        self.tmp = Path(tempfile.mkdtemp(dir=self.out, prefix=f".{name}-"))

    def path(self, name):
        p = self.tmp / name
        p.parent.mkdir(parents=True, exist_ok=True)
        return p

    def write(self, name, text):
        with open(self.path(name), "w", newline="\n") as fh:
            fh.write(text)

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        if exc_type is not None:
            shutil.rmtree(self.tmp, ignore_errors=True)
            return False
        trash = None
        if self.final.exists():
            trash = Path(tempfile.mkdtemp(dir=self.out, prefix=".trash-"))
            os.replace(self.final, trash / "old")
        os.replace(self.tmp, self.final)
        if trash is not None:
            shutil.rmtree(trash, ignore_errors=True)
        return False


def update_manifest(out, stage, config):
    path = Path(out) / "manifest.json"
    manifest = {}
    if path.exists():
        try:
            manifest = json.loads(path.read_text())
        except ValueError:
            manifest = {}
    manifest.update({"tool": "eqfocal", "version": __version__})
    manifest.setdefault("stages", {})[stage] = {
        "config_sha256": config.digest(),
        "effective_config": config.effective(),
        "completed_at": datetime.datetime.now(datetime.timezone.utc).isoformat(timespec="seconds"),
    }
    atomic_write_text(path, json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _require(path, hint):
    if not Path(path).exists():
        raise MissingInput(f"missing input {path}; run `eqfocal {hint}` first")
    return path


def cmd_gen(config, out, export_csv=False):
    spec = config.dataset
    train_set = make_dataset(spec)
    eval_set = make_eval_split(spec, cap=config.eval_cap)
    with Stage(out, "data") as st:
        train_set.save(st.path("train.npz"))
        eval_set.save(st.path("eval.npz"))
        st.write("stats.csv", stats_csv(train_set))
        if export_csv:
            st.write("train.csv", train_set.to_csv())
            st.write("eval.csv", eval_set.to_csv())
    print(f"wrote {len(train_set)} training and {len(eval_set)} eval samples to {Path(out) / 'data'}")


def cmd_train(config, out):
    data = SyntheticDataset.load(_require(Path(out) / "data" / "train.npz", "gen-data"))
    model, state, trainlog = train(data, config.train)
    with Stage(out, "train") as st:
        model.save(st.path("model.txt"))
        state.save(st.path("state.txt"))
        st.write("trainlog.csv", trainlog.to_csv())
        st.write("trajectory.csv", trainlog.trajectory_csv())
    print(f"trained {config.train.loss.variant.value} for {len(trainlog)} iterations; "
          f"final loss {trainlog.loss[-1]:.6f}" if len(trainlog) else "no iterations run")


def cmd_eval(config, out):
    eval_set = SyntheticDataset.load(_require(Path(out) / "data" / "eval.npz", "gen-data"))
    model = ModelParams.load(_require(Path(out) / "train" / "model.txt", "train"))
    report = evaluate(model, eval_set)
    with Stage(out, "eval") as st:
        st.write("percat.csv", report.percat_csv())
        st.write("groups.csv", report.groups_csv())
        st.write("margins.csv", margins_csv(margins(model, eval_set)))
    print(report.groups_csv(), end="")


def cmd_curves(config, out):
    c = config.curves
    hp = config.train.loss
    rows = []
    for weighted in (False, True):
        rows += loss_curves(c.gamma_v, c.grid(), weighted, hp)
    with Stage(out, "curves") as st:
        st.write("curves.csv", curves_csv(rows))
    print(f"wrote {len(rows)} curve points to {Path(out) / 'curves' / 'curves.csv'}")


def cmd_gradcheck(args, config):
    variants = [Variant.parse(v) for v in args.variant] if args.variant else list(Variant)
    overrides = {"h": args.h, "rtol": args.rtol, "atol": args.atol, "hp": config.train.loss}
    for name in ("x", "gamma_v", "quality", "w_t"):
        vals = getattr(args, name)
        if vals:
            key = {"x": "xs", "gamma_v": "gamma_vs", "quality": "qualities", "w_t": "w_ts"}[name]
            overrides[key] = tuple(vals)
    report = gradcheck.run_all(variants, **overrides)
    print(report.summary())
    if args.csv:
        atomic_write_text(args.csv, report.to_csv())
    return EXIT_OK if report.passed else EXIT_CHECK_FAILED


def cmd_compare(config, out, workers=None):
    results = run_compare(config, workers=workers)
    with Stage(out, "compare") as st:
        for seed, by_arm in results.items():
            for arm, rep in by_arm.items():
                st.write(f"seed-{seed}/{arm.label}/percat.csv", rep.percat_csv())
                st.write(f"seed-{seed}/{arm.label}/groups.csv", rep.groups_csv())
        st.write("runs.csv", runs_csv(results))
        table = compare_csv(results)
        st.write("compare.csv", table)
    print(table, end="")


def build_parser():
    p = argparse.ArgumentParser(prog="eqfocal", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"eqfocal {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", type=Path, help="experiment TOML file")
        sp.add_argument("--out", type=Path, help="output directory (overrides experiment.out)")
        sp.add_argument("--seed", type=int, help="override dataset and training seed")
        sp.add_argument("--variant", action="append", help="loss variant (FL, EFL, EQLV2_FOCAL, EQFL)")
        return sp

    g = common(sub.add_parser("gen-data", help="generate train/eval splits and imbalance stats"))
    g.add_argument("--export-csv", action="store_true", help="also write per-sample CSV exports")
    common(sub.add_parser("train", help="train one model on the generated data"))
    common(sub.add_parser("eval", help="evaluate the trained model on the eval split"))
    common(sub.add_parser("curves", help="tabulate single-category loss curves"))
    c = common(sub.add_parser("compare", help="train every variant on every seed and summarise"))
    c.add_argument("--workers", type=int, help="seeds to run in parallel")
    gc = common(sub.add_parser("grad-check", help="finite-difference check of the analytical gradients"))
    gc.add_argument("--x", type=float, nargs="+", help="logit grid")
    gc.add_argument("--gamma-v", type=float, nargs="+", help="gamma_v grid")
    gc.add_argument("--quality", type=float, nargs="+", help="EQFL quality grid")
    gc.add_argument("--w-t", type=float, nargs="+", help="EQLv2&Focal weight grid")
    gc.add_argument("--h", type=float, default=1e-4)
    gc.add_argument("--rtol", type=float, default=1e-5)
    gc.add_argument("--atol", type=float, default=1e-9)
    gc.add_argument("--csv", type=Path, help="write the full report as CSV")
    return p


def resolve_config(args):
    config = load_config(args.config) if args.config else ExperimentConfig()
    if args.seed is not None:
        config = config.with_seed(args.seed)
    if args.variant and args.command != "grad-check":
        config = config.with_variant(args.variant)
    if args.out is not None:
        config = replace(config, out=str(args.out))
    return config


def main(argv=None):
    logging.basicConfig(level=os.environ.get("EQFOCAL_LOG", "WARNING").upper(),
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        config = resolve_config(args)
        out = config.out
        if args.command == "grad-check":
            return cmd_gradcheck(args, config)
        if args.command == "gen-data":
            cmd_gen(config, out, args.export_csv)
        elif args.command == "train":
            cmd_train(config, out)
        elif args.command == "eval":
            cmd_eval(config, out)
        elif args.command == "curves":
            cmd_curves(config, out)
        elif args.command == "compare":
            cmd_compare(config, out, args.workers)
        update_manifest(out, args.command, config)
        return EXIT_OK
    except NumericalError as exc:
        print(f"eqfocal: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (ConfigError, MissingInput, EqFocalError, OSError) as exc:
        print(f"eqfocal: error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
