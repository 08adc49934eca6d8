"""Multi-seed, multi-variant comparisons on synthetic long-tailed data."""
import csv
import io
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from .losses import Variant
from .metrics import evaluate
from .synth import GROUPS, make_dataset, make_eval_split
from .trainer import train

# variants whose kernel depends on the scale factor s
S_VARIANTS = (Variant.EFL, Variant.EQFL)


@dataclass(frozen=True)
class Arm:
    variant: Variant
    s: float = None

    @property
    def label(self):
        return self.variant.value if self.s is None else f"{self.variant.value}-s{self.s:g}"


def arms_for(config):
    arms = []
    for v in config.variants:
        if v in S_VARIANTS:
            arms += [Arm(v, float(s)) for s in sorted(config.s_values)]
        else:
            arms.append(Arm(v))
    return arms


def arm_train_config(config, arm, seed):
    loss = config.train.loss.replace(variant=arm.variant)
    if arm.s is not None:
        loss = loss.replace(s=arm.s)
    return replace(config.train, loss=loss, seed=seed)


def run_seed(config, seed, arms=None):
    """Train and evaluate every arm on one seed; returns {arm: MetricsReport}."""
    arms = arms_for(config) if arms is None else arms
    spec = config.dataset.replace(seed=seed)
    train_set = make_dataset(spec)
    eval_set = make_eval_split(spec, cap=config.eval_cap)
    out = {}
    for arm in arms:
        model, _, _ = train(train_set, arm_train_config(config, arm, seed))
        out[arm] = evaluate(model, eval_set)
    return out


def _run_seed_job(args):
    config, seed = args
    return seed, run_seed(config, seed)


def run_compare(config, workers=None):
    """{seed: {arm: report}} over all configured seeds.

    Seeds run in separate processes when ``workers > 1``; results are
    assembled in seed order, so outputs do not depend on the worker count.
    """
    workers = config.workers if workers is None else workers
    jobs = [(config, s) for s in config.seeds]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = dict(pool.map(_run_seed_job, jobs))
    else:
        results = dict(map(_run_seed_job, jobs))
    return {s: results[s] for s in config.seeds}


def _num(v):
    return "" if v is None or np.isnan(v) else repr(float(v))


def _s_cell(arm):
    return "" if arm.s is None else repr(arm.s)


def runs_csv(results):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["variant", "s", "seed", "group", "ap_cls", "margin"])
    for seed, by_arm in results.items():
        for arm, rep in by_arm.items():
            for g in GROUPS + ("all",):
                ap = rep.macro_ap if g == "all" else rep.group_ap[g]
                w.writerow([arm.variant.value, _s_cell(arm), seed, g, _num(ap), _num(rep.group_margin[g])])
    return buf.getvalue()


def summarize(results):
    """{(arm, group): dict(median, min, max, margin)} across seeds."""
    seeds = list(results)
    arms = list(results[seeds[0]])
    table = {}
    for arm in arms:
        for g in GROUPS + ("all",):
            aps = np.array([results[s][arm].macro_ap if g == "all" else results[s][arm].group_ap[g]
                            for s in seeds])
            margins = np.array([results[s][arm].group_margin[g] for s in seeds])
            table[(arm, g)] = {"median": float(np.median(aps)), "min": float(np.min(aps)),
                               "max": float(np.max(aps)), "margin": float(np.median(margins))}
    return table


def compare_csv(results):
    table = summarize(results)
    n = len(results)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["variant", "s", "group", "n_seeds", "median_ap_cls", "min_ap_cls", "max_ap_cls",
                "median_margin"])
    for (arm, g), row in table.items():
        w.writerow([arm.variant.value, _s_cell(arm), g, n, _num(row["median"]), _num(row["min"]),
                    _num(row["max"]), _num(row["margin"])])
    return buf.getvalue()
