"""Synthetic long-tailed one-vs-rest classification data.

Each category gets a Zipfian number of positives drawn from an isotropic
Gaussian cluster; a background cluster supplies the flood of negatives
seen by every per-category classifier.
"""
import csv
import io
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import ContractError, ParameterError

GROUPS = ("rare", "common", "frequent")
BACKGROUND = -1


@dataclass(frozen=True)
class DatasetSpec:
    C: int = 50
    zipf_exponent: float = 1.2
    n_max: int = 500
    bg_ratio: float = 20.0
    feature_dim: int = 64
    class_separation: float = 4.0
    noise_std: float = 1.0
    seed: int = 0
    # inclusive upper bounds on positive counts for the rare / common groups
    group_bounds: tuple = (10, 100)

    def __post_init__(self):
        object.__setattr__(self, "group_bounds", tuple(int(b) for b in self.group_bounds))
        if int(self.C) != self.C or self.C < 1:
            raise ParameterError("C must be a positive integer")
        if int(self.n_max) != self.n_max or self.n_max < 1:
            raise ParameterError("n_max must be a positive integer")
        if not self.zipf_exponent >= 0:
            raise ParameterError("zipf_exponent must be >= 0")
        if not self.bg_ratio >= 0:
            raise ParameterError("bg_ratio must be >= 0")
        if int(self.feature_dim) != self.feature_dim or self.feature_dim < 1:
            raise ParameterError("feature_dim must be a positive integer")
        if not self.class_separation > 0 or not self.noise_std > 0:
            raise ParameterError("class_separation and noise_std must be > 0")
        if len(self.group_bounds) != 2 or not 0 < self.group_bounds[0] < self.group_bounds[1]:
            raise ParameterError("group_bounds must be two increasing positive counts")

    def replace(self, **changes):
        d = asdict(self)
        d.update(changes)
        return DatasetSpec(**d)

    def to_dict(self):
        d = asdict(self)
        d["group_bounds"] = list(self.group_bounds)
        return d


@dataclass
class SyntheticDataset:
    spec: DatasetSpec
    features: np.ndarray
    labels: np.ndarray
    counts: np.ndarray
    groups: list = field(default_factory=list)

    @property
    def num_categories(self):
        return len(self.counts)

    def __len__(self):
        return len(self.labels)

    def targets(self, index=None):
        """N x C binary one-vs-rest target matrix."""
        labels = self.labels if index is None else self.labels[index]
        return (labels[:, None] == np.arange(self.num_categories)[None, :]).astype(np.int8)

    def save(self, path):
        header = json.dumps({"format": "eqfocal-dataset", "version": 1, "spec": self.spec.to_dict(),
                             "groups": list(self.groups)}, sort_keys=True)
        with open(path, "wb") as fh:
            np.savez(fh, header=np.array(header), features=self.features,
                     labels=self.labels, counts=self.counts)

    @classmethod
    def load(cls, path):
        with np.load(path, allow_pickle=False) as z:
            header = json.loads(str(z["header"]))
            if header.get("format") != "eqfocal-dataset" or header.get("version") != 1:
                raise ContractError(f"{path}: not a version-1 eqfocal dataset")
            spec = DatasetSpec(**header["spec"])
            counts = z["counts"].astype(np.int64)
            groups = header.get("groups") or frequency_groups(counts, spec.group_bounds)
            return cls(spec, z["features"].copy(), z["labels"].astype(np.int64), counts, list(groups))

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["label"] + [f"f{k}" for k in range(self.features.shape[1])])
        for lab, row in zip(self.labels, self.features):
            w.writerow([int(lab)] + [repr(float(v)) for v in row])
        return buf.getvalue()


def zipf_counts(C, zipf_exponent, n_max):
    if C < 1 or n_max < 1 or zipf_exponent < 0:
        raise ContractError("zipf_counts needs C >= 1, n_max >= 1, zipf_exponent >= 0")
    raw = n_max * np.arange(1, C + 1, dtype=np.float64) ** (-float(zipf_exponent))
    # round half up so the result does not depend on banker's rounding
    return np.maximum(1, np.floor(raw + 0.5)).astype(np.int64)


def frequency_groups(counts, bounds=(10, 100)):
    rare_max, common_max = bounds
    return ["rare" if c <= rare_max else "common" if c <= common_max else "frequent" for c in counts]


def num_negatives(counts, bg_ratio):
    return int(np.floor(bg_ratio * int(np.sum(counts)) + 0.5))


def class_means(spec, rng):
    """C + 1 means (last row is background) with pairwise distance class_separation."""
    k = spec.C + 1
    radius = spec.class_separation / np.sqrt(2.0)
    if spec.feature_dim >= k:
        means = np.zeros((k, spec.feature_dim))
        means[np.arange(k), np.arange(k)] = radius
        return means
    # not enough dimensions for a regular simplex: random near-orthogonal directions
    d = rng.standard_normal((k, spec.feature_dim))
    return radius * d / np.linalg.norm(d, axis=1, keepdims=True)


def make_dataset(spec, counts=None, sample_seed=None):
    """Generate the dataset described by ``spec``.

    ``counts`` overrides the per-category positive counts (the negatives
    still follow ``bg_ratio``). Cluster means always come from
    ``spec.seed``; samples come from ``sample_seed`` when given, so a
    held-out split shares the geometry of its training split. Every
    cluster is drawn from its own child seed, so the output does not depend
    on generation order.
    """
    if counts is None:
        counts = zipf_counts(spec.C, spec.zipf_exponent, spec.n_max)
    counts = np.asarray(counts, dtype=np.int64)
    if counts.shape != (spec.C,) or np.any(counts < 0):
        raise ContractError("counts must be C non-negative integers")
    mean_seed, = np.random.SeedSequence([spec.seed, 0]).spawn(1)
    means = class_means(spec, np.random.default_rng(mean_seed))
    root = np.random.SeedSequence([spec.seed if sample_seed is None else sample_seed, 1])
    perm_seed, *shard_seeds = root.spawn(spec.C + 2)
    n_neg = num_negatives(counts, spec.bg_ratio)

    feats, labels = [], []
    for j in range(spec.C + 1):
        n = int(counts[j]) if j < spec.C else n_neg
        rng = np.random.default_rng(shard_seeds[j])
        feats.append(means[j] + spec.noise_std * rng.standard_normal((n, spec.feature_dim)))
        labels.append(np.full(n, j if j < spec.C else BACKGROUND, dtype=np.int64))
    features = np.concatenate(feats)
    labels = np.concatenate(labels)
    order = np.random.default_rng(perm_seed).permutation(len(labels))
    return SyntheticDataset(spec, features[order], labels[order], counts,
                            frequency_groups(counts, spec.group_bounds))


def make_eval_split(spec, cap=30):
    """Held-out split: min(count, cap) positives per category, derived seed.

    Groups follow the training frequencies, not the capped counts.
    """
    train_counts = zipf_counts(spec.C, spec.zipf_exponent, spec.n_max)
    eval_seed = int(np.random.SeedSequence([spec.seed, 0x5EED]).generate_state(1, np.uint64)[0])
    ds = make_dataset(spec, counts=np.minimum(train_counts, cap), sample_seed=eval_seed)
    ds.groups = frequency_groups(train_counts, spec.group_bounds)
    return ds


def repeat_factors(counts, t=0.001, n_total=None):
    """Per-category repeat factor max(1, sqrt(t / f_c)), f_c = counts / n_total."""
    if not t > 0:
        raise ParameterError("repeat-factor threshold t must be > 0")
    counts = np.asarray(counts, dtype=np.float64)
    if np.any(counts < 1):
        raise ContractError("every category needs at least one sample")
    total = counts.sum() if n_total is None else float(n_total)
    freq = counts / total
    return np.maximum(1.0, np.sqrt(t / freq))


def sample_repeat_factors(dataset, t=0.001):
    cat = repeat_factors(dataset.counts, t, n_total=len(dataset))
    r = np.ones(len(dataset))
    fg = dataset.labels >= 0
    r[fg] = cat[dataset.labels[fg]]
    return r


def rfs_sampler(dataset, t=0.001, seed=0):
    """Yield one shuffled index array per epoch.

    Sample i appears floor(r_i) times plus once more with probability
    frac(r_i), so its expected multiplicity is r_i.
    """
    r = sample_repeat_factors(dataset, t)
    base = np.floor(r)
    frac = r - base
    rng = np.random.default_rng(seed)
    while True:
        reps = base.astype(np.int64) + (rng.random(len(r)) < frac)
        idx = np.repeat(np.arange(len(r)), reps)
        yield idx[rng.permutation(len(idx))]


def imbalance_stats(dataset):
    """log10(positives / negatives) per category under one-vs-rest negatives."""
    n = len(dataset)
    if n == 0:
        raise ContractError("empty dataset")
    counts = np.asarray(dataset.counts, dtype=np.float64)
    if np.any(counts < 1):
        raise ContractError("every category needs at least one positive")
    neg = n - counts
    if np.any(neg < 1):
        raise ContractError("every category needs at least one negative")
    return np.log10(counts / neg)


def stats_csv(dataset):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["category", "count", "group", "log_ratio"])
    for j, (c, g, r) in enumerate(zip(dataset.counts, dataset.groups, imbalance_stats(dataset))):
        w.writerow([j, int(c), g, repr(float(r))])
    return buf.getvalue()
