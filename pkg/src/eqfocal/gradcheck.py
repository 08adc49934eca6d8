"""Finite-difference verification of the analytical loss gradients.

The numerical side only ever evaluates forward kernels; the analytical
side is whatever gradient function the variant declares (or an override
passed to :func:`run_checks`).
"""
import csv
import io
import itertools
import math
from dataclasses import dataclass, field


from . import losses
from .errors import ParameterError
from .losses import LossHyperParams, Variant

DEFAULT_X = (-10.0, -5.0, -2.0, 0.0, 2.0, 5.0, 10.0)
DEFAULT_GAMMA_V = (0.0, 2.0, 6.4, 8.0)
DEFAULT_Y = (0, 1)
DEFAULT_QUALITY = (0.0, 0.3, 0.8, 1.0)
DEFAULT_W_T = (0.5, 1.0, 2.0)


def central_diff(f, x, h=1e-4):
    return (f(x + h) - f(x - h)) / (2.0 * h)


@dataclass(frozen=True)
class GridPoint:
    x: float
    gamma_v: float
    y: int
    quality: float = 1.0
    w_t: float = 1.0


@dataclass(frozen=True)
class CheckSpec:
    variant: Variant = Variant.EFL
    xs: tuple = DEFAULT_X
    gamma_vs: tuple = DEFAULT_GAMMA_V
    ys: tuple = DEFAULT_Y
    qualities: tuple = DEFAULT_QUALITY
    w_ts: tuple = DEFAULT_W_T
    h: float = 1e-4
    rtol: float = 1e-5
    atol: float = 1e-9
    # below this |gradient| a point is judged by atol only
    plateau: float = 1e-8
    hp: LossHyperParams = field(default_factory=LossHyperParams)

    def __post_init__(self):
        object.__setattr__(self, "variant", Variant.parse(self.variant))
        if not (self.h > 0 and self.rtol > 0 and self.atol > 0):
            raise ParameterError("h, rtol and atol must be positive")

    def points(self):
        base = itertools.product(self.xs, self.gamma_vs, self.ys)
        if self.variant is Variant.EQFL:
            for x, gv, y in base:
                for q in (self.qualities if y == 1 else (0.0,)):
                    yield GridPoint(x, gv, y, quality=q)
        elif self.variant is Variant.EQLV2_FOCAL:
            for (x, gv, y), w in itertools.product(base, self.w_ts):
                yield GridPoint(x, gv, y, w_t=w)
        else:
            for x, gv, y in base:
                yield GridPoint(x, gv, y)


def kernels(variant, hp):
    """(forward, gradient) callables of one logit for a grid point."""
    variant = Variant.parse(variant)
    if variant is Variant.FL:
        return (lambda pt: lambda x: losses.focal_loss(x, pt.y, hp, hp.gamma_b + pt.gamma_v),
                lambda pt: losses.focal_grad(pt.x, pt.y, hp, hp.gamma_b + pt.gamma_v))
    if variant is Variant.EFL:
        return (lambda pt: lambda x: losses.efl(x, pt.y, hp, pt.gamma_v),
                lambda pt: losses.efl_grad(pt.x, pt.y, hp, pt.gamma_v))
    if variant is Variant.EQLV2_FOCAL:
        return (lambda pt: lambda x: losses.eqlv2_focal(x, pt.y, hp, hp.gamma_b + pt.gamma_v, pt.w_t),
                lambda pt: losses.eqlv2_focal_grad(pt.x, pt.y, hp, hp.gamma_b + pt.gamma_v, pt.w_t))
    return (lambda pt: lambda x: losses.eqfl_logits(x, pt.y, hp, pt.gamma_v, pt.quality),
            lambda pt: losses.eqfl_grad(pt.x, pt.y, hp, pt.gamma_v, pt.quality))


@dataclass
class CheckRow:
    variant: Variant
    point: GridPoint
    analytic: float
    numeric: float
    abs_err: float
    rel_err: float
    ok: bool


@dataclass
class CheckReport:
    rows: list

    @property
    def failures(self):
        return [r for r in self.rows if not r.ok]

    @property
    def passed(self):
        return not self.failures

    @property
    def max_abs_err(self):
        return max((r.abs_err for r in self.rows), default=0.0)

    @property
    def max_rel_err(self):
        vals = [r.rel_err for r in self.rows if not math.isnan(r.rel_err)]
        return max(vals, default=0.0)

    def summary(self):
        lines = []
        for v in dict.fromkeys(r.variant for r in self.rows):
            rows = [r for r in self.rows if r.variant is v]
            sub = CheckReport(rows)
            status = "PASS" if sub.passed else "FAIL"
            lines.append(f"{status} {v.value}: {len(rows)} points, max rel err {sub.max_rel_err:.3e}, "
                         f"max abs err {sub.max_abs_err:.3e}, failures {len(sub.failures)}")
            for r in sub.failures:
                p = r.point
                lines.append(f"  failing point x={p.x} gamma_v={p.gamma_v} y={p.y} quality={p.quality} "
                             f"w_t={p.w_t}: analytic={float(r.analytic)!r} numeric={float(r.numeric)!r}")
        return "\n".join(lines)

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["variant", "x", "gamma_v", "y", "quality", "w_t", "analytic", "numeric",
                    "abs_err", "rel_err", "ok"])
        for r in self.rows:
            p = r.point
            w.writerow([r.variant.value] + [repr(float(v)) for v in (p.x, p.gamma_v)] + [p.y]
                      + [repr(float(v)) for v in (p.quality, p.w_t, r.analytic, r.numeric, r.abs_err, r.rel_err)]
                      + [int(r.ok)])
        return buf.getvalue()


def run_checks(spec, analytic=None):
    """Compare analytical and central-difference gradients over the grid.

    ``analytic`` optionally replaces the variant's gradient function; it is
    called with a :class:`GridPoint`. Non-finite evaluations are reported
    as failures rather than raised.
    """
    forward, grad = kernels(spec.variant, spec.hp)
    grad = analytic or grad
    rows = []
    for pt in spec.points():
        try:
            a = float(grad(pt))
            n = float(central_diff(forward(pt), pt.x, spec.h))
        except (ArithmeticError, ValueError):
            a = n = float("nan")
        abs_err = abs(a - n)
        if not (math.isfinite(a) and math.isfinite(n)):
            rows.append(CheckRow(spec.variant, pt, a, n, abs_err, float("nan"), False))
            continue
        if abs(n) < spec.plateau:
            rel, ok = float("nan"), abs_err <= spec.atol
        else:
            rel = abs_err / abs(n)
            ok = rel <= spec.rtol
        rows.append(CheckRow(spec.variant, pt, a, n, abs_err, rel, ok))
    return CheckReport(rows)


def run_all(variants=tuple(Variant), **overrides):
    rows = []
    for v in variants:
        rows += run_checks(CheckSpec(variant=v, **overrides)).rows
    return CheckReport(rows)
