"""Seeded simulation harness for the N(theta, theta^2 + 1) link model.

Every replication draws from its own generator, seeded by the triple
``(seed, n, rep_index)``, so results do not depend on which worker ran which
replication or in what order.
"""

from __future__ import annotations

import csv
import io
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .divergence import DISPLAY_NAMES, divergence_from_name
from .errors import DomainError, MephdError, NotConverged
from .estimator import estimate
from .model import Sample, builtin_model

__all__ = [
    "Contamination",
    "ScenarioConfig",
    "EstimatorSummary",
    "ScenarioReport",
    "BUILTIN_SCENARIOS",
    "builtin_scenario",
    "generate_sample",
    "pmle_normal_link",
    "run_scenario",
]

ALL_DIVERGENCES = ("chi2m", "klm", "hellinger", "kl", "chi2")


@dataclass(frozen=True)
class Contamination:
    """``none``, ``point_mass`` (replace each draw by ``at`` with probability
    ``eps``) or ``inlier_cut`` (drop draws falling in ``[lo, hi]``)."""

    kind: str = "none"
    eps: float = 0.0
    at: float = 0.0
    lo: float = 0.0
    hi: float = 0.0

    def __post_init__(self):
        if self.kind not in ("none", "point_mass", "inlier_cut"):
            raise DomainError(f"unknown contamination kind {self.kind!r}")
        if self.kind == "point_mass" and not 0 <= self.eps < 1:
            raise DomainError("contamination eps must lie in [0, 1)")
        if self.kind == "inlier_cut" and not self.lo < self.hi:
            raise DomainError("the inlier cut needs lo < hi")


@dataclass(frozen=True)
class ScenarioConfig:
    name: str
    theta0: float
    sizes: tuple
    reps: int
    divergences: tuple = ALL_DIVERGENCES
    contamination: Contamination = field(default_factory=Contamination)
    seed: int = 20240611
    comparators: tuple = ("PMLE", "SME")

    def __post_init__(self):
        if self.reps < 1:
            raise DomainError("reps must be at least 1")
        if not self.sizes or min(self.sizes) < 4:
            raise DomainError("sample sizes must be at least 4")
        if self.seed < 0:
            raise DomainError("seed must be nonnegative")
        for name in self.divergences:
            divergence_from_name(name)
        for c in self.comparators:
            if c not in ("PMLE", "SME"):
                raise DomainError(f"unknown comparator {c!r}")

    @property
    def estimator_labels(self):
        labels = [divergence_from_name(d).label for d in self.divergences]
        return labels + list(self.comparators)

    def replace(self, **changes):
        data = asdict(self)
        data.update({k: v for k, v in changes.items() if v is not None})
        return ScenarioConfig.from_dict(data)

    @classmethod
    def from_dict(cls, data):
        data = dict(data)
        cont = data.pop("contamination", None) or {}
        if isinstance(cont, Contamination):
            contamination = cont
        else:
            contamination = Contamination(**cont)
        for key in ("sizes", "divergences", "comparators"):
            if key in data:
                data[key] = tuple(data[key])
        return cls(contamination=contamination, **data)


BUILTIN_SCENARIOS = {
    "example1a": ScenarioConfig("example1a", 0.0, (25, 50, 75, 100), 1000),
    "example1b": ScenarioConfig("example1b", 1.0, (25, 50, 75, 100), 1000),
    "example2a": ScenarioConfig(
        "example2a", 2.0, (25, 50, 75, 100), 1000,
        contamination=Contamination("point_mass", eps=0.15, at=5.0),
    ),
    "example2b": ScenarioConfig(
        "example2b", 2.0, (50, 100, 150, 200), 1000,
        contamination=Contamination("inlier_cut", lo=4.0, hi=5.0),
    ),
}


def builtin_scenario(name):
    try:
        return BUILTIN_SCENARIOS[name]
    except KeyError:
        raise DomainError(
            f"unknown scenario {name!r}; available: {', '.join(BUILTIN_SCENARIOS)}"
        ) from None


def _rng(seed, n, rep_index):
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(n), int(rep_index)]))


def generate_sample(config, n, rep_index):
    """Draw replication ``rep_index`` of size ``n`` (before any inlier deletion)."""
    rng = _rng(config.seed, n, rep_index)
    theta0 = config.theta0
    x = rng.normal(theta0, math.sqrt(theta0 * theta0 + 1.0), size=n)
    cont = config.contamination
    if cont.kind == "point_mass":
        hit = rng.random(n) < cont.eps
        x[hit] = cont.at
    elif cont.kind == "inlier_cut":
        x = x[(x < cont.lo) | (x > cont.hi)]
    return Sample(x, source=f"{config.name}:n={n}:rep={rep_index}")


# -- parametric comparator --------------------------------------------------


def _normal_link_loglik(theta, m1, m2):
    s2 = theta * theta + 1.0
    return -0.5 * math.log(s2) - (m2 - 2.0 * theta * m1 + theta * theta) / (2.0 * s2)


def _score_poly(m1, m2):
    # (theta^2 + 1)^2 times the per-observation score of N(theta, theta^2 + 1)
    return np.array([-1.0, -m1, m2 - 2.0, m1])


def pmle_normal_link(sample, tol=1e-12, max_iter=100):
    """Maximum likelihood estimate of ``theta`` under ``N(theta, theta^2 + 1)``.

    The score, cleared of its positive denominator, is the cubic
    ``-t^3 - m1 t^2 + (m2 - 2) t + m1`` in the first two sample moments.
    Each real root is polished by Newton's method (bisection when Newton
    leaves its bracket) and the root with the largest likelihood is returned.
    """
    x = np.asarray(sample.observations if isinstance(sample, Sample) else sample, dtype=float)
    x = x.ravel()
    if x.size == 0:
        raise DomainError("empty sample")
    m1 = float(x.mean())
    m2 = float(np.mean(x * x))
    poly = _score_poly(m1, m2)
    dpoly = np.polyder(poly)
    roots = np.roots(poly)
    real = sorted(float(r.real) for r in roots if abs(r.imag) <= 1e-7 * max(1.0, abs(r)))
    if not real:
        raise NotConverged("the likelihood score has no real root")

    best = None
    for r in real:
        root = _polish(poly, dpoly, r, tol, max_iter)
        if np.polyval(dpoly, root) > 0:
            continue  # a likelihood minimum; the score crosses upwards
        ll = _normal_link_loglik(root, m1, m2)
        if best is None or ll > best[0]:
            best = (ll, root)
    if best is None:
        raise NotConverged("no local maximum of the likelihood was found")
    return best[1]


def _polish(poly, dpoly, x0, tol, max_iter):
    # bracket of width proportional to the root scale
    h = 1e-6 * max(1.0, abs(x0))
    a, b = x0 - h, x0 + h
    fa, fb = np.polyval(poly, a), np.polyval(poly, b)
    bracketed = fa * fb <= 0
    x = x0
    for _ in range(max_iter):
        fx = np.polyval(poly, x)
        dfx = np.polyval(dpoly, x)
        step = fx / dfx if dfx != 0 else math.inf
        x_new = x - step
        if bracketed and not (a <= x_new <= b):
            if fa * fx <= 0:
                b, fb = x, fx
            else:
                a, fa = x, fx
            x_new = 0.5 * (a + b)
        if not math.isfinite(x_new):
            raise NotConverged("Newton iteration on the score diverged")
        if abs(x_new - x) <= tol * max(1.0, abs(x)):
            return x_new
        x = x_new
    return x


# -- scenario runs ----------------------------------------------------------


@dataclass
class EstimatorSummary:
    mean: float
    var: float
    mse: float
    failures: int
    successes: int

    def to_dict(self):
        return asdict(self)


@dataclass
class ScenarioReport:
    config: ScenarioConfig
    rows: dict  # (n, label) -> EstimatorSummary

    def summary(self, n, label):
        return self.rows[(n, label)]

    def to_dict(self):
        out = {"config": asdict(self.config), "results": []}
        for (n, label), s in self.rows.items():
            out["results"].append({"n": n, "estimator": label, **s.to_dict()})
        return out

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2)

    def to_csv(self):
        labels = self.config.estimator_labels
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["n"] + [f"{lab}_{col}" for lab in labels for col in ("mean", "var")])
        for n in self.config.sizes:
            row = [n]
            for lab in labels:
                s = self.rows[(n, lab)]
                row += [f"{s.mean:.4f}", f"{s.var:.4f}"]
            w.writerow(row)
        return buf.getvalue()


def _one_replication(args):
    config, n, rep = args
    sample = generate_sample(config, n, rep)
    model = builtin_model("qinlawless")
    out = []
    for name in config.divergences:
        spec = divergence_from_name(name)
        try:
            out.append(float(estimate(model, spec, sample, variances=False).theta_hat[0]))
        except (MephdError, ValueError, FloatingPointError, np.linalg.LinAlgError):
            out.append(math.nan)
    for comp in config.comparators:
        if comp == "SME":
            out.append(float(np.mean(sample.observations)))
        else:
            try:
                out.append(pmle_normal_link(sample))
            except MephdError:
                out.append(math.nan)
    return out


def _summarize(values, theta0):
    ok = values[np.isfinite(values)]
    failures = int(values.size - ok.size)
    if ok.size == 0:
        return EstimatorSummary(math.nan, math.nan, math.nan, failures, 0)
    mean = math.fsum(ok) / ok.size
    var = math.fsum((ok - mean) ** 2) / (ok.size - 1) if ok.size > 1 else 0.0
    mse = math.fsum((ok - theta0) ** 2) / ok.size
    return EstimatorSummary(mean, var, mse, failures, int(ok.size))


def run_scenario(config, jobs=1, sizes=None):
    """Run every replication of ``config`` and aggregate per ``(n, estimator)``.

    The report is bit-identical for any ``jobs``: replications are computed
    independently and aggregated in ``rep_index`` order.
    """
    sizes = tuple(sizes) if sizes is not None else tuple(config.sizes)
    labels = config.estimator_labels
    tasks = [(config, n, rep) for n in sizes for rep in range(config.reps)]
    if jobs and jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_one_replication, tasks,
                                    chunksize=max(1, len(tasks) // (8 * jobs))))
    else:
        results = [_one_replication(t) for t in tasks]

    table = np.array(results, dtype=float).reshape(len(sizes), config.reps, len(labels))
    rows = {}
    for i, n in enumerate(sizes):
        for j, lab in enumerate(labels):
            rows[(n, lab)] = _summarize(table[i, :, j], config.theta0)
    if sizes != tuple(config.sizes):
        config = config.replace(sizes=sizes)
    return ScenarioReport(config=config, rows=rows)


__all__ += ["ALL_DIVERGENCES", "DISPLAY_NAMES"]
