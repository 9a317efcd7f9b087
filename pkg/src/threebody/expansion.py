"""Expansion loop: train, predict new mass points, correct, grow the data set.

Mass points live on a lattice of spacing ``dm`` (0.01 by default) and are
keyed by exact decimals so that membership tests never suffer from float
round-off.  A :class:`MassRegion` records which lattice points have a
converged orbit and which failed; every point is corrected at most once.
"""

import csv
import io
import logging
import math
from dataclasses import asdict, dataclass, field
from decimal import Decimal

import numpy as np

from . import ann
from .cns import IntegratorConfig
from .continuation import build_seed_grid
from .dynamics import Masses
from .errors import ConfigurationError
from .finder import OrbitGuess, correct_many

log = logging.getLogger(__name__)

FOUND, FAILED = "found", "failed"
DEFAULT_DM = Decimal("0.01")
RING_FLOOR = Decimal("0.1")
DEFAULT_STALL = 0.08


def _dec(v):
    return v if isinstance(v, Decimal) else Decimal(str(v))


def _key(m1, m2):
    return (_dec(m1).normalize(), _dec(m2).normalize())


class MassRegion:
    """Lattice points tagged found or failed; anything else is untried."""

    def __init__(self, dm=DEFAULT_DM):
        self.dm = _dec(dm)
        self.status = {}

    def __len__(self):
        return len(self.status)

    def _mark(self, m1, m2, tag):
        k = _key(m1, m2)
        old = self.status.get(k)
        if old is not None and old != tag:
            raise ValueError(f"point {k} is already {old}")
        self.status[k] = tag

    def add_found(self, m1, m2):
        self._mark(m1, m2, FOUND)

    def add_failed(self, m1, m2):
        self._mark(m1, m2, FAILED)

    def tag(self, m1, m2):
        return self.status.get(_key(m1, m2), "untried")

    def found(self):
        return sorted(k for k, v in self.status.items() if v == FOUND)

    def failed(self):
        return sorted(k for k, v in self.status.items() if v == FAILED)

    @classmethod
    def from_records(cls, records, failures=(), dm=DEFAULT_DM):
        region = cls(dm)
        for r in records:
            region.add_found(r.masses.m1, r.masses.m2)
        for m1, m2 in failures:
            region.add_failed(m1, m2)
        return region


def _steps(lo, hi, dm):
    """Lattice values in the half-open interval ``[lo, hi)``."""
    lo, hi = _dec(lo), _dec(hi)
    n = int(math.ceil((hi - lo) / dm))
    return [lo + i * dm for i in range(n) if lo + i * dm < hi]


def rectangle(region, bounds):
    """Untried lattice points in ``[lo1, hi1) x [lo2, hi2)``."""
    (a_lo, a_hi), (b_lo, b_hi) = bounds
    return [k for k in ((m1.normalize(), m2.normalize())
                        for m1 in _steps(a_lo, a_hi, region.dm) for m2 in _steps(b_lo, b_hi, region.dm))
            if k not in region.status]


def boundary_ring(region, width=7, floor=RING_FLOOR):
    """Untried points within Manhattan distance ``width`` steps of a found point.

    Both masses must exceed ``floor``.
    """
    dm = region.dm
    out = set()
    for m1, m2 in region.found():
        for i in range(-width, width + 1):
            span = width - abs(i)
            for j in range(-span, span + 1):
                k = _key(m1 + i * dm, m2 + j * dm)
                if k[0] > floor and k[1] > floor and k not in region.status:
                    out.add(k)
    return sorted(out)


def generate_candidates(region, strategy):
    """Dispatch on ``("rectangle", bounds)`` or ``("ring", width)``."""
    kind, arg = strategy
    if kind == "rectangle":
        return rectangle(region, arg)
    if kind == "ring":
        return boundary_ring(region, int(arg))
    raise ConfigurationError(f"unknown candidate strategy {kind!r}")


@dataclass
class ExpansionRoundReport:
    round: int
    issued: int
    converged: int
    success_fraction: float
    mean_relative_error: float

    @classmethod
    def of(cls, index, issued, converged, mre):
        frac = converged / issued if issued else 0.0
        return cls(index, issued, converged, frac, mre)


def reports_csv(reports, path=None):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["round", "issued", "converged", "success_fraction", "mean_relative_error"])
    for r in reports:
        w.writerow([r.round, r.issued, r.converged, repr(r.success_fraction), repr(r.mean_relative_error)])
    text = buf.getvalue()
    if path is not None:
        with open(path, "w") as fh:
            fh.write(text)
    return text


def _short(x):
    # 17 significant digits carry a double exactly
    return Decimal(f"{float(x):.17g}")


def training_set(records, fractions=(0.9, 0.1, 0.0), seed=0):
    """Regression data set ``(m1, m2) -> (x1, v1, v2, T)`` from orbit records."""
    X = np.array([[float(r.masses.m1), float(r.masses.m2)] for r in records])
    Y = np.array([[float(v) for v in r.params()] for r in records])
    return ann.make_dataset(X, Y, fractions, seed)


def tag_model(model, theta, family):
    """Attach the family identity that :func:`expand_once` checks."""
    model.metadata["theta"] = str(theta)
    model.metadata["family"] = family
    return model


def expand_once(model, candidates, theta, family="default", m3=Decimal(1), tol=1e-10, cfg=None,
                generation=1, max_iter=50, round_index=1):
    """Predict, correct and sort candidates into new orbits and failures.

    Parameters
    ----------
    model : MLPModel
        Regressor tagged (see :func:`tag_model`) with its family's ``theta``.
    candidates : list of (m1, m2)
    theta : Decimal
        Frame angle of the family; must match the model's tag.

    Returns
    -------
    orbits : list of OrbitRecord
        Converged records tagged with ``generation``.
    failures : list of (m1, m2)
    report : ExpansionRoundReport
        The mean relative error compares predictions with the corrected
        parameters of the converged candidates (NaN if none converged).
    """
    cfg = cfg or IntegratorConfig.fast()
    theta = _dec(theta)
    tagged = model.metadata.get("theta")
    if tagged is None or Decimal(tagged) != theta or model.metadata.get("family", family) != family:
        raise ConfigurationError(
            f"model belongs to family {model.metadata.get('family')!r} at theta={tagged}, "
            f"not {family!r} at theta={theta}")
    if not candidates:
        return [], [], ExpansionRoundReport.of(round_index, 0, 0, math.nan)
    X = np.array([[float(a), float(b)] for a, b in candidates])
    pred = ann.forward(model, X)
    guesses, idx, failures = [], [], []
    for i, ((a, b), p) in enumerate(zip(candidates, pred)):
        if not (np.all(np.isfinite(p)) and p[3] > 0):
            failures.append((_dec(a), _dec(b)))
            continue
        guesses.append(OrbitGuess(Masses(a, b, m3), *(_short(v) for v in p), theta, family))
        idx.append(i)
    recs = correct_many(guesses, tol, max_iter, cfg)
    orbits, errs = [], []
    for i, rec in zip(idx, recs):
        if rec.converged and rec.delta_T < tol:
            rec.generation = generation
            orbits.append(rec)
            corr = np.array([float(v) for v in rec.params()])
            errs.append(np.abs(pred[i] - corr) / np.abs(corr))
        else:
            failures.append((rec.masses.m1, rec.masses.m2))
    mre = float(np.mean(errs)) if errs else math.nan
    report = ExpansionRoundReport.of(round_index, len(candidates), len(orbits), mre)
    log.info("round %d: %d/%d converged, mean relative error %.3g", round_index, len(orbits),
             len(candidates), mre)
    return orbits, failures, report


@dataclass
class RoadmapConfig:
    """Settings for :func:`run_roadmap`.

    ``rounds`` lists candidate strategies, one per expansion round, e.g.
    ``[("rectangle", ((0.1, 1.2), (0.4, 2.8))), ("ring", 7)]``.  The seed
    grid uses ``seed_cfg`` (high precision), expansion rounds ``expand_cfg``.
    """

    seed_region: tuple
    seed_dm: Decimal = DEFAULT_DM
    rounds: list = field(default_factory=list)
    stall: float = DEFAULT_STALL
    tol: float = 1e-10
    seed_cfg: IntegratorConfig = field(default_factory=IntegratorConfig.standard)
    expand_cfg: IntegratorConfig = field(default_factory=IntegratorConfig.fast)
    train: ann.TrainConfig = field(default_factory=ann.TrainConfig)
    split: tuple = (0.9, 0.1, 0.0)
    seed: int = 0
    dm: Decimal = DEFAULT_DM
    store_path: str = None


@dataclass
class RoadmapResult:
    orbits: list
    failures: list
    model: ann.MLPModel
    reports: list
    region: MassRegion


def run_roadmap(seed, config, seed_grid=None):
    """Seed grid, then train/predict/correct rounds until expansion stalls.

    The seed grid counts as round 0 with success fraction
    ``orbits / lattice points``.  The loop stops after a round whose success
    fraction is at most ``config.stall``, when a round has no candidates or
    when the configured rounds run out.  Orbits from a stalled round are
    kept.  ``seed_grid`` may pass a precomputed :class:`SeedGrid`.

    On any exception the orbits found so far are written to
    ``config.store_path`` (when set) before re-raising.
    """
    grid = seed_grid or build_seed_grid(seed, config.seed_region, config.seed_dm, config.tol, config.seed_cfg)
    lattice = len(grid.orbits) + len(grid.uncovered)
    round0 = ExpansionRoundReport.of(0, lattice, len(grid.orbits), 0.0)
    return expand_rounds(list(grid.orbits), [], seed.theta, config, seed.family, seed.masses.m3, [round0])


def expand_rounds(orbits, failures, theta, config, family="default", m3=Decimal(1), reports=None):
    """Run ``config.rounds`` expansion rounds starting from known orbits.

    See :func:`run_roadmap` for the stopping rule.  A fresh regressor is
    trained on all known orbits before each round and once more at the end.
    """
    from .store import save_orbits

    orbits, failures = list(orbits), list(failures)
    reports = list(reports or [])
    model = None
    try:
        region = MassRegion.from_records(orbits, failures, dm=config.dm)
        model = _train(orbits, theta, family, config)
        start = reports[-1].round + 1 if reports else 1
        for r, strategy in enumerate(config.rounds, start=start):
            if reports and reports[-1].success_fraction <= config.stall:
                break
            cands = generate_candidates(region, strategy)
            if not cands:
                break
            new, bad, rep = expand_once(model, cands, theta, family, m3, config.tol, config.expand_cfg,
                                        generation=r, round_index=r)
            for rec in new:
                region.add_found(rec.masses.m1, rec.masses.m2)
            for m1, m2 in bad:
                region.add_failed(m1, m2)
            orbits += new
            failures += bad
            reports.append(rep)
            model = _train(orbits, theta, family, config)
    except Exception:
        if config.store_path and orbits:
            save_orbits(sorted(orbits, key=lambda o: o.masses.key()), config.store_path)
        raise
    orbits.sort(key=lambda o: o.masses.key())
    failures.sort()
    if config.store_path:
        save_orbits(orbits, config.store_path)
    return RoadmapResult(orbits, failures, model, reports, region)


def _train(orbits, theta, family, config):
    data = training_set(orbits, config.split, config.seed)
    model, _ = ann.train_regression(data, config.train, config.seed)
    return tag_model(model, theta, family)


LABELS = {"stable": 0, "unstable": 1}


def assemble_classifier_dataset(store, failures, fractions=(0.9, 0.05, 0.05), seed=0):
    """Classifier examples from labelled orbits and failed mass points.

    Orbits map to class 0 (stable) or 1 (unstable) from their ``stability``
    field; failures map to class 2 (non-periodic).  Rows are ordered orbits
    first, then failures, before the seeded split.
    """
    X, y = [], []
    for rec in store:
        if rec.stability not in LABELS:
            raise ValueError(f"orbit at {rec.masses} has no stability label ({rec.stability!r})")
        X.append([float(rec.masses.m1), float(rec.masses.m2)])
        y.append(LABELS[rec.stability])
    for m1, m2 in failures:
        X.append([float(m1), float(m2)])
        y.append(2)
    if not X:
        raise ValueError("no examples")
    return ann.make_dataset(np.array(X), ann.one_hot(y, 3), fractions, seed)


def report_dicts(reports):
    return [asdict(r) for r in reports]
