"""Natural-parameter continuation of an orbit across the (m1, m2) mass plane."""

import logging
from dataclasses import dataclass, field
from decimal import Decimal

from .cns import IntegratorConfig
from .dynamics import Masses
from .numerics import is_float_backend
from .finder import OrbitGuess, correct_many, delta_floor, newton_correct

log = logging.getLogger(__name__)


def _dec(v):
    return v if isinstance(v, Decimal) else Decimal(str(v))


class MassPath(list):
    """Ordered masses where consecutive entries differ in one of m1, m2 by +-dm."""

    def __init__(self, masses, dm):
        super().__init__(masses)
        self.dm = _dec(dm)
        for a, b in zip(self, self[1:]):
            d1, d2 = abs(b.m1 - a.m1), abs(b.m2 - a.m2)
            if a.m3 != b.m3 or sorted((d1, d2)) != [0, self.dm]:
                raise ValueError(f"invalid leg {a} -> {b} for increment {self.dm}")

    @classmethod
    def between(cls, start, goal, dm, first="m1"):
        """Axis-aligned path: move along ``first`` then along the other mass."""
        dm = _dec(dm)
        seq = [start]
        cur = start
        for axis in (first, "m2" if first == "m1" else "m1"):
            target = getattr(goal, axis)
            while getattr(cur, axis) != target:
                diff = target - getattr(cur, axis)
                if abs(diff) < dm or (diff % dm) != 0:
                    raise ValueError(f"{axis} gap {diff} is not a multiple of {dm}")
                step = dm if diff > 0 else -dm
                vals = {"m1": cur.m1, "m2": cur.m2}
                vals[axis] += step
                cur = Masses(vals["m1"], vals["m2"], cur.m3)
                seq.append(cur)
        return cls(seq, dm)


# Legs are cheap to bisect and expensive to get wrong: a Newton run that
# needs many iterations, or that moves the parameters much faster than the
# mass changes, has usually landed on a neighbouring branch.
LEG_MAX_ITER = 10
MAX_BISECT = 3
MAX_SLOPE = 10.0
# closure the float predictor walk is driven to before the final correction
PREDICTOR_TOL = 1e-12


def continue_step(rec, m_next, tol=1e-10, cfg=None, max_iter=LEG_MAX_ITER):
    """Correct ``rec``'s parameters as a guess at the neighbouring masses ``m_next``.

    Returns the corrected record; ``converged`` is False when the increment
    was too large (no convergence within ``max_iter``) or the family ends
    there.
    """
    if m_next == rec.masses:
        return rec
    return _steps([rec], [m_next], tol, cfg, max_iter)[0]


def _steps(recs, targets, tol, cfg, max_iter):
    guesses = [OrbitGuess(m, r.x1, r.v1, r.v2, r.T, r.theta, r.family) for r, m in zip(recs, targets)]
    out = correct_many(guesses, tol, max_iter, cfg)
    for o, r in zip(out, recs):
        o.generation = r.generation
    return out


def _slope(rec, out):
    dm = max(abs(out.masses.m1 - rec.masses.m1), abs(out.masses.m2 - rec.masses.m2))
    if dm == 0:
        return 0.0
    dp = max(abs(a - b) for a, b in zip(out.params(), rec.params()))
    return float(dp / dm)


def _midpoint(a, b):
    return Masses((a.m1 + b.m1) / 2, (a.m2 + b.m2) / 2, b.m3)


def _leg(rec, m_next, tol, cfg, max_iter, depth=0, first=None):
    """One leg; on failure split it in two, down to ``MAX_BISECT`` levels."""
    out = first if first is not None else continue_step(rec, m_next, tol, cfg, max_iter)
    if out.converged and _slope(rec, out) > MAX_SLOPE:
        out.converged = False
        out.reason = "branch-jump"
    if out.converged or depth >= MAX_BISECT:
        return out
    mid = _midpoint(rec.masses, m_next)
    log.info("leg %s -> %s failed (%s); bisecting at %s", rec.masses, m_next, out.reason, mid)
    half = _leg(rec, mid, tol, cfg, max_iter, depth + 1)
    if not half.converged:
        return half
    return _leg(half, m_next, tol, cfg, max_iter, depth + 1)


def _legs(recs, targets, tol, cfg, max_iter):
    """Advance several records by one leg each; direct attempts share a batch."""
    direct = _steps(recs, targets, tol, cfg, max_iter)
    return [_leg(r, m, tol, cfg, max_iter, first=d) for r, m, d in zip(recs, targets, direct)]


def continue_along(rec, path, tol=1e-10, cfg=None, max_iter=LEG_MAX_ITER):
    """Follow ``path`` from ``rec``; stops at the first leg that fails.

    A leg counts as failed when Newton does not converge within
    ``max_iter`` iterations or when the parameters move by more than
    ``MAX_SLOPE`` times the mass increment (a jump to another branch).  A
    failed leg is bisected, up to ``MAX_BISECT`` levels, before the walk
    gives up.  Returns the converged records, one
    per reached mass point (excluding the start).
    """
    out = []
    cur = rec
    start = 1 if path and path[0] == rec.masses else 0
    for m in path[start:]:
        nxt = _leg(cur, m, tol, cfg, max_iter)
        if not nxt.converged:
            log.info("continuation stopped at %s: %s", m, nxt.reason)
            break
        out.append(nxt)
        cur = nxt
    return out


def lattice_values(lo, hi, dm):
    lo, hi, dm = _dec(lo), _dec(hi), _dec(dm)
    if hi < lo:
        raise ValueError("empty interval")
    n = int((hi - lo) / dm)
    vals = [lo + i * dm for i in range(n + 1)]
    if vals[-1] != hi:
        raise ValueError(f"interval [{lo}, {hi}] is not a whole number of steps {dm}")
    return vals


@dataclass
class SeedGrid:
    """Converged lattice orbits plus lattice points that could not be reached."""

    orbits: list
    uncovered: list = field(default_factory=list)

    def __len__(self):
        return len(self.orbits)

    def __iter__(self):
        return iter(self.orbits)

    def __getitem__(self, i):
        return self.orbits[i]


def _walk(starts, axis, targets, tol, cfg, max_iter):
    """Continue every record in ``starts`` along ``axis`` over ``targets``.

    Each start walks outward from its own value in both directions, one
    lattice increment per leg; legs at the same distance from the starts
    run as one batch.  Returns one ``{value: record}`` dict per start.
    """
    reached = [{getattr(r.masses, axis): r} for r in starts]
    for direction in (1, -1):
        cur = list(starts)
        live = list(range(len(starts)))
        sides = [sorted((v for v in targets if (v - getattr(r.masses, axis)) * direction > 0),
                        key=lambda v, h=getattr(r.masses, axis): abs(v - h)) for r in starts]
        step = 0
        while True:
            live = [i for i in live if step < len(sides[i])]
            if not live:
                break
            goals = []
            for i in live:
                vals = {"m1": cur[i].masses.m1, "m2": cur[i].masses.m2}
                vals[axis] = sides[i][step]
                goals.append(Masses(vals["m1"], vals["m2"], cur[i].masses.m3))
            outs = _legs([cur[i] for i in live], goals, tol, cfg, max_iter)
            keep = []
            for i, o in zip(live, outs):
                if o.converged:
                    reached[i][sides[i][step]] = o
                    cur[i] = o
                    keep.append(i)
                else:
                    log.info("%s walk stopped at %s: %s", axis, o.masses, o.reason)
            live = keep
            step += 1
    return reached


def build_seed_grid(seed, region, dm, tol=1e-10, cfg=None, first="m1", max_iter=LEG_MAX_ITER, predictor=None):
    """Two-stage continuation filling a rectangular mass lattice.

    Stage one continues the seed along ``first`` (m1 by default) with the
    other mass held at the seed value; stage two continues every stage-one
    orbit along the other mass.  The lattice includes both interval ends.

    Parameters
    ----------
    seed : OrbitRecord
        Converged orbit at a mass point on (or one increment from) the lattice.
    region : ((m1_lo, m1_hi), (m2_lo, m2_hi))
    dm : Decimal or str
        Lattice increment for both masses.
    predictor : IntegratorConfig or False, optional
        Precision of the walk itself.  By default a multiple-precision
        ``cfg`` walks on the float backend (to ``delta_T < 1e-12``) and then
        corrects every lattice orbit at ``cfg`` in one batch, starting from
        the float result; lattice points whose final correction fails are
        reported as uncovered.  ``False`` walks at ``cfg`` directly.

    Returns
    -------
    SeedGrid
        Orbits sorted by ``(m1, m2)`` and the uncovered lattice points.
    """
    cfg = cfg or IntegratorConfig.standard()
    if predictor is None and not is_float_backend(cfg.digits):
        predictor = IntegratorConfig.fast()
    if predictor:
        rough_tol = max(min(tol, PREDICTOR_TOL), 10 * delta_floor(predictor))
        rough = build_seed_grid(seed, region, dm, rough_tol, predictor, first, max_iter, predictor=False)
        final = correct_many([r.guess() for r in rough.orbits], tol, max_iter, cfg)
        for f, r in zip(final, rough.orbits):
            f.generation = r.generation
        orbits = [f for f in final if f.converged and f.delta_T < tol]
        lost = [r.masses.key() for r, f in zip(rough.orbits, final) if not (f.converged and f.delta_T < tol)]
        for k in lost:
            log.info("lattice point %s did not survive correction at %d digits", k, cfg.digits)
        return SeedGrid(orbits=orbits, uncovered=sorted(list(rough.uncovered) + lost))
    if not (seed.delta_T < tol and seed.digits == cfg.digits):
        # the walk compares every lattice orbit against tol at cfg, the seed included
        seed = newton_correct(seed.guess(), tol, max_iter, cfg)
    (a_lo, a_hi), (b_lo, b_hi) = region
    m1_vals = lattice_values(a_lo, a_hi, dm)
    m2_vals = lattice_values(b_lo, b_hi, dm)
    second = "m2" if first == "m1" else "m1"
    first_vals = m1_vals if first == "m1" else m2_vals
    second_vals = m2_vals if first == "m1" else m1_vals
    if not seed.converged:
        log.info("seed at %s does not close to %g at %d digits", seed.masses, tol, cfg.digits)
        return SeedGrid(orbits=[], uncovered=[(a, b) for a in m1_vals for b in m2_vals])
    stage1 = _walk([seed], first, first_vals, tol, cfg, max_iter)[0]
    heads = [stage1[v] for v in sorted(stage1) if v in first_vals]
    found = {}
    for column in _walk(heads, second, second_vals, tol, cfg, max_iter):
        for w, rec in column.items():
            if w in second_vals:
                found[rec.masses.key()] = rec
    orbits = [found[k] for k in sorted(found) if found[k].converged and found[k].delta_T < tol]
    kept = {(r.masses.m1, r.masses.m2) for r in orbits}
    uncovered = [(a, b) for a in m1_vals for b in m2_vals if (a, b) not in kept]
    return SeedGrid(orbits=orbits, uncovered=uncovered)
