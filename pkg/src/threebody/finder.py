"""Shooting corrector for relative periodic orbits, refinement and grid search.

Unknowns are ``(x1, v1, v2, T)`` at a fixed frame angle ``theta``.  Each
Newton iteration integrates the orbit together with the three tangent
directions that move ``x1``, ``v1`` and ``v2`` (body 3's velocity follows
through the zero-momentum constraint), assembles the 12x4 system

    [ (M - G) d1 | (M - G) d2 | (M - G) d3 | f(y_T) ] z = G y - y_T

with ``G`` the rotation about the centre of mass, and applies the
minimum-norm least-squares correction ``z``.
"""

import logging
import math
from dataclasses import asdict, dataclass, field, replace
from decimal import Decimal

import numpy as np

from .cns import OK, STATUS_NAMES, IntegratorConfig, integrate, propagate
from .dynamics import CollinearIC, Masses, expand_ic, relative_rotation_matrix, return_distance, vector_field
from .errors import ConfigurationError
from .numerics import is_float_backend, norm2, svd_least_norm_solve, to_decimal, working_precision, xarray, xreal

log = logging.getLogger(__name__)

DIVERGENCE_RUN = 3
# Trust radius for the (x1, v1, v2, T) update.  The 12x4 system is badly
# conditioned (sigma_min/sigma_max ~ 3e-5 on the equal-mass seed), so far
# from the orbit the plain least-norm step can be huge and land elsewhere.
TRUST_RADIUS = 0.05


def _dec(v):
    return v if isinstance(v, Decimal) else Decimal(str(v))


@dataclass(frozen=True)
class OrbitGuess:
    """Starting point for the corrector."""

    masses: Masses
    x1: Decimal
    v1: Decimal
    v2: Decimal
    T: Decimal
    theta: Decimal
    family: str = "default"

    def __post_init__(self):
        for name in ("x1", "v1", "v2", "T", "theta"):
            object.__setattr__(self, name, _dec(getattr(self, name)))
        if not self.T > 0:
            raise ValueError(f"period must be positive, got {self.T}")

    @property
    def ic(self):
        return CollinearIC(self.x1, self.v1, self.v2)

    def params(self):
        return (self.x1, self.v1, self.v2, self.T)


@dataclass
class OrbitRecord:
    """Outcome of a correction: parameters, closure and bookkeeping."""

    masses: Masses
    x1: Decimal
    v1: Decimal
    v2: Decimal
    T: Decimal
    theta: Decimal
    family: str = "default"
    delta_T: float = math.inf
    converged: bool = False
    tol: float = 1e-10
    iterations: int = 0
    stability: str = "unknown"
    generation: int = 0
    reason: str = ""
    digits: int = 0
    history: list = field(default_factory=list, repr=False, compare=False)
    last_step: float = 0.0

    def guess(self):
        return OrbitGuess(self.masses, self.x1, self.v1, self.v2, self.T, self.theta, self.family)

    def params(self):
        return (self.x1, self.v1, self.v2, self.T)

    def key(self):
        return (self.family, self.masses.m1, self.masses.m2)

    def as_dict(self):
        d = asdict(self)
        d.pop("history")
        return d


def delta_floor(cfg):
    """Smallest return distance a run at ``cfg.digits`` can certify."""
    if is_float_backend(cfg.digits):
        return 1e-13
    return 10.0 ** (8 - cfg.digits)


def tangent_directions(masses, digits):
    """12x3 directions of ``dy/dx1``, ``dy/dv1``, ``dy/dv2`` with the v3 chain rule."""
    m1, m2, m3 = masses.as_array(digits)
    with working_precision(digits):
        d = xarray(np.zeros((12, 3)), digits)
        one = xreal(1, digits)
        d[0, 0] = one
        d[7, 1] = one
        d[11, 1] = -m1 / m3
        d[9, 2] = one
        d[11, 2] = -m2 / m3
    return d


def _record(guess, params, delta, converged, tol, iters, reason, digits, history, last_step):
    x1, v1, v2, T = (to_decimal(p, digits) for p in params)
    return OrbitRecord(guess.masses, x1, v1, v2, T, guess.theta, guess.family,
                       delta_T=float(delta), converged=converged, tol=tol, iterations=iters,
                       reason=reason, digits=digits, history=history, last_step=float(last_step))


def correct_many(guesses, tol=1e-10, max_iter=50, cfg=None):
    """Newton-correct a list of guesses; returns one :class:`OrbitRecord` each.

    All guesses advance through the integrator as one batch, which pays off
    on the float backend.  Steps longer than ``TRUST_RADIUS`` are replaced
    by the Levenberg-Marquardt step of that length; close to the orbit the
    plain Newton step is taken.  Non-convergence is reported on the record
    (``converged=False`` with ``reason`` one of ``diverged``, ``max-iter``,
    ``collision``, ``near-collision``, ``bad-period``, ``non-finite``)
    instead of raising.
    """
    cfg = cfg or IntegratorConfig.standard()
    if tol < delta_floor(cfg):
        raise ConfigurationError(f"tol={tol:g} below what {cfg.digits} digits can resolve ({delta_floor(cfg):g})")
    digits = cfg.digits
    n = len(guesses)
    if n == 0:
        return []
    with working_precision(digits):
        params = xarray([[g.x1, g.v1, g.v2, g.T] for g in guesses], digits)
        masses = np.stack([g.masses.as_array(digits) for g in guesses])
        G = [relative_rotation_matrix(g.theta, g.masses, digits) for g in guesses]
        dirs = [tangent_directions(g.masses, digits) for g in guesses]
    results = [None] * n
    history = [[] for _ in range(n)]
    last_step = [0.0] * n
    growth = [0] * n
    active = list(range(n))
    for it in range(max_iter + 1):
        if not active:
            break
        idx = np.array(active)
        with working_precision(digits):
            y0 = np.stack([_state(params[i], masses[i], digits) for i in idx])
            tang = np.stack([dirs[i] for i in idx])
            res = propagate(y0, masses[idx], params[idx, 3].copy(), cfg, tangents=tang)
        still = []
        for r, i in enumerate(idx):
            g = guesses[i]
            if res.status[r] != OK:
                results[i] = _record(g, params[i], math.inf, False, tol, it, STATUS_NAMES[res.status[r]],
                                     digits, history[i], last_step[i])
                continue
            yT = res.states[r]
            with working_precision(digits):
                b = G[i] @ y0[r] - yT
                delta = float(_norm(b))
            history[i].append(delta)
            if not math.isfinite(delta):
                results[i] = _record(g, params[i], math.inf, False, tol, it, "non-finite", digits,
                                     history[i], last_step[i])
                continue
            if delta < tol:
                results[i] = _record(g, params[i], delta, True, tol, it, "", digits, history[i], last_step[i])
                continue
            if len(history[i]) > 1 and delta > history[i][-2]:
                growth[i] += 1
            else:
                growth[i] = 0
            if growth[i] >= DIVERGENCE_RUN:
                results[i] = _record(g, params[i], delta, False, tol, it, "diverged", digits,
                                     history[i], last_step[i])
                continue
            if it == max_iter:
                results[i] = _record(g, params[i], delta, False, tol, it, "max-iter", digits,
                                     history[i], last_step[i])
                continue
            with working_precision(digits):
                A = xarray(np.zeros((12, 4)), digits)
                A[:, :3] = res.tangents[r] - G[i] @ dirs[i]
                A[:, 3] = vector_field(yT, g.masses, digits)
                z = svd_least_norm_solve(A, b, digits, radius=TRUST_RADIUS)
                params[i] = params[i] + z
                last_step[i] = float(_norm(z))
            if not float(params[i, 3]) > 0:
                results[i] = _record(g, params[i], delta, False, tol, it + 1, "bad-period", digits,
                                     history[i], last_step[i])
                continue
            still.append(i)
        active = still
    return results


def _norm(v):
    return norm2(np.asarray(v).reshape(-1))


def _state(p, m, digits):
    """Collinear state from working-precision parameters (no Decimal round trip)."""
    x1, v1, v2 = p[0], p[1], p[2]
    m1, m2, m3 = m
    zero = xreal(0, digits)
    one = xreal(1, digits)
    v3 = -(m1 * v1 + m2 * v2) / m3
    return np.array([x1, zero, one, zero, zero, zero, zero, v1, zero, v2, zero, v3], dtype=np.asarray(p).dtype)


def newton_correct(guess, tol=1e-10, max_iter=50, cfg=None):
    """Correct one guess to ``delta_T < tol``; see :func:`correct_many`."""
    return correct_many([guess], tol, max_iter, cfg)[0]


def refine(rec, target_tol, cfg_high, max_iter=30):
    """Drive a converged orbit to ``delta_T < target_tol`` at higher precision.

    Raises
    ------
    ConfigurationError
        When ``cfg_high`` cannot resolve ``target_tol`` (checked before any
        integration).
    """
    if target_tol < delta_floor(cfg_high):
        raise ConfigurationError(
            f"{cfg_high.digits} digits cannot reach delta_T < {target_tol:g} (floor {delta_floor(cfg_high):g})")
    if cfg_high.tol > target_tol:
        raise ConfigurationError(f"integrator tol {cfg_high.tol:g} is looser than target {target_tol:g}")
    out = newton_correct(rec.guess(), target_tol, max_iter, cfg_high)
    out.stability, out.generation = rec.stability, rec.generation
    if out.converged and out.last_step > math.sqrt(target_tol) and out.iterations > 0:
        log.warning("refined parameters still moving: last step %.3g", out.last_step)
    return out


def closure(rec, cfg):
    """Independent re-integration of a record; returns its return distance."""
    digits = cfg.digits
    y0 = expand_ic(CollinearIC(rec.x1, rec.v1, rec.v2), rec.masses, digits)
    yT = integrate(y0, rec.masses, rec.T, cfg)
    return float(return_distance(y0, yT, rec.theta, rec.masses, digits))


def _lattice(lo, hi, step):
    lo, hi, step = _dec(lo), _dec(hi), _dec(step)
    if step <= 0:
        raise ValueError("lattice step must be positive")
    n = int(((hi - lo) / step).to_integral_value(rounding="ROUND_FLOOR"))
    return [lo + i * step for i in range(n + 1)]


def _bearing(state, masses_row):
    q = state[:, :6].reshape(-1, 3, 2)
    c = (masses_row[:, :, None] * q).sum(axis=1) / masses_row.sum(axis=1)[:, None]
    rel = q[:, 0] - c
    return np.arctan2(rel[:, 1], rel[:, 0])


def grid_search(masses, ranges, t_max, window, cfg=None, resolution=0.005, family="default"):
    """Scan a lattice of collinear initial conditions for near-returns.

    Parameters
    ----------
    masses : Masses
    ranges : dict
        ``{"x1": (lo, hi, step), "v1": (...), "v2": (...)}``, endpoints inclusive.
    t_max : float
        Length of each scan.
    window : float
        Emit a candidate when the aligned distance ``d(t)`` has a local
        minimum below this value.
    resolution : float
        Sampling interval of ``d(t)``.

    For each sample the frame angle is the change of body 1's bearing about
    the centre of mass since ``t = 0``.  Lattice points whose integration
    hits a (near) collision stop contributing at that time.  Returns a list
    of :class:`OrbitGuess` sorted by ``(x1, v1, v2, T)``.
    """
    cfg = cfg or IntegratorConfig.fast()
    if window <= 0:
        return []
    if t_max <= 0:
        raise ValueError("t_max must be positive")
    digits = cfg.digits
    pts = [(a, b, c) for a in _lattice(*ranges["x1"]) for b in _lattice(*ranges["v1"]) for c in _lattice(*ranges["v2"])]
    if not pts:
        return []
    y0 = np.stack([expand_ic(CollinearIC(*p), masses, digits) for p in pts])
    m = np.stack([masses.as_array(digits)] * len(pts))
    G0 = relative_rotation_matrix(0, masses, digits)
    nsamp = max(2, int(math.ceil(float(t_max) / resolution)))
    dt = float(t_max) / nsamp
    bear0 = np.array([float(v) for v in _bearing(y0, m)]) if y0.dtype == object else _bearing(y0, m)
    m_f = np.array(m, dtype=float)
    y0_f = np.array(y0, dtype=float)
    y = y0.copy()
    alive = np.ones(len(pts), dtype=bool)
    dprev2 = np.full(len(pts), np.inf)
    dprev = np.zeros(len(pts))
    theta_prev = np.zeros(len(pts))
    out = []
    step = xarray([dt], digits)[0]
    for s in range(1, nsamp + 1):
        idx = np.nonzero(alive)[0]
        if idx.size == 0:
            break
        res = propagate(y[idx], m[idx], xarray([dt] * idx.size, digits), cfg)
        y[idx] = res.states
        dead = res.status != OK
        alive[idx[dead]] = False
        yf = np.array(y, dtype=float)
        theta = _bearing(yf, m_f) - bear0
        theta = (theta + np.pi) % (2 * np.pi) - np.pi
        d = np.full(len(pts), np.inf)
        for r in np.nonzero(alive)[0]:
            c, sn = math.cos(theta[r]), math.sin(theta[r])
            Gr = _rotation_about_com(c, sn, m_f[r])
            d[r] = np.linalg.norm(yf[r] - Gr @ y0_f[r])
        # local minimum at the previous sample
        hit = alive & (dprev < dprev2) & (dprev <= d) & (dprev < window) & (s > 1)
        for r in np.nonzero(hit)[0]:
            a, b, c = pts[r]
            out.append(OrbitGuess(masses, a, b, c, Decimal(repr(round((s - 1) * dt, 12))),
                                  Decimal(repr(round(float(theta_prev[r]), 12))), family))
        dprev2, dprev, theta_prev = dprev, d, theta
    out.sort(key=lambda g: (g.x1, g.v1, g.v2, g.T))
    return out


def _rotation_about_com(c, s, m):
    R = np.array([[c, -s], [s, c]])
    P = np.kron(np.eye(6), R)
    w = m / m.sum()
    Cm = np.kron(np.outer(np.ones(3), w), np.eye(2))
    P[:6, :6] = P[:6, :6] + (np.eye(6) - P[:6, :6]) @ Cm
    return P


def merge_sorted(records):
    """Deterministic merge order for results computed independently."""
    return sorted(records, key=lambda r: (r.masses.m1, r.masses.m2, r.T))
