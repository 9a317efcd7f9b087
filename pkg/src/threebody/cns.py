"""Clean numerical simulation: high-order Taylor stepping at configurable precision.

Taylor coefficients of the three-body flow are generated by recurrences on
auxiliary series (pairwise displacements ``d``, squared distances ``s``,
``w = s**(-3/2)``), so each step costs O(order**2) operations and no
symbolic differentiation is needed.  The same recurrences, differentiated,
propagate tangent vectors of the variational system ``dPhi/dt = J(x) Phi``.

Every routine works on a leading batch axis.  With multi-precision arrays
the batch is a single orbit; on the float backend many candidates advance
together with independent step sizes.
"""

import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import CollisionError, ConfigurationError, IntegrationError, NearCollisionError
from .numerics import all_finite, is_float_backend, working_precision, xarray, xreal, xsqrt

_I = np.array([0, 0, 1])
_J = np.array([1, 2, 2])

OK, COLLISION, NEAR_COLLISION, NON_FINITE, STEP_LIMIT = range(5)
STATUS_NAMES = {OK: "ok", COLLISION: "collision", NEAR_COLLISION: "near-collision",
                NON_FINITE: "non-finite", STEP_LIMIT: "step-limit"}


@dataclass(frozen=True)
class IntegratorConfig:
    """Taylor order, working digits and local error tolerance of one run.

    ``tol`` bounds the estimated local truncation error of each step and
    must sit above the round-off floor ``10**(5 - digits)``.
    """

    order: int = 25
    digits: int = 40
    tol: float = 1e-30
    max_step: float = 0.5
    dense_samples: int = None
    max_steps: int = 200_000

    def __post_init__(self):
        if self.order < 4:
            raise ConfigurationError(f"Taylor order must be >= 4, got {self.order}")
        if self.digits < 1:
            raise ConfigurationError("digits must be positive")
        if not self.tol > 0:
            raise ConfigurationError("tol must be positive")
        if self.tol < self.tol_floor:
            raise ConfigurationError(
                f"tol={self.tol:g} is below the round-off floor {self.tol_floor:g} for {self.digits} digits")
        if self.max_step <= 0:
            raise ConfigurationError("max_step must be positive")

    @classmethod
    def standard(cls):
        """Setting for return distances down to 1e-10 and beyond."""
        return cls(order=25, digits=40, tol=1e-30)

    @classmethod
    def deep(cls):
        """Setting for refinement toward 1e-60."""
        return cls(order=70, digits=100, tol=1e-80)

    @classmethod
    def fast(cls):
        """Double precision, used for wide desk-scale candidate sweeps."""
        return cls(order=20, digits=15, tol=1e-16)

    @classmethod
    def for_digits(cls, digits, order=None):
        """Preset scaled to ``digits``: tol = 10**(-3P/4), order ~ 0.7 P."""
        if is_float_backend(digits):
            base = cls.fast()
            return base if order is None else base.with_(order=order)
        if order is None:
            order = max(20, round(0.7 * digits))
        return cls(order=order, digits=digits, tol=10.0 ** (-(3 * digits // 4)))

    def with_(self, **kw):
        return replace(self, **kw)

    @property
    def tol_floor(self):
        # Double precision gets a dedicated floor: its Taylor steps stay
        # accurate to ~1e-14 down to tol near machine epsilon.
        if is_float_backend(self.digits):
            return 1e-17
        return 10.0 ** (5 - self.digits)

    @property
    def min_step(self):
        return 10.0 ** (2 - self.digits)


@dataclass
class Trajectory:
    """Dense samples ``states[i]`` at ``times[i]``."""

    times: np.ndarray
    states: np.ndarray


@dataclass
class BatchResult:
    states: np.ndarray
    tangents: np.ndarray
    status: np.ndarray
    steps: np.ndarray


def _weights(values, dtype):
    if dtype == object:
        return np.array([int(v) for v in values], dtype=object)
    return np.asarray(values, dtype=float)


def taylor_series(q0, p0, m, order, dq0=None, dp0=None):
    """Taylor coefficients of positions, velocities and optional tangents.

    Parameters
    ----------
    q0, p0 : (B, 3, 2) arrays
        Positions and velocities at the expansion point.
    m : (B, 3) array
        Masses per batch row.
    order : int
        Highest coefficient index kept.
    dq0, dp0 : (B, 3, 2, C) arrays, optional
        Tangent vectors (columns of the variational solution).

    Returns
    -------
    Q, P : (order + 1, B, 3, 2) arrays
    dQ, dP : (order + 1, B, 3, 2, C) arrays or None
    """
    K = order + 1
    dtype = q0.dtype
    B = q0.shape[0]
    Q = np.zeros((K, B, 3, 2), dtype)
    P = np.zeros((K, B, 3, 2), dtype)
    D = np.zeros((K, B, 3, 2), dtype)
    S = np.zeros((K, B, 3), dtype)
    W = np.zeros((K, B, 3), dtype)
    Q[0], P[0] = q0, p0
    mi, mj = m[:, _I], m[:, _J]
    m0, m1, m2 = m[:, 0, None], m[:, 1, None], m[:, 2, None]
    tangent = dq0 is not None
    if tangent:
        C = dq0.shape[-1]
        dQ = np.zeros((K, B, 3, 2, C), dtype)
        dP = np.zeros((K, B, 3, 2, C), dtype)
        dD = np.zeros((K, B, 3, 2, C), dtype)
        dS = np.zeros((K, B, 3, C), dtype)
        dW = np.zeros((K, B, 3, C), dtype)
        U = np.zeros((K, B, 3), dtype)
        dQ[0], dP[0] = dq0, dp0
        mb0, mb1, mb2 = (m[:, c, None, None] for c in range(3))
    for k in range(order):
        D[k] = Q[k][:, _J] - Q[k][:, _I]
        S[k] = np.sum(D[:k + 1] * D[k::-1], axis=(0, 3))
        if k == 0:
            W[0] = 1 / (S[0] * xsqrt(S[0]))
            if tangent:
                U[0] = W[0] / S[0]
        else:
            j = _weights(range(1, k + 1), dtype)[:, None, None]
            # w = s**(-3/2):  2 k s0 w_k = -sum_j (j + 2k) s_j w_{k-j}
            W[k] = -np.sum((j + 2 * k) * S[1:k + 1] * W[k - 1::-1], axis=0) / (2 * k * S[0])
            if tangent:
                # u = s**(-5/2):  2 k s0 u_k = -sum_j (3j + 2k) s_j u_{k-j}
                U[k] = -np.sum((3 * j + 2 * k) * S[1:k + 1] * U[k - 1::-1], axis=0) / (2 * k * S[0])
        G = np.sum(D[:k + 1] * W[k::-1][..., None], axis=0)
        A = np.empty_like(G)
        A[:, 0] = m1 * G[:, 0] + m2 * G[:, 1]
        A[:, 1] = m2 * G[:, 2] - m0 * G[:, 0]
        A[:, 2] = -(m0 * G[:, 1] + m1 * G[:, 2])
        Q[k + 1] = P[k] / (k + 1)
        P[k + 1] = A / (k + 1)
        if tangent:
            dD[k] = dQ[k][:, _J] - dQ[k][:, _I]
            dS[k] = 2 * np.sum(D[:k + 1][..., None] * dD[k::-1], axis=(0, 3))
            dW[k] = -3 * np.sum(U[:k + 1][..., None] * dS[k::-1], axis=0) / 2
            dG = (np.sum(dD[:k + 1] * W[k::-1][..., None, None], axis=0)
                  + np.sum(D[:k + 1][..., None] * dW[k::-1][:, :, :, None, :], axis=0))
            dA = np.empty_like(dG)
            dA[:, 0] = mb1 * dG[:, 0] + mb2 * dG[:, 1]
            dA[:, 1] = mb2 * dG[:, 2] - mb0 * dG[:, 0]
            dA[:, 2] = -(mb0 * dG[:, 1] + mb1 * dG[:, 2])
            dQ[k + 1] = dP[k] / (k + 1)
            dP[k + 1] = dA / (k + 1)
    if tangent:
        return Q, P, dQ, dP
    return Q, P, None, None


def _horner(X, h):
    """Evaluate the series ``X`` (coefficient axis first) at per-row steps ``h``."""
    hb = h.reshape((-1,) + (1,) * (X.ndim - 2))
    acc = X[-1]
    for k in range(X.shape[0] - 2, -1, -1):
        acc = acc * hb + X[k]
    return acc


def _coef_norms(Q, P, k):
    mags = np.abs(np.concatenate([Q[k].reshape(Q.shape[1], -1), P[k].reshape(P.shape[1], -1)], axis=1))
    if mags.dtype == object:
        return np.array([float(max(row)) for row in mags])
    return mags.max(axis=1)


def step_sizes(Q, P, cfg):
    """Per-row step from the two highest coefficients.

    ``h = min(max_step, (tol/|c_M|)**(1/M), (tol/|c_{M-1}|)**(1/(M-1)))``.
    """
    M = cfg.order
    h = np.full(Q.shape[1], cfg.max_step)
    for k in (M, M - 1):
        n = _coef_norms(Q, P, k)
        with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
            cand = np.where(n > 0, np.exp((math.log(cfg.tol) - np.log(np.where(n > 0, n, 1.0))) / k), np.inf)
        h = np.minimum(h, cand)
    return h


def _min_sq_distance(y):
    q = y[:, :6].reshape(-1, 3, 2)
    d = q[:, _J] - q[:, _I]
    s = (d * d).sum(axis=2)
    if s.dtype == object:
        return np.array([float(min(row)) for row in s])
    return s.min(axis=1)


def propagate(y0, m, t_end, cfg, tangents=None, sample_times=None):
    """Advance a batch of states to per-row end times.

    Parameters
    ----------
    y0 : (B, 12) array at the configured precision
    m : (B, 3) array of masses
    t_end : (B,) array of end times (>= 0)
    tangents : (B, 12, C) array, optional
        Initial tangent vectors, advanced with the variational system.
    sample_times : (B, S) array, optional
        Sorted times in ``[0, t_end]`` at which to record dense output.

    Returns
    -------
    BatchResult, plus the (B, S, 12) dense samples when requested.
    Rows that fail keep their last good state and get a non-zero status.
    """
    digits = cfg.digits
    B = y0.shape[0]
    y = y0.copy()
    tan = None if tangents is None else tangents.copy()
    t = xarray(np.zeros(B), digits)
    status = np.zeros(B, dtype=int)
    steps = np.zeros(B, dtype=int)
    t_end_f = np.array([float(v) for v in t_end])
    if np.any(t_end_f < 0):
        raise ValueError("end time must be non-negative")
    active = t_end_f > 0
    dense = None
    if sample_times is not None:
        dense = np.empty((B, sample_times.shape[1], 12), dtype=y.dtype)
        nxt = np.zeros(B, dtype=int)
        st_f = np.array([[float(v) for v in row] for row in sample_times])
        for b in range(B):
            while nxt[b] < st_f.shape[1] and st_f[b, nxt[b]] <= 0:
                dense[b, nxt[b]] = y[b]
                nxt[b] += 1
    thr = 10.0 ** (-digits)
    # runaway float rows overflow quietly; they are caught below as NON_FINITE
    with working_precision(digits), np.errstate(over="ignore", invalid="ignore"):
        while np.any(active):
            idx = np.nonzero(active)[0]
            hit = _min_sq_distance(y[idx]) < thr
            if np.any(hit):
                status[idx[hit]] = COLLISION
                active[idx[hit]] = False
                idx = idx[~hit]
                if idx.size == 0:
                    break
            yb = y[idx]
            q0 = yb[:, :6].reshape(-1, 3, 2)
            p0 = yb[:, 6:].reshape(-1, 3, 2)
            if tan is None:
                Q, P, dQ, dP = taylor_series(q0, p0, m[idx], cfg.order)
            else:
                C = tan.shape[2]
                tb = tan[idx]
                Q, P, dQ, dP = taylor_series(q0, p0, m[idx], cfg.order,
                                             tb[:, :6].reshape(-1, 3, 2, C), tb[:, 6:].reshape(-1, 3, 2, C))
            hf = step_sizes(Q, P, cfg)
            small = ~(hf >= cfg.min_step)
            remaining = t_end[idx] - t[idx]
            rem_f = np.array([float(v) for v in remaining])
            last = hf >= rem_f
            small &= ~last
            if np.any(small):
                status[idx[small]] = NEAR_COLLISION
                active[idx[small]] = False
            ok = ~small
            if not np.any(ok):
                continue
            sel = idx[ok]
            h = xarray(np.where(last[ok], 0.0, hf[ok]), digits)
            h[last[ok]] = remaining[ok][last[ok]]
            Qs, Ps = Q[:, ok], P[:, ok]
            if dense is not None:
                t_new_f = np.array([float(v) for v in t[sel] + h])
                for r, b in enumerate(sel):
                    while nxt[b] < st_f.shape[1] and (st_f[b, nxt[b]] <= t_new_f[r] or (last[ok][r])):
                        tau = sample_times[b, nxt[b]] - t[b]
                        hh = xarray([0.0], digits)
                        hh[0] = tau
                        qs = _horner(Qs[:, r:r + 1], hh)
                        ps = _horner(Ps[:, r:r + 1], hh)
                        dense[b, nxt[b]] = np.concatenate([qs.reshape(6), ps.reshape(6)])
                        nxt[b] += 1
            qn = _horner(Qs, h).reshape(-1, 6)
            pn = _horner(Ps, h).reshape(-1, 6)
            y[sel] = np.concatenate([qn, pn], axis=1)
            if tan is not None:
                C = tan.shape[2]
                dqn = _horner(dQ[:, ok], h).reshape(-1, 6, C)
                dpn = _horner(dP[:, ok], h).reshape(-1, 6, C)
                tan[sel] = np.concatenate([dqn, dpn], axis=1)
            t[sel] = t[sel] + h
            done = last[ok]
            t[sel[done]] = t_end[sel[done]]
            active[sel[done]] = False
            steps[sel] += 1
            if is_float_backend(digits):
                bad = ~np.all(np.isfinite(y[sel]), axis=1)
            else:
                bad = np.array([not all_finite(y[b]) for b in sel])
            if np.any(bad):
                status[sel[bad]] = NON_FINITE
                active[sel[bad]] = False
            over = steps >= cfg.max_steps
            if np.any(over & active):
                status[over & active] = STEP_LIMIT
                active &= ~over
    result = BatchResult(states=y, tangents=tan, status=status, steps=steps)
    if dense is not None:
        return result, dense
    return result


def _raise_for(code, where=""):
    if code == COLLISION:
        raise CollisionError(f"collision{where}")
    if code == NEAR_COLLISION:
        raise NearCollisionError(f"step size underflow (near collision){where}")
    if code == NON_FINITE:
        raise IntegrationError(f"non-finite state{where}")
    if code == STEP_LIMIT:
        raise IntegrationError(f"step limit reached{where}")


def _single(state, masses, cfg):
    from .dynamics import Masses
    state = xarray(list(np.asarray(state).ravel()), cfg.digits).reshape(1, 12)
    if isinstance(masses, Masses):
        m = masses.as_array(cfg.digits).reshape(1, 3)
    else:
        m = xarray(list(masses), cfg.digits).reshape(1, 3)
    return state, m


def _time(value, digits):
    if isinstance(value, (float, np.floating)):
        value = repr(float(value))
    return xreal(value, digits)


def taylor_step(state, masses, cfg):
    """One adaptive Taylor step from ``state``; returns ``(new_state, h)``."""
    y, m = _single(state, masses, cfg)
    if _min_sq_distance(y)[0] < 10.0 ** (-cfg.digits):
        raise CollisionError("collision at step start")
    with working_precision(cfg.digits):
        Q, P, _, _ = taylor_series(y[:, :6].reshape(1, 3, 2), y[:, 6:].reshape(1, 3, 2), m, cfg.order)
        hf = step_sizes(Q, P, cfg)
        if not hf[0] >= cfg.min_step:
            raise NearCollisionError("step size underflow (near collision)")
        h = xarray([hf[0]], cfg.digits)
        out = np.concatenate([_horner(Q, h).reshape(6), _horner(P, h).reshape(6)])
    return out, h[0]


def integrate(ic, masses, t_end, cfg, samples=None):
    """State at ``t_end``; the last step lands exactly on ``t_end``.

    With ``samples`` (or ``cfg.dense_samples``) also returns a
    :class:`Trajectory` at that many uniform times over ``[0, t_end]``.
    """
    samples = samples if samples is not None else cfg.dense_samples
    y, m = _single(ic, masses, cfg)
    te = xarray([0.0], cfg.digits)
    te[0] = _time(t_end, cfg.digits)
    if samples is not None:
        if samples < 1:
            raise ValueError("samples must be >= 1")
        with working_precision(cfg.digits):
            if samples == 1:
                times = xarray([0.0], cfg.digits)
            else:
                times = np.array([te[0] * i / (samples - 1) for i in range(samples)], dtype=y.dtype)
        res, dense = propagate(y, m, te, cfg, sample_times=times.reshape(1, -1))
        _raise_for(res.status[0])
        return res.states[0], Trajectory(times=times, states=dense[0])
    res = propagate(y, m, te, cfg)
    _raise_for(res.status[0])
    return res.states[0]


def integrate_variational(ic, masses, t_end, cfg, tangent=None):
    """State and variational solution at ``t_end``.

    Returns ``(state, Phi)`` where ``Phi`` is the 12x12 monodromy-type matrix
    ``dx(t_end)/dy``; with ``tangent`` (12 x C) the product ``Phi @ tangent``
    is propagated instead, which is cheaper when only a few directions are
    needed.
    """
    y, m = _single(ic, masses, cfg)
    if tangent is None:
        tangent = np.eye(12)
    V = xarray(np.asarray(tangent), cfg.digits).reshape(1, 12, -1)
    te = xarray([0.0], cfg.digits)
    te[0] = _time(t_end, cfg.digits)
    res = propagate(y, m, te, cfg, tangents=V)
    _raise_for(res.status[0])
    return res.states[0], res.tangents[0]


def integrate_batch(states, masses, t_end, cfg, tangents=None):
    """Advance many states at once (float backend recommended).

    ``states`` is (B, 12), ``masses`` (B, 3), ``t_end`` (B,).  Failed rows are
    reported through ``BatchResult.status`` instead of raising.
    """
    y = xarray(np.asarray(states), cfg.digits).reshape(-1, 12)
    m = xarray(np.asarray(masses), cfg.digits).reshape(-1, 3)
    te = xarray(np.asarray(t_end), cfg.digits).reshape(-1)
    tg = None if tangents is None else xarray(np.asarray(tangents), cfg.digits)
    return propagate(y, m, te, cfg, tangents=tg)
