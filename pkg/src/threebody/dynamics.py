"""Planar three-body vector field, collinear initial conditions and frame rotations.

States are 12-vectors ordered ``(x1, y1, x2, y2, x3, y3, vx1, vy1, vx2, vy2,
vx3, vy3)`` with G = 1.  Relative periodicity is measured against a rotation
of the initial state about the centre of mass, which is stationary because
the collinear initial conditions carry zero total momentum.
"""

from dataclasses import dataclass
from decimal import Decimal

import numpy as np

from .errors import CollisionError
from .numerics import all_finite, digits_of, norm2, working_precision, xarray, xcos, xreal, xsin, xsqrt

PAIRS = ((0, 1), (0, 2), (1, 2))


def _dec(v):
    return v if isinstance(v, Decimal) else Decimal(str(v))


@dataclass(frozen=True)
class Masses:
    """Dimensionless body masses, stored as exact decimals."""

    m1: Decimal
    m2: Decimal
    m3: Decimal = Decimal(1)

    def __post_init__(self):
        for name in ("m1", "m2", "m3"):
            value = _dec(getattr(self, name))
            if value < 0 or not value.is_finite():
                raise ValueError(f"mass {name} must be finite and non-negative, got {value}")
            object.__setattr__(self, name, value)

    def as_array(self, digits):
        return xarray([self.m1, self.m2, self.m3], digits)

    def key(self):
        return (self.m1, self.m2)

    def __str__(self):
        return f"({self.m1}, {self.m2}, {self.m3})"


@dataclass(frozen=True)
class CollinearIC:
    """Free parameters of the collinear start: body-1 position and two y-velocities."""

    x1: Decimal
    v1: Decimal
    v2: Decimal

    def __post_init__(self):
        for name in ("x1", "v1", "v2"):
            object.__setattr__(self, name, _dec(getattr(self, name)))


def _masses_array(masses, digits):
    if isinstance(masses, Masses):
        return masses.as_array(digits)
    return xarray(list(masses), digits)


def _threshold(digits):
    # squared-distance floor: distance < 10**(-digits/2)
    return 10.0 ** (-digits)


def accelerations(state, masses, digits=None):
    """Gravitational accelerations ``(ax1, ay1, ax2, ay2, ax3, ay3)``.

    Raises
    ------
    CollisionError
        If any pairwise distance is below ``10**(-digits/2)``.
    """
    state = np.asarray(state)
    if digits is None:
        digits = digits_of(state)
    with working_precision(digits):
        m = _masses_array(masses, digits)
        q = state[:6].reshape(3, 2)
        acc = xarray(np.zeros((3, 2)), digits)
        for i, j in PAIRS:
            d = q[j] - q[i]
            r2 = d[0] * d[0] + d[1] * d[1]
            if float(r2) < _threshold(digits):
                raise CollisionError(f"bodies {i + 1} and {j + 1} coincide", pair=(i, j))
            inv3 = 1 / (r2 * xsqrt(r2))
            acc[i] = acc[i] + m[j] * inv3 * d
            acc[j] = acc[j] - m[i] * inv3 * d
        return acc.reshape(6)


def vector_field(state, masses, digits=None):
    """Right-hand side ``f(x)`` of the first-order system."""
    state = np.asarray(state)
    return np.concatenate([state[6:], accelerations(state, masses, digits)])


def expand_ic(ic, masses, digits):
    """Full 12-component state for a collinear initial condition.

    Bodies start at ``(x1, 0)``, ``(1, 0)`` and ``(0, 0)`` with velocities
    perpendicular to the line; body 3's velocity cancels the total momentum.
    """
    if masses.m3 <= 0:
        raise ValueError("m3 must be positive to fix the momentum of body 3")
    with working_precision(digits):
        m1, m2, m3 = masses.as_array(digits)
        x1, v1, v2 = (xreal(v, digits) for v in (ic.x1, ic.v1, ic.v2))
        zero, one = xreal(0, digits), xreal(1, digits)
        v3 = -(m1 * v1 + m2 * v2) / m3
        return np.array([x1, zero, one, zero, zero, zero, zero, v1, zero, v2, zero, v3],
                        dtype=object if not isinstance(x1, float) else float)


def _rot2(theta, digits):
    with working_precision(digits):
        th = xreal(repr(float(theta)) if isinstance(theta, (float, np.floating)) else theta, digits)
        c, s = xcos(th), xsin(th)
        return np.array([[c, -s], [s, c]], dtype=object if not isinstance(c, float) else float)


def rotation_matrix(theta, digits):
    """12x12 block rotation ``P(theta)`` acting on every position and velocity pair."""
    R = _rot2(theta, digits)
    P = xarray(np.zeros((12, 12)), digits)
    for b in range(6):
        P[2 * b:2 * b + 2, 2 * b:2 * b + 2] = R
    return P


def rotate(theta, state, digits=None):
    """Rotate every position and velocity pair by ``theta`` about the origin."""
    state = np.asarray(state)
    if digits is None:
        digits = digits_of(state)
    R = _rot2(theta, digits)
    with working_precision(digits):
        pairs = state.reshape(6, 2)
        return (pairs @ R.T).reshape(12)


def centre_of_mass(state, masses, digits=None):
    state = np.asarray(state)
    if digits is None:
        digits = digits_of(state)
    with working_precision(digits):
        m = _masses_array(masses, digits)
        q = state[:6].reshape(3, 2)
        return (m[:, None] * q).sum(axis=0) / m.sum()


def relative_rotation_matrix(theta, masses, digits):
    """12x12 matrix of the rotation by ``theta`` about the centre of mass.

    The map ``y -> R (q - c(y)) + c(y)`` on positions (velocities rotate
    about the origin) is linear in ``y`` because ``c`` is a mass-weighted
    mean, so it is returned as a matrix.
    """
    P = rotation_matrix(theta, digits)
    with working_precision(digits):
        m = _masses_array(masses, digits)
        total = m.sum()
        # C maps positions to the stacked centre of mass (c, c, c)
        C = xarray(np.zeros((6, 6)), digits)
        for blk in range(3):
            for k in range(3):
                for a in range(2):
                    C[2 * blk + a, 2 * k + a] = m[k] / total
        Ppos = P[:6, :6]
        eye = xarray(np.eye(6), digits)
        G = P.copy()
        G[:6, :6] = Ppos + (eye - Ppos) @ C
        return G


def rotate_about_com(theta, state, masses, digits=None):
    state = np.asarray(state)
    if digits is None:
        digits = digits_of(state)
    G = relative_rotation_matrix(theta, masses, digits)
    with working_precision(digits):
        return G @ state


def conserved(state, masses, digits=None):
    """Energy, linear momentum and angular momentum about the origin.

    Returns a dict with keys ``E``, ``px``, ``py`` and ``L``.
    """
    state = np.asarray(state)
    if digits is None:
        digits = digits_of(state)
    with working_precision(digits):
        m = _masses_array(masses, digits)
        q = state[:6].reshape(3, 2)
        p = state[6:].reshape(3, 2)
        kinetic = (m * (p * p).sum(axis=1)).sum() / 2
        potential = xreal(0, digits)
        for i, j in PAIRS:
            d = q[j] - q[i]
            r2 = d[0] * d[0] + d[1] * d[1]
            if float(r2) < _threshold(digits):
                raise CollisionError(f"bodies {i + 1} and {j + 1} coincide", pair=(i, j))
            potential = potential - m[i] * m[j] / xsqrt(r2)
        mom = (m[:, None] * p).sum(axis=0)
        L = (m * (q[:, 0] * p[:, 1] - q[:, 1] * p[:, 0])).sum()
        return {"E": kinetic + potential, "px": mom[0], "py": mom[1], "L": L}


def return_distance(y0, yT, theta, masses=None, digits=None):
    """Return distance ``||yT - P(theta) y0||``.

    With ``masses`` the rotation is taken about the centre of mass of ``y0``,
    which is the frame in which the collinear orbits close; without masses
    it is about the origin.
    """
    y0 = np.asarray(y0)
    yT = np.asarray(yT)
    if digits is None:
        digits = max(digits_of(y0), digits_of(yT))
    if not (all_finite(y0) and all_finite(yT)):
        raise ValueError("non-finite state in return distance")
    if masses is None:
        target = rotate(theta, y0, digits)
    else:
        target = rotate_about_com(theta, y0, masses, digits)
    with working_precision(digits):
        return norm2(yT - target)
