"""Linear stability of relative periodic orbits from the rotated monodromy matrix."""

from dataclasses import dataclass

import mpmath
import numpy as np

from .cns import OK, IntegratorConfig, integrate_batch, integrate_variational
from .finder import correct_many, refine
from .dynamics import expand_ic, relative_rotation_matrix
from .numerics import determinant, digits_of, eigenvalues, is_float_backend, working_precision

DEFAULT_EPS = 1e-7
# double precision leaves the split unit multipliers near sqrt(1e-13); see screen_stability
SCREEN_EPS = 1e-4
POLISH_TOL = 1e-12
# the label is ambiguous when it would flip for a tolerance within a decade of eps
AMBIGUOUS_DECADE = 10.0


@dataclass
class StabilityReport:
    """Spectrum summary of a return map.

    ``eigenvalues`` are sorted by modulus, largest first.  ``ambiguous`` is
    set when the largest excess falls inside the band where the label would
    flip for some tolerance between ``eps / 10`` and ``10 * eps`` (1e-8 to
    1e-6 at the default tolerance).
    """

    eigenvalues: list
    max_modulus_excess: float
    label: str
    eps: float
    ambiguous: bool = False

    @property
    def stable(self):
        return self.label == "stable"


def effective_monodromy(rec, cfg=None):
    """Return map linearisation ``G(-theta) @ Phi(T)`` in the rotating frame.

    ``G`` is the rotation about the centre of mass that closes the orbit, so
    a relative periodic orbit is a fixed point of ``y -> G(-theta) x(T, y)``.
    """
    cfg = cfg or IntegratorConfig.standard()
    digits = cfg.digits
    y0 = expand_ic(rec.guess().ic, rec.masses, digits)
    _, Phi = integrate_variational(y0, rec.masses, rec.T, cfg)
    Ginv = relative_rotation_matrix(-rec.theta, rec.masses, digits)
    with working_precision(digits):
        return Ginv @ Phi


def _excess(z):
    # |z| - 1 at the eigenvalue's own precision before rounding to float
    if isinstance(z, mpmath.mpc):
        return float(abs(z) - 1)
    return abs(complex(z)) - 1.0


def classify_stability(M, eps=DEFAULT_EPS, digits=None):
    """Label a return map stable when every eigenvalue has modulus ``<= 1 + eps``."""
    M = np.asarray(M)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError(f"monodromy must be square, got shape {M.shape}")
    lam = list(eigenvalues(M, digits))
    prec = digits_of(M) if digits is None else digits
    with mpmath.workdps(max(prec, 15) + 5):
        lam.sort(key=lambda z: -abs(z))
        excess = max(_excess(z) for z in lam)
    lo, hi = eps / AMBIGUOUS_DECADE, eps * AMBIGUOUS_DECADE
    return StabilityReport(
        eigenvalues=lam,
        max_modulus_excess=excess,
        label="stable" if excess <= eps else "unstable",
        eps=eps,
        ambiguous=lo <= excess <= hi,
    )


def reciprocal_pairing_error(eigs):
    """Largest relative mismatch of the pairing ``lambda <-> 1/lambda``.

    Eigenvalues are matched greedily to the closest unused reciprocal; for a
    symplectic map the result is at the level of the eigenvalue accuracy.
    Multiple-precision eigenvalues are compared at their own precision.
    """
    vals = list(eigs)
    # mpmath rounds to its global precision, so work at the widest mantissa present
    bits = max([_mantissa_bits(z) for z in vals] + [53])
    unused = list(range(len(vals)))
    worst = 0.0
    with mpmath.workprec(bits + 10):
        for z in vals:
            if z == 0:
                return float("inf")
            target = 1 / z
            j = min(unused, key=lambda k: abs(vals[k] - target))
            unused.remove(j)
            worst = max(worst, float(abs(vals[j] - target) / abs(target)))
    return worst


def _mantissa_bits(z):
    if isinstance(z, mpmath.mpc):
        return max(z.real._mpf_[3], z.imag._mpf_[3])
    return 53


def monodromy_determinant(M, digits=None):
    return determinant(M, digits)


def stability_of(rec, cfg=None, eps=DEFAULT_EPS, closure_tol=None):
    """Refine, integrate and classify a record; returns ``(report, M_eff, rec)``.

    The unit eigenvalues of the return map sit in Jordan blocks, so an
    orbit closed only to ``delta_T`` splits them by about ``sqrt(delta_T)``.
    A corrector tolerance of 1e-10 would then fake an excess near 1e-5, far
    above ``eps``.  The orbit is therefore first refined to ``closure_tol``
    (default ``10**(-digits/2)``) at the working precision.  The float
    backend cannot refine that far and classifies the record as given.
    """
    cfg = cfg or IntegratorConfig.standard()
    digits = cfg.digits
    if closure_tol is None:
        closure_tol = 10.0 ** (-(digits // 2))
    if not is_float_backend(digits) and rec.delta_T >= closure_tol:
        tight = refine(rec, closure_tol, cfg)
        if tight.converged:
            rec = tight
    M = effective_monodromy(rec, cfg)
    return classify_stability(M, eps, digits), M, rec


def screen_stability(records, cfg=None, eps=SCREEN_EPS):
    """Label many orbits at once from double-precision return maps.

    Each record is first polished to ``delta_T < 1e-12`` (kept as is if
    that fails), then all are integrated with the full 12x12 variational
    system in a single float batch.  Without high-precision refinement the unit multipliers split by
    about ``sqrt(delta_T)`` plus round-off, so the tolerance is much looser
    than :data:`DEFAULT_EPS`; genuine instabilities of the orbits met in
    practice sit orders of magnitude above it.  Returns one
    :class:`StabilityReport` per record, or ``None`` where integration
    failed.
    """
    cfg = cfg or IntegratorConfig.fast()
    if not is_float_backend(cfg.digits):
        raise ValueError("screen_stability runs on the float backend; use stability_of at higher precision")
    if not records:
        return []
    # one or two extra Newton steps to the float floor shrink the unit-multiplier split
    polished = correct_many([r.guess() for r in records], POLISH_TOL, 6, cfg)
    records = [p if p.converged else r for p, r in zip(polished, records)]
    y0 = np.stack([expand_ic(r.guess().ic, r.masses, cfg.digits) for r in records])
    m = np.array([[float(r.masses.m1), float(r.masses.m2), float(r.masses.m3)] for r in records])
    T = np.array([float(r.T) for r in records])
    res = integrate_batch(y0, m, T, cfg, tangents=np.repeat(np.eye(12)[None], len(records), axis=0))
    out = []
    for r, status, Phi in zip(records, res.status, res.tangents):
        if status != OK:
            out.append(None)
            continue
        G = relative_rotation_matrix(-r.theta, r.masses, cfg.digits)
        out.append(classify_stability(G @ Phi, eps, cfg.digits))
    return out
