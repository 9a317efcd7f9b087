"""Configurable-precision reals and the two dense linear-algebra kernels.

A real number at ``digits`` significant decimal digits is represented by a
plain ``float`` when ``digits <= FLOAT_DIGITS`` and by a ``gmpy2.mpfr`` with
enough mantissa bits otherwise.  Arrays of them are numpy arrays of dtype
``float64`` or ``object`` respectively, so the same vectorised code runs on
either backend.  Arithmetic on ``mpfr`` operands rounds to the precision of
the active gmpy2 context, which :func:`working_precision` sets for the
duration of a run.
"""

import math
import warnings
from contextlib import contextmanager
from decimal import Decimal, localcontext

import gmpy2
import mpmath
import numpy as np
from gmpy2 import mpfr

FLOAT_DIGITS = 15
GUARD_BITS = 10
LOG2_10 = math.log2(10.0)


class DegenerateSystemWarning(UserWarning):
    """Least-norm solve met a rank-zero matrix."""


def bits_for(digits):
    """Mantissa bits that carry ``digits`` decimal digits plus guard bits."""
    return int(math.ceil(digits * LOG2_10)) + GUARD_BITS


def is_float_backend(digits):
    return digits <= FLOAT_DIGITS


@contextmanager
def working_precision(digits):
    """Set the gmpy2 rounding precision for a block of arithmetic."""
    if is_float_backend(digits):
        yield
        return
    with gmpy2.context(gmpy2.get_context(), precision=bits_for(digits)):
        yield


def xreal(value, digits):
    """Convert ``value`` to a real at ``digits`` decimal digits.

    Strings and ``Decimal`` values are parsed directly so that short decimal
    literals such as ``"0.95"`` are rounded once, at the target precision.
    """
    if isinstance(value, Decimal):
        value = str(value)
    elif isinstance(value, mpmath.mpf):
        value = from_mpmath(value, digits)
    if is_float_backend(digits):
        return float(value)
    with gmpy2.context(gmpy2.get_context(), precision=bits_for(digits)):
        return mpfr(value)


def xarray(values, digits):
    """Array of reals at ``digits`` digits (float64 or object dtype)."""
    if is_float_backend(digits):
        return np.array(values, dtype=float)
    src = np.asarray(values, dtype=object)
    out = np.empty(src.shape, dtype=object)
    flat_in = src.ravel()
    flat_out = out.ravel()
    for i, v in enumerate(flat_in):
        flat_out[i] = xreal(v, digits)
    return out


def digits_of(arr):
    """Infer the working precision of an array produced by :func:`xarray`."""
    arr = np.asarray(arr)
    if arr.dtype != object:
        return FLOAT_DIGITS
    for v in arr.flat:
        if isinstance(v, gmpy2.mpfr):
            return int((v.precision - GUARD_BITS) / LOG2_10)
    return FLOAT_DIGITS


def xsqrt(arr):
    if isinstance(arr, np.ndarray) and arr.dtype == object:
        return np.frompyfunc(gmpy2.sqrt, 1, 1)(arr)
    if isinstance(arr, gmpy2.mpfr):
        return gmpy2.sqrt(arr)
    return np.sqrt(arr)


def xcos(x):
    return gmpy2.cos(x) if isinstance(x, gmpy2.mpfr) else math.cos(x)


def xsin(x):
    return gmpy2.sin(x) if isinstance(x, gmpy2.mpfr) else math.sin(x)


def all_finite(arr):
    arr = np.asarray(arr)
    if arr.dtype != object:
        return bool(np.all(np.isfinite(arr)))
    return all(gmpy2.is_finite(v) if isinstance(v, gmpy2.mpfr) else math.isfinite(v) for v in arr.flat)


def to_decimal(x, digits):
    """Round a real to ``digits`` significant digits as an exact ``Decimal``."""
    if isinstance(x, Decimal):
        return x
    if not isinstance(x, gmpy2.mpfr):
        # shortest repr round-trips a double exactly
        return Decimal(repr(float(x)))
    if not gmpy2.is_finite(x):
        raise ValueError(f"cannot convert non-finite value {x} to Decimal")
    if x == 0:
        return Decimal(0)
    mant, exp, _ = x.digits(10, digits)
    sign = ""
    if mant.startswith("-"):
        sign, mant = "-", mant[1:]
    # normalize() rounds to the context precision, which defaults to 28 digits
    with localcontext() as ctx:
        ctx.prec = max(digits, 28) + 2
        return Decimal(f"{sign}0.{mant}E{exp}").normalize()


def norm2(vec):
    """Euclidean norm of a 1-D real array, in the array's own precision."""
    vec = np.asarray(vec)
    return xsqrt(np.sum(vec * vec))


# mpmath bridges: mpmath supplies the dense SVD and eigen solvers.

def to_mpmath(x):
    if isinstance(x, gmpy2.mpfr):
        n, d = x.as_integer_ratio()
        return mpmath.mpf(int(n)) / int(d)
    return mpmath.mpf(x)


def from_mpmath(x, digits):
    if is_float_backend(digits):
        return float(x)
    with gmpy2.context(gmpy2.get_context(), precision=bits_for(digits)):
        sign, man, exp, _ = mpmath.mpf(x)._mpf_
        man, exp = int(man), int(exp)
        if sign:
            man = -man
        v = mpfr(man)
        return gmpy2.mul_2exp(v, exp) if exp >= 0 else gmpy2.div_2exp(v, -exp)


def _mp_matrix(arr):
    rows, cols = arr.shape
    return mpmath.matrix([[to_mpmath(arr[i, j]) for j in range(cols)] for i in range(rows)])


def _damping(s, c, radius):
    """Levenberg-Marquardt shift giving a step of length ``radius``.

    ``s`` are the kept singular values and ``c`` the matching components of
    the right-hand side, both as floats.  The shift only steers the step, so
    double precision is enough at any working precision.
    """
    def length(lam):
        return math.sqrt(sum((si * ci / (si * si + lam)) ** 2 for si, ci in zip(s, c)))

    if length(0.0) <= radius:
        return 0.0
    lo, hi = 0.0, max(s) ** 2
    while length(hi) > radius:
        hi *= 4
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if length(mid) > radius:
            lo = mid
        else:
            hi = mid
    return hi


def svd_least_norm_solve(A, b, digits=None, full_output=False, radius=None):
    """Minimum-norm least-squares solution of ``A z = b`` through the SVD.

    Singular values below ``sigma_max * 10**(4 - digits)`` count as zero.
    A rank-zero ``A`` yields the zero vector and a
    :class:`DegenerateSystemWarning`.  With ``radius`` set, a solution
    longer than ``radius`` is replaced by the Levenberg-Marquardt step
    ``(A^T A + lam I)^-1 A^T b`` of exactly that length (a trust region).

    Parameters
    ----------
    A : (m, n) array
    b : (m,) or (m, 1) array
    digits : int, optional
        Working precision; inferred from the entries of ``A`` when omitted.
    full_output : bool
        Also return ``{"rank": int, "singular_values": list, "damping": float}``.
    radius : float, optional
        Trust-region radius for the 2-norm of ``z``.
    """
    A = np.asarray(A)
    b = np.asarray(b)
    if A.ndim != 2:
        raise ValueError("A must be two-dimensional")
    column = b.ndim == 2
    bvec = b.reshape(-1)
    if bvec.shape[0] != A.shape[0]:
        raise ValueError(f"shape mismatch: A is {A.shape}, b has {bvec.shape[0]} rows")
    if not (all_finite(A) and all_finite(bvec)):
        raise ValueError("non-finite entry in least-norm system")
    if digits is None:
        digits = max(digits_of(A), digits_of(bvec))
    n = A.shape[1]
    cutoff = 10.0 ** (4 - digits)

    if is_float_backend(digits):
        Af = A.astype(float)
        U, s, Vt = np.linalg.svd(Af, full_matrices=False)
        smax = s[0] if s.size else 0.0
        keep = s > smax * cutoff if smax > 0 else np.zeros_like(s, dtype=bool)
        rank = int(keep.sum())
        c = U[:, keep].T @ bvec.astype(float)
        lam = _damping(s[keep], c, radius) if radius and rank else 0.0
        z = Vt[keep].T @ (c * s[keep] / (s[keep] ** 2 + lam))
        sv = [float(v) for v in s]
    else:
        with mpmath.workdps(digits + 5):
            U, S, V = mpmath.svd_r(_mp_matrix(A), full_matrices=False)
            sv = [S[i] for i in range(S.rows)]
            smax = max(sv) if sv else mpmath.mpf(0)
            keep = [i for i, s in enumerate(sv) if smax > 0 and s > smax * mpmath.mpf(cutoff)]
            rank = len(keep)
            bm = mpmath.matrix([to_mpmath(v) for v in bvec])
            c = {i: sum((U[r, i] * bm[r] for r in range(U.rows)), mpmath.mpf(0)) for i in keep}
            lam = 0.0
            if radius and rank:
                lam = _damping([float(sv[i]) for i in keep], [float(c[i]) for i in keep], radius)
            zm = mpmath.matrix(n, 1)
            for i in keep:
                coef = c[i] * sv[i] / (sv[i] ** 2 + mpmath.mpf(lam))
                for j in range(n):
                    zm[j] += coef * V[i, j]
            z = np.empty(n, dtype=object)
            for j in range(n):
                z[j] = from_mpmath(zm[j], digits)
            sv = [from_mpmath(s, digits) for s in sv]
    if rank == 0:
        warnings.warn("least-norm solve on a rank-zero matrix", DegenerateSystemWarning, stacklevel=2)
        z = xarray([0] * n, digits)
    if column:
        z = z.reshape(n, 1)
    if full_output:
        return z, {"rank": rank, "singular_values": sv, "damping": lam}
    return z


def eigenvalues(M, digits=None, vectors=False):
    """All eigenvalues of a square matrix, in no particular order.

    Reduction to Hessenberg form followed by shifted QR, carried out at the
    full working precision (mpmath) or with LAPACK on the float backend.
    The result is a complex128 array on the float backend and an object
    array of ``mpmath.mpc`` otherwise.  With ``vectors=True`` the right
    eigenvectors are returned as columns of a second array.
    """
    M = np.asarray(M)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError(f"eigenvalues need a square matrix, got shape {M.shape}")
    if not all_finite(M):
        raise ValueError("non-finite entry in eigenvalue input")
    if digits is None:
        digits = digits_of(M)
    if is_float_backend(digits):
        if vectors:
            lam, vecs = np.linalg.eig(M.astype(float))
            return lam.astype(complex), vecs.astype(complex)
        return np.linalg.eigvals(M.astype(float)).astype(complex)
    n = M.shape[0]
    with mpmath.workdps(digits + 5):
        E, ER = mpmath.eig(_mp_matrix(M))
        lam = np.empty(n, dtype=object)
        for i in range(n):
            lam[i] = mpmath.mpc(E[i])
        if not vectors:
            return lam
        vecs = np.empty((n, n), dtype=object)
        for i in range(n):
            for j in range(n):
                vecs[i, j] = mpmath.mpc(ER[i, j])
        return lam, vecs


def determinant(M, digits=None):
    M = np.asarray(M)
    if digits is None:
        digits = digits_of(M)
    if is_float_backend(digits):
        return float(np.linalg.det(M.astype(float)))
    with mpmath.workdps(digits + 5):
        return from_mpmath(mpmath.det(_mp_matrix(M)), digits)
