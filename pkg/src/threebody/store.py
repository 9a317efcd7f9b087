"""Orbit store (JSON lines) and trajectory export (CSV).

Orbit parameters are written as decimal strings so that values computed at
any precision survive a save/load cycle unchanged.  Files carry a schema
version on every line; a newer major version is rejected on load.
"""

import csv
import io
import json
from decimal import Decimal, InvalidOperation

import numpy as np

from .cns import IntegratorConfig, integrate
from .dynamics import Masses, expand_ic, rotate_about_com
from .errors import LoadError
from .finder import OrbitRecord, closure
from .numerics import to_decimal, working_precision, xreal

SCHEMA = "1.0"
_DECIMAL_FIELDS = ("theta", "m1", "m2", "m3", "x1", "v1", "v2", "T")


def _record_line(rec, timestamp):
    d = {
        "schema": SCHEMA,
        "family": rec.family,
        "theta": str(rec.theta),
        "m1": str(rec.masses.m1),
        "m2": str(rec.masses.m2),
        "m3": str(rec.masses.m3),
        "x1": str(rec.x1),
        "v1": str(rec.v1),
        "v2": str(rec.v2),
        "T": str(rec.T),
        "delta_T": repr(float(rec.delta_T)),
        "stability": rec.stability,
        "generation": rec.generation,
        "converged": rec.converged,
        "tol": repr(float(rec.tol)),
        "iterations": rec.iterations,
        "digits": rec.digits,
        "reason": rec.reason,
        "timestamp": timestamp,
    }
    return json.dumps(d, sort_keys=True)


def dumps_orbits(records, timestamp=None):
    """Store text for ``records``; raises ``ValueError`` on duplicate keys.

    ``timestamp`` defaults to ``null`` so that identical runs write
    identical files.
    """
    seen = set()
    lines = []
    for rec in records:
        if rec.key() in seen:
            raise ValueError(f"duplicate orbit key {rec.key()}")
        seen.add(rec.key())
        lines.append(_record_line(rec, timestamp))
    return "".join(line + "\n" for line in lines)


def save_orbits(records, path, timestamp=None):
    text = dumps_orbits(records, timestamp)
    with open(path, "w") as fh:
        fh.write(text)
    return text


def _parse(line, n):
    try:
        d = json.loads(line)
    except json.JSONDecodeError as exc:
        raise LoadError(f"invalid JSON: {exc.msg}", line=n) from None
    if not isinstance(d, dict):
        raise LoadError("record is not an object", line=n)
    schema = str(d.get("schema", ""))
    if schema.split(".")[0] != SCHEMA.split(".")[0]:
        raise LoadError(f"unsupported schema version {d.get('schema')!r}", line=n)
    vals = {}
    for key in _DECIMAL_FIELDS:
        if key not in d:
            raise LoadError(f"missing field {key!r}", line=n)
        try:
            v = Decimal(d[key])
        except (InvalidOperation, TypeError):
            raise LoadError(f"field {key!r} is not a decimal: {d[key]!r}", line=n) from None
        if not v.is_finite():
            raise LoadError(f"field {key!r} is not finite", line=n)
        vals[key] = v
    try:
        masses = Masses(vals["m1"], vals["m2"], vals["m3"])
        rec = OrbitRecord(masses, vals["x1"], vals["v1"], vals["v2"], vals["T"], vals["theta"],
                          family=str(d["family"]), delta_T=float(d["delta_T"]),
                          converged=bool(d.get("converged", True)), tol=float(d.get("tol", 1e-10)),
                          iterations=int(d.get("iterations", 0)), stability=str(d.get("stability", "unknown")),
                          generation=int(d.get("generation", 0)), reason=str(d.get("reason", "")),
                          digits=int(d.get("digits", 0)))
    except (KeyError, TypeError, ValueError) as exc:
        raise LoadError(f"bad record: {exc}", line=n) from None
    if not rec.T > 0:
        raise LoadError("period must be positive", line=n)
    return rec


def loads_orbits(text, verify=None, tol=1e-10):
    """Parse store text; see :func:`load_orbits`."""
    records, seen = [], {}
    for n, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        rec = _parse(line, n)
        if rec.key() in seen:
            raise LoadError(f"duplicate key {rec.key()} (first on line {seen[rec.key()]})", line=n)
        seen[rec.key()] = n
        if verify is not None:
            delta = closure(rec, verify)
            if not delta < tol:
                raise LoadError(f"re-integration gives delta_T={delta:.3g}, not below {tol:g}", line=n)
        records.append(rec)
    return records


def load_orbits(path, verify=None, tol=1e-10):
    """Read a store written by :func:`save_orbits`.

    With ``verify`` (an :class:`IntegratorConfig`) every record is
    re-integrated and must close to ``delta_T < tol``.

    Raises
    ------
    LoadError
        On schema mismatch, parse failure, duplicate key or failed
        verification, with the offending line number.
    """
    with open(path) as fh:
        return loads_orbits(fh.read(), verify, tol)


def export_trajectory(rec, samples, frame="inertial", cfg=None, path=None):
    """Positions at ``samples`` uniform times over ``[0, T]`` as CSV.

    Columns are ``t, x1, y1, x2, y2, x3, y3``.  In the ``rotating`` frame
    each sample is rotated by ``-theta * t / T`` about the centre of mass,
    so a relative periodic orbit closes on itself.
    """
    if frame not in ("inertial", "rotating"):
        raise ValueError(f"frame must be 'inertial' or 'rotating', got {frame!r}")
    if int(samples) < 1:
        raise ValueError(f"samples must be positive, got {samples}")
    cfg = cfg or IntegratorConfig.standard()
    digits = cfg.digits
    y0 = expand_ic(rec.guess().ic, rec.masses, digits)
    _, traj = integrate(y0, rec.masses, rec.T, cfg, samples=int(samples))
    out_digits = min(digits, 17)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["t", "x1", "y1", "x2", "y2", "x3", "y3"])
    with working_precision(digits):
        T = xreal(rec.T, digits)
        theta = xreal(rec.theta, digits)
        for t, y in zip(traj.times, traj.states):
            if frame == "rotating":
                y = rotate_about_com(-theta * t / T, y, rec.masses, digits)
            w.writerow([_fmt(t, out_digits)] + [_fmt(v, out_digits) for v in y[:6]])
    text = buf.getvalue()
    if path is not None:
        with open(path, "w") as fh:
            fh.write(text)
    return text


def _fmt(v, digits):
    if isinstance(v, float):
        return repr(float(v))
    return str(to_decimal(v, digits))


def read_trajectory(text):
    """Parse :func:`export_trajectory` output into ``(header, float array)``."""
    rows = list(csv.reader(io.StringIO(text)))
    return rows[0], np.array([[float(x) for x in r] for r in rows[1:]])

