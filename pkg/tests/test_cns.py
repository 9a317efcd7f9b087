import mpmath
import numpy as np
import pytest

from threebody.cns import IntegratorConfig, integrate, integrate_batch, integrate_variational, taylor_step
from threebody.dynamics import CollinearIC, Masses, conserved, expand_ic
from threebody.errors import CollisionError, ConfigurationError
from threebody.numerics import determinant, to_mpmath, working_precision, xarray, xreal


def _circular_pair(digits):
    # unit masses one apart: omega^2 = 2, speed omega / 2; body 3 is a distant test particle
    with working_precision(digits):
        w = xreal(2, digits) ** xreal("0.5", digits)
        half = xreal("0.5", digits)
        y = xarray([-half, 0, half, 0, 40, 0, 0, -w * half, 0, w * half, 0, 0], digits)
    with mpmath.workdps(digits + 5):
        period = str(mpmath.mpf(2) * mpmath.pi / mpmath.sqrt(2))
    return y, Masses(1, 1, 0), period


def test_two_body_circular_orbit_closes_at_high_precision():
    cfg = IntegratorConfig(order=24, digits=30, tol=1e-24)
    y0, m, period = _circular_pair(30)
    y1 = integrate(y0, m, period, cfg)
    err = max(abs(float(a - b)) for a, b in zip(y1[:4], y0[:4]))
    err = max(err, max(abs(float(a - b)) for a, b in zip(y1[6:10], y0[6:10])))
    assert err < 1e-20


def test_two_body_quarter_period_analytic():
    cfg = IntegratorConfig.fast()
    y0, m, period = _circular_pair(15)
    y1 = integrate(y0, m, float(period) / 4, cfg)
    # body 1 starts moving in -y, so a quarter turn takes it from (-1/2, 0) to (0, -1/2)
    np.testing.assert_allclose(y1[:2], [0.0, -0.5], atol=1e-13)


def test_energy_and_momentum_conserved():
    m = Masses("0.9", "1.1", 1)
    y0 = expand_ic(CollinearIC("-1.3", "-0.9", "-0.3"), m, 30)
    y1 = integrate(y0, m, "3", IntegratorConfig(order=24, digits=30, tol=1e-24))
    a, b = conserved(y0, m), conserved(y1, m)
    for key in ("E", "L", "px", "py"):
        assert abs(float(a[key] - b[key])) < 1e-20


def test_time_reversibility():
    cfg = IntegratorConfig.fast()
    m = Masses(1, 1, 1)
    y0 = expand_ic(CollinearIC("-1.3256", "-0.8934", "-0.2886"), m, 15)
    y1 = integrate(y0, m, 2.5, cfg)
    back = integrate(np.concatenate([y1[:6], -y1[6:]]), m, 2.5, cfg)
    np.testing.assert_allclose(back[:6], y0[:6], atol=1e-11)
    np.testing.assert_allclose(-back[6:], y0[6:], atol=1e-11)


def test_variational_matrix_matches_finite_differences():
    cfg = IntegratorConfig.fast()
    m = Masses(1, 1, 1)
    y0 = expand_ic(CollinearIC("-1.3256", "-0.8934", "-0.2886"), m, 15)
    _, Phi = integrate_variational(y0, m, 1.5, cfg)
    h = 1e-6
    for k in (0, 3, 7, 11):
        e = np.zeros(12)
        e[k] = h
        fd = (integrate(y0 + e, m, 1.5, cfg) - integrate(y0 - e, m, 1.5, cfg)) / (2 * h)
        np.testing.assert_allclose(Phi[:, k], fd, rtol=1e-5, atol=1e-6)


def test_variational_matrix_is_volume_preserving():
    cfg = IntegratorConfig(order=24, digits=30, tol=1e-24)
    m = Masses(1, 1, 1)
    y0 = expand_ic(CollinearIC("-1.3256", "-0.8934", "-0.2886"), m, 30)
    _, Phi = integrate_variational(y0, m, "2", cfg)
    assert abs(float(to_mpmath(determinant(Phi)) - 1)) < 1e-18


def test_tangent_subset_equals_columns():
    cfg = IntegratorConfig.fast()
    m = Masses(1, 1, 1)
    y0 = expand_ic(CollinearIC("-1.3256", "-0.8934", "-0.2886"), m, 15)
    _, Phi = integrate_variational(y0, m, 1.0, cfg)
    _, cols = integrate_variational(y0, m, 1.0, cfg, tangent=np.eye(12)[:, [0, 7]])
    np.testing.assert_allclose(cols, Phi[:, [0, 7]], rtol=1e-13, atol=1e-13)


def test_batch_rows_equal_single_runs():
    cfg = IntegratorConfig.fast()
    m = Masses(1, 1, 1)
    ys = [expand_ic(CollinearIC(x, "-0.8934", "-0.2886"), m, 15) for x in ("-1.32", "-1.33")]
    res = integrate_batch(np.array(ys), np.ones((2, 3)), np.array([1.0, 2.0]), cfg)
    assert list(res.status) == [0, 0]
    for y, t, out in zip(ys, (1.0, 2.0), res.states):
        np.testing.assert_allclose(out, integrate(y, m, t, cfg), rtol=0, atol=1e-14)


def test_dense_samples_end_on_final_state():
    cfg = IntegratorConfig.fast()
    m = Masses(1, 1, 1)
    y0 = expand_ic(CollinearIC("-1.3256", "-0.8934", "-0.2886"), m, 15)
    y1, traj = integrate(y0, m, 1.0, cfg, samples=5)
    assert len(traj.times) == 5
    np.testing.assert_allclose(traj.states[0], y0, atol=1e-15)
    np.testing.assert_allclose(traj.states[-1], y1, atol=1e-13)


def test_head_on_collision_raises():
    m = Masses(1, 1, 1)
    y0 = np.array([-1.0, 0, 1, 0, 0, 5, 0, 0, 0, 0, 0, 0])
    with pytest.raises(CollisionError):
        integrate(y0, m, 5.0, IntegratorConfig.fast())


def test_single_step_advances_time():
    y0, m, _ = _circular_pair(15)
    y1, h = taylor_step(y0, m, IntegratorConfig.fast())
    assert 0 < h <= 0.5
    assert not np.allclose(y1, y0)


@pytest.mark.parametrize("kw", [dict(order=3), dict(tol=0.0), dict(digits=40, tol=1e-40), dict(max_step=0)])
def test_invalid_configs(kw):
    with pytest.raises(ConfigurationError):
        IntegratorConfig(**kw)


def test_digit_presets():
    cfg = IntegratorConfig.for_digits(60)
    assert cfg.digits == 60 and cfg.tol == pytest.approx(1e-45)
    assert IntegratorConfig.for_digits(15) == IntegratorConfig.fast()
