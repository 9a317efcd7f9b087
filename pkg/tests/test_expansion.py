import math
from decimal import Decimal

import numpy as np
import pytest

from threebody.ann import TrainConfig, forward
from threebody.errors import ConfigurationError
from threebody.expansion import (ExpansionRoundReport, MassRegion, RoadmapConfig, assemble_classifier_dataset,
                                 boundary_ring, expand_once, expand_rounds, generate_candidates, rectangle,
                                 reports_csv, run_roadmap, tag_model, training_set)
from threebody.continuation import lattice_values

D = Decimal
TINY = TrainConfig(hidden=(32, 32), max_epochs=1500, plateau=300)


def _region(m1s, m2s, dm="0.01"):
    reg = MassRegion(dm)
    for a in m1s:
        for b in m2s:
            reg.add_found(a, b)
    return reg


def test_rectangle_count_around_seed_square():
    vals = lattice_values("0.95", "1.00", "0.01")
    reg = _region(vals, lattice_values("1.00", "1.05", "0.01"))
    assert len(rectangle(reg, ((D("0.1"), D("1.2")), (D("0.4"), D("2.8"))))) == 26364


def test_rectangle_over_found_square_is_empty():
    reg = _region(lattice_values("0.95", "1", "0.01"), lattice_values("1", "1.05", "0.01"))
    assert rectangle(reg, ((D("0.95"), D("1.00")), (D("1.00"), D("1.05")))) == []


def test_ring_around_single_point():
    reg = _region([D(1)], [D(1)])
    ring = boundary_ring(reg, width=2)
    assert len(ring) == 12
    assert (D(1), D(1)) not in ring
    assert (D("1.02"), D(1)) in ring and (D("1.01"), D("1.01")) in ring
    assert (D("1.02"), D("1.01")) not in ring


def test_ring_respects_floor_and_failures():
    reg = _region([D("0.11")], [D(1)])
    reg.add_failed(D("0.12"), D(1))
    ring = boundary_ring(reg, width=3)
    assert all(a > D("0.1") and b > D("0.1") for a, b in ring)
    assert (D("0.12"), D(1)) not in ring


def test_region_tags_are_exclusive():
    reg = _region([D(1)], [D(1)])
    assert reg.tag("1.00", "1") == "found"
    assert reg.tag(2, 2) == "untried"
    with pytest.raises(ValueError):
        reg.add_failed(D("1.0"), D(1))


def test_unknown_strategy():
    with pytest.raises(ConfigurationError):
        generate_candidates(MassRegion(), ("spiral", 3))


def test_report_fraction_is_exact():
    rep = ExpansionRoundReport.of(1, 3, 2, 0.01)
    assert rep.success_fraction == 2 / 3
    assert reports_csv([rep]).splitlines()[0].startswith("round")


@pytest.fixture(scope="module")
def tiny_model(small_grid):
    data = training_set(small_grid.orbits, (1.0, 0.0, 0.0))
    from threebody.ann import train_regression
    model, _ = train_regression(data, TINY, seed=0)
    return tag_model(model, small_grid[0].theta, small_grid[0].family)


def test_found_points_reconverge(small_grid, tiny_model, fast):
    cands = [(r.masses.m1, r.masses.m2) for r in small_grid]
    orbits, failures, rep = expand_once(tiny_model, cands, small_grid[0].theta, small_grid[0].family,
                                        tol=1e-12, cfg=fast)
    assert failures == [] and rep.success_fraction == 1.0
    for new, old in zip(orbits, small_grid):
        assert new.generation == 1
        assert max(abs(a - b) for a, b in zip(new.params(), old.params())) < D("1e-9")


def test_far_outside_family_fails(small_grid, tiny_model, fast):
    cands = [(D("0.05"), D("1.00")), (D("0.05"), D("2.50"))]
    orbits, failures, rep = expand_once(tiny_model, cands, small_grid[0].theta, small_grid[0].family,
                                        tol=1e-12, cfg=fast, max_iter=20)
    assert len(failures) >= 1 and rep.issued == 2


def test_family_mismatch_is_rejected(small_grid, tiny_model, fast):
    with pytest.raises(ConfigurationError):
        expand_once(tiny_model, [(D(1), D(1))], D("0.5"), small_grid[0].family, cfg=fast)


def test_stall_of_one_runs_no_rounds(small_grid, seed1_fast, tmp_path):
    cfg = RoadmapConfig(seed_region=None, rounds=[("ring", 1)], stall=1.0, tol=1e-12, train=TINY,
                        split=(1.0, 0.0, 0.0), store_path=str(tmp_path / "s.jsonl"))
    res = run_roadmap(seed1_fast, cfg, seed_grid=small_grid)
    assert [r.round for r in res.reports] == [0]
    assert len(res.orbits) == 4
    assert (tmp_path / "s.jsonl").read_text().count("\n") == 4


def test_one_ring_round_grows_the_found_set(small_grid, seed1_fast):
    cfg = RoadmapConfig(seed_region=None, rounds=[("ring", 1)], stall=0.08, tol=1e-12, train=TINY,
                        split=(1.0, 0.0, 0.0))
    res = expand_rounds(small_grid.orbits, [], seed1_fast.theta, cfg, seed1_fast.family)
    rep = res.reports[-1]
    assert rep.issued == 8
    assert rep.converged == len(res.orbits) - 4
    assert rep.success_fraction > 0.5
    keys = [o.masses.key() for o in res.orbits]
    assert len(keys) == len(set(keys))
    assert not set(res.failures) & set(keys)
    assert math.isfinite(rep.mean_relative_error) and rep.mean_relative_error < 0.1


def test_classifier_dataset_labels(seed1_fast):
    rec = seed1_fast
    rec_stable = type(rec)(rec.masses, rec.x1, rec.v1, rec.v2, rec.T, rec.theta, stability="stable")
    data = assemble_classifier_dataset([rec_stable], [(D("0.5"), D("0.5"))], fractions=(1.0, 0.0, 0.0))
    np.testing.assert_array_equal(data.Y, [[1, 0, 0], [0, 0, 1]])
    with pytest.raises(ValueError):
        assemble_classifier_dataset([rec], [])


def test_classifier_splits_partition_points():
    from threebody.dynamics import Masses
    from threebody.finder import OrbitRecord
    rng = np.random.default_rng(0)
    recs = [OrbitRecord(Masses(D(i), D(1)), D(-1), D(0), D(0), D(1), D(0), stability="unstable")
            for i in range(1, 501)]
    fails = [(D(i), D(2)) for i in range(1, 501)]
    data = assemble_classifier_dataset(recs, fails, seed=int(rng.integers(100)))
    c = data.counts()
    assert sum(c.values()) == 1000 and c["validation"] == 50 and c["test"] == 50


def test_prediction_matches_training_targets(small_grid, tiny_model):
    X = np.array([[float(r.masses.m1), float(r.masses.m2)] for r in small_grid])
    Y = np.array([[float(v) for v in r.params()] for r in small_grid])
    assert np.max(np.abs(forward(tiny_model, X) - Y) / np.abs(Y)) < 1e-2
