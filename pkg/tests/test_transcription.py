import numpy as np
import pytest

from ecoplan.model import PiecewiseLinearEngine, Signal
from ecoplan.transcription import (TAGS, Grid, Layout, TranscriptionError, audit_convexity, dump,
                                   evaluate, transcribe)

from conftest import flat_scenario
from helpers import derivative_errors, interior_points


def test_grid_and_layout():
    g = Grid(4, 8.0)
    assert g.h == 2.0
    assert np.allclose(g.t, [0, 2, 4, 6, 8])
    assert np.allclose(g.midpoints, [1, 3, 5, 7])
    lay = Layout(4)
    assert lay.size == 4 * 5 + 4
    parts = [np.arange(5) + 10 * i for i in range(4)] + [np.arange(4) + 100]
    z = lay.pack(*parts)
    for a, b in zip(lay.unpack(z), parts):
        assert np.array_equal(a, b)
    assert lay.family_of(lay.P.start) == "P"
    with pytest.raises(TranscriptionError):
        Grid(1, 1.0)
    with pytest.raises(TranscriptionError):
        Grid(4, 0.0)


def test_every_constraint_family_is_present():
    p = transcribe(flat_scenario(), 20)
    assert set(p.constraints_by_tag()) == set(TAGS)
    assert p.n_variables == 4 * 21 + 20
    rows = sum(b.rows for b in p.blocks)
    assert rows > 8 * 20


def test_signals_sampled_at_interval_midpoints():
    solar = Signal.from_pairs([(0.0, 0.0), (5.0, 1000.0)])
    p = transcribe(flat_scenario(T=10.0, x_end=50.0, solar=solar), 4)
    # midpoints 1.25, 3.75, 6.25, 8.75
    assert np.array_equal(p.solar, [0.0, 0.0, 1000.0, 1000.0])


def test_feasible_point_has_nonpositive_residuals():
    p = transcribe(flat_scenario(), 30)
    for z in interior_points(p, 3):
        ev = evaluate(p, z)
        assert ev.in_domain
        assert ev.max_inequality_violation() <= 0.0
        assert ev.max_equality_residual() < 1e-9


def test_negative_kinetic_energy_is_out_of_domain():
    p = transcribe(flat_scenario(), 10)
    z = interior_points(p, 1)[0]
    z[p.layout.K][3] = -1.0
    assert not evaluate(p, z).in_domain


@pytest.mark.parametrize("scenario", [
    flat_scenario(v_init=5.0),
    flat_scenario(terrain=Signal.constant(-2e3), solar=Signal.constant(1e3)),
])
def test_analytic_derivatives_match_finite_differences(scenario):
    p = transcribe(scenario, 40)
    for z in interior_points(p, 5, seed=1):
        g_err, h_err = derivative_errors(p, z)
        assert g_err < 1e-5
        assert h_err < 1e-5


def test_convexity_audit_passes():
    p = transcribe(flat_scenario(v_init=5.0), 20)
    report = audit_convexity(p, interior_points(p, 3))
    assert report
    assert min(report.values()) >= -1e-6


def test_piecewise_linear_engine_becomes_affine_rows():
    eng = PiecewiseLinearEngine(p=(0.0, 1e4, 5e4), f=(5e3, 1.6e4, 7e4))
    p = transcribe(flat_scenario(engine=eng), 10)
    c8 = p.constraints_by_tag()["c8"]
    assert all(b.affine for b in c8)
    assert sum(b.rows for b in c8) == 2 * 10


def test_dump_lists_the_families(tmp_path):
    path = tmp_path / "problem.txt"
    dump(transcribe(flat_scenario(), 5), path)
    text = path.read_text()
    assert "N=5" in text and "c12" in text
