"""Tests for the sweep/fit harness: initial-data presets, resolution rule,
plan validation, rate fitting, sweep execution on closed-form problems and
deterministic report emission."""

import json
import math
import os

import numpy as np
import pytest

from fracvisc.hamiltonians import make_hamiltonian
from fracvisc.hj import ConstantForcing, ZeroForcing
from fracvisc.rates import (
    InitialData,
    RateFit,
    ResolutionRule,
    SweepPlan,
    emit_report,
    fit_rate,
    format_float,
    make_initial_data,
    one_sided_check,
    run_sweep,
    target_exponent,
)
from fracvisc.torus import TorusGrid

ZERO_H1 = make_hamiltonian("zero", 1)
ZERO_H2 = make_hamiltonian("zero", 2)


def zero_h_plan(**kw):
    args = dict(
        dim=1,
        s_values=(0.5,),
        epsilons=tuple(0.3 * 2.0**-k for k in range(5)),
        p_values=(2.0, math.inf),
        hamiltonian=ZERO_H1,
        u0=make_initial_data("cos"),
        T=1.0,
        n_points=256,
    )
    args.update(kw)
    return SweepPlan(**args)


# ---------------------------------------------------------------------------
# initial data
# ---------------------------------------------------------------------------


def test_initial_data_kinds():
    g = TorusGrid(1, 64)
    x = g.nodes()[0]
    assert np.allclose(make_initial_data("cos").build(g).values, np.cos(x))
    bump = make_initial_data("bump").build(g)
    assert float(np.min(bump.values)) > 0.0 and float(np.max(bump.values)) == pytest.approx(1.0)
    co = make_initial_data("coeffs", (0.5, 0.0, 0.0, 0.25)).build(g)
    assert np.allclose(co.values, 0.5 * np.cos(x) + 0.25 * np.sin(2.0 * x))
    g2 = TorusGrid(2, 32)
    xs = g2.nodes()
    assert np.allclose(make_initial_data("cos2d").build(g2).values, np.cos(xs[0]) + np.cos(xs[1]))


def test_initial_data_validation():
    with pytest.raises(ValueError, match="unknown initial data"):
        InitialData("gauss")
    with pytest.raises(ValueError, match="even"):
        InitialData("coeffs", (1.0,))
    with pytest.raises(ValueError, match="dim == 2"):
        make_initial_data("cos2d").build(TorusGrid(1, 32))
    with pytest.raises(ValueError, match="one-dimensional"):
        make_initial_data("coeffs", (1.0, 0.0)).build(TorusGrid(2, 32))


# ---------------------------------------------------------------------------
# resolution rule
# ---------------------------------------------------------------------------


def test_resolution_rule_layer_widths():
    rule = ResolutionRule()
    # s = 1/2: layer width eps, need = 3 * 2pi / eps
    assert rule.n_for(0.5, 2.0**-6) == 2048
    assert rule.n_for(0.5, 2.0**-8) == 8192
    # large eps clamps at the floor, small eps at the cap
    assert rule.n_for(0.5, 0.25) == 1024
    assert rule.n_for(0.25, 2.0**-5) == 16384
    # supercritical orders need far fewer points
    assert rule.n_for(1.0, 2.0**-6) == 1024


def test_resolution_rule_validation():
    with pytest.raises(ValueError, match="factor"):
        ResolutionRule(factor=0.0)
    with pytest.raises(ValueError, match="power of two"):
        ResolutionRule(n_min=300)
    with pytest.raises(ValueError, match="n_min must not exceed"):
        ResolutionRule(n_min=4096, n_max=2048)


# ---------------------------------------------------------------------------
# sweep plan validation
# ---------------------------------------------------------------------------


def test_sweep_plan_validation():
    with pytest.raises(ValueError, match="at least 5"):
        zero_h_plan(epsilons=(0.4, 0.2, 0.1, 0.05))
    with pytest.raises(ValueError, match="four octaves"):
        zero_h_plan(epsilons=(0.4, 0.3, 0.2, 0.15, 0.1))
    with pytest.raises(ValueError, match="positive"):
        zero_h_plan(epsilons=(0.4, 0.2, 0.1, 0.05, -0.025))
    with pytest.raises(ValueError, match="s values"):
        zero_h_plan(s_values=(1.5,))
    with pytest.raises(ValueError, match="p values"):
        zero_h_plan(p_values=(0.5,))
    with pytest.raises(ValueError, match="zero forcing"):
        zero_h_plan(forcing=ConstantForcing(1.0))
    with pytest.raises(ValueError, match="reference"):
        zero_h_plan(reference="exact")
    with pytest.raises(ValueError, match="power of two"):
        zero_h_plan(n_points=100)
    with pytest.raises(ValueError, match="snapshot times"):
        zero_h_plan(snapshot_times=(0.0, 2.0))
    plan = zero_h_plan()
    assert plan.epsilons[0] == max(plan.epsilons)
    assert len(plan.snapshot_times) == 16 and plan.snapshot_times[-1] == 1.0
    assert plan.n_for(0.5, 0.1) == 256  # explicit n_points wins over the rule


# ---------------------------------------------------------------------------
# rate fitting
# ---------------------------------------------------------------------------


def test_fit_rate_recovers_power_law():
    eps = 2.0 ** -np.arange(2, 10)
    fit = fit_rate(eps, 3.0 * eps**0.75)
    assert fit.exponent == pytest.approx(0.75, abs=1e-12)
    assert fit.prefactor == pytest.approx(3.0, rel=1e-10)
    assert fit.residual_power < 1e-12
    assert fit.preferred == "power"
    assert fit.n_used == 8


def test_fit_rate_recognizes_log_correction():
    eps = 2.0 ** -np.arange(2, 10)
    fit = fit_rate(eps, 0.7 * eps * np.abs(np.log(eps)))
    assert fit.preferred == "power_log"
    assert fit.residual_power_log < 1e-12
    # the pure power fit absorbs the log into an exponent below one
    assert 0.7 < fit.exponent < 1.0
    assert fit.accepted_exponent(allow_log=True) == 1.0
    assert fit.accepted_exponent(allow_log=False) == fit.exponent


def test_fit_rate_filters_and_validates():
    eps = np.array([0.5, 0.25, 0.125, 0.0625])
    errs = np.array([0.5, 0.25, np.nan, 0.0625])
    fit = fit_rate(eps, errs)
    assert fit.n_used == 3 and fit.exponent == pytest.approx(1.0, abs=1e-12)
    with pytest.raises(ValueError, match="at least 3"):
        fit_rate([0.5, 0.25], [0.1, 0.05])


def test_accepted_exponent_tie_logic():
    fit = RateFit(
        exponent=0.93, prefactor=1.0, residual_power=0.01,
        prefactor_log=1.0, residual_power_log=0.011, preferred="tie", n_used=5,
    )
    assert fit.accepted_exponent(allow_log=True) == 1.0
    assert fit.accepted_exponent() == 0.93


def test_target_exponent_table():
    assert target_exponent(0.3, 2.0) == 1.0
    assert target_exponent(0.3, math.inf) == 1.0
    assert target_exponent(0.5, 4.0) == 1.0
    assert target_exponent(0.5, math.inf) == 1.0
    assert target_exponent(0.75, math.inf) == pytest.approx(1.0 / 1.5)
    assert target_exponent(0.75, 2.0) is None
    assert target_exponent(1.0, math.inf) == 0.5
    assert target_exponent(1.0, 2.0) == 0.75
    assert target_exponent(1.0, 4.0) == 0.625


# ---------------------------------------------------------------------------
# sweep execution on the zero-Hamiltonian family (exact heat flows)
# ---------------------------------------------------------------------------


@pytest.fixture(scope="module")
def zero_h_sweep():
    return run_sweep(zero_h_plan())


def test_sweep_rates_linear_in_eps(zero_h_sweep):
    # u_eps - u = (exp(-eps t |k|^(2s)) - 1) u0 decays linearly in eps
    for p in (2.0, math.inf):
        eps, err = zero_h_sweep.errors_for(0.5, p)
        assert eps.size == 5 and np.all(np.diff(eps) < 0)
        fit = fit_rate(eps, err)
        assert 0.88 < fit.exponent < 1.02, f"p={p}: slope {fit.exponent}"
    assert zero_h_sweep.failures == ()
    assert zero_h_sweep.eval_n[0.5] == 256


def test_sweep_cell_diagnostics(zero_h_sweep):
    cell = zero_h_sweep.cells[(0.5, 0.3)]
    assert cell.n_points == 256 and cell.n_steps > 0
    assert cell.times.shape == cell.k_profile.shape == cell.grad_sup_profile.shape
    # heat flow of cos: curvature probe stays near 1, gradient near 1
    assert 0.9 < cell.k_profile[0] <= 1.0
    assert cell.one_sided_error is not None and cell.one_sided_error > 0.0
    assert cell.one_sided_bound == pytest.approx(1.0, abs=1e-6)


def test_sweep_determinism(zero_h_sweep):
    again = run_sweep(zero_h_plan())
    assert again.rows == zero_h_sweep.rows


def test_sweep_parallel_matches_sequential(zero_h_sweep):
    pooled = run_sweep(zero_h_plan(), threads=2)
    assert pooled.rows == zero_h_sweep.rows


def test_one_sided_check_on_heat_flows(zero_h_sweep):
    report = one_sided_check(zero_h_sweep)
    # sup_t sup_x [-(-Delta)^(1/2) u_eps] = 1 for every eps here
    assert report.uniform and report.spread < 1e-6
    assert report.applicable
    assert report.fit is not None and report.passes(0.88)
    assert report.epsilons.size == 5


def test_sweep_2d_path():
    plan = SweepPlan(
        dim=2,
        s_values=(0.5,),
        epsilons=tuple(0.3 * 2.0**-k for k in range(5)),
        p_values=(2.0,),
        hamiltonian=ZERO_H2,
        u0=make_initial_data("cos2d"),
        T=0.5,
        n_points=32,
        snapshot_times=(0.0, 0.25, 0.5),
    )
    result = run_sweep(plan)
    eps, err = result.errors_for(0.5, 2.0)
    fit = fit_rate(eps, err)
    assert 0.85 < fit.exponent < 1.05


def test_sweep_records_guard_failures():
    # an initial datum above the blow-up guard kills every viscous cell at
    # the first snapshot; the reference does not care and the sweep reports
    # the failures instead of raising
    plan = zero_h_plan(u0=make_initial_data("coeffs", (2.0e6, 0.0)))
    result = run_sweep(plan)
    assert len(result.failures) == 5
    assert all("BlowUpError" in reason for _, _, reason in result.failures)
    assert result.rows == ()


# ---------------------------------------------------------------------------
# report emission
# ---------------------------------------------------------------------------


def test_emit_report_files_and_determinism(zero_h_sweep, tmp_path):
    d1, d2 = str(tmp_path / "a"), str(tmp_path / "b")
    rep1 = emit_report(zero_h_sweep, d1, config_echo={"note": "x"},
                       one_sided=one_sided_check(zero_h_sweep))
    emit_report(zero_h_sweep, d2, config_echo={"note": "x"},
                one_sided=one_sided_check(zero_h_sweep))
    for name in ("rates.csv", "report.json", "plots.gp"):
        with open(os.path.join(d1, name), "rb") as fh:
            b1 = fh.read()
        with open(os.path.join(d2, name), "rb") as fh:
            b2 = fh.read()
        assert b1 == b2, f"{name} not byte-identical across identical emissions"

    with open(os.path.join(d1, "rates.csv")) as fh:
        header = fh.readline().strip()
        assert header == "s,p,epsilon,error,norm,ref_kind"
        rows = [line.strip().split(",") for line in fh if line.strip()]
    assert len(rows) == 10  # 5 epsilons x 2 p-values
    assert {r[4] for r in rows} == {"Lp", "sup"}

    with open(os.path.join(d1, "report.json")) as fh:
        rep_loaded = json.load(fh)
    assert rep_loaded["fits"] == json.loads(json.dumps(rep1["fits"]))
    key = "s=0.5,p=2"
    assert key in rep_loaded["fits"]
    entry = rep_loaded["fits"][key]
    assert entry["target"] == 1.0 and "passed" in entry
    assert rep_loaded["config"] == {"note": "x"}
    assert rep_loaded["one_sided"]["uniform"] is True
    assert rep_loaded["eval_n"] == {"0.5": 256}


def test_format_float_canonical():
    assert format_float(1.0) == "1.0000000000000000e+00"
    assert float(format_float(math.pi)) == math.pi