"""Convergence-rate measurement harness.

A sweep solves one Hamilton-Jacobi family over a ladder of viscosities eps
and several fractional orders s, compares each viscous solution against an
inviscid reference (Hopf-Lax for f == 0, monotone finite differences
otherwise), and fits the decay of the L^p errors

    err(s, p, eps) = max over snapshot times of || u_eps(t) - u(t) ||_p

against the models  err = C eps^a  (power)  and  err = C eps |log eps|
(power_log, exponent pinned at one).  Expected exponents, where the theory
pins them down, are:

    s < 1/2          1            (all p, including sup)
    s = 1/2          1            (all p; sup admits the power_log model)
    1/2 < s < 1      1/(2s)       (sup norm)
    s = 1            1/2 + 1/(2p) (finite p),  1/2  (sup)
"""

from __future__ import annotations

import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from fracvisc.hamiltonians import HamiltonianSpec
from fracvisc.hj import (
    BlowUpError,
    ProblemSpec,
    TailGuardError,
    Trajectory,
    ZeroForcing,
    hopf_lax_oracle,
    monotone_reference,
    viscous_solve,
)
from fracvisc.torus import Field, TorusGrid, frac_laplacian, lp_norm, subsample

__all__ = [
    "InitialData",
    "make_initial_data",
    "ResolutionRule",
    "SweepPlan",
    "RateRow",
    "CellResult",
    "SweepResult",
    "run_sweep",
    "RateFit",
    "fit_rate",
    "target_exponent",
    "OneSidedReport",
    "one_sided_check",
    "emit_report",
    "format_float",
]


def format_float(x: float) -> str:
    """Canonical 17-significant-digit scientific notation for data files."""
    return f"{float(x):.16e}"


def _pow2ceil(n: float) -> int:
    return 1 << max(0, math.ceil(math.log2(max(1.0, n))))


# ---------------------------------------------------------------------------
# initial data presets
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class InitialData:
    """Grid-independent description of u0, realizable on any resolution.

    kinds:
      cos      cos(x1)                              (dim 1 or 2)
      cos2d    cos(x) + cos(y)                      (dim 2)
      bump     exp(4 (cos(x1) - 1)), a smooth periodic bump
      coeffs   sum_k a_k cos(k x) + b_k sin(k x),   params = (a1, b1, a2, b2, ...)
    """

    kind: str
    params: tuple[float, ...] = ()

    def __post_init__(self) -> None:
        if self.kind not in ("cos", "cos2d", "bump", "coeffs"):
            raise ValueError(f"unknown initial data kind {self.kind!r}")
        if self.kind == "coeffs" and (not self.params or len(self.params) % 2):
            raise ValueError("coeffs initial data needs an even, non-empty parameter list")

    def build(self, grid: TorusGrid) -> Field:
        x = grid.nodes()
        if self.kind == "cos":
            return Field(grid, np.cos(x[0]))
        if self.kind == "cos2d":
            if grid.dim != 2:
                raise ValueError("cos2d requires dim == 2")
            return Field(grid, np.cos(x[0]) + np.cos(x[1]))
        if self.kind == "bump":
            return Field(grid, np.exp(4.0 * (np.cos(x[0]) - 1.0)))
        if grid.dim != 1:
            raise ValueError("coeffs initial data is one-dimensional")
        vals = np.zeros(grid.shape)
        for i in range(0, len(self.params), 2):
            k = i // 2 + 1
            vals += self.params[i] * np.cos(k * x[0]) + self.params[i + 1] * np.sin(k * x[0])
        return Field(grid, vals)


def make_initial_data(kind: str, params: tuple[float, ...] = ()) -> InitialData:
    return InitialData(kind, tuple(float(v) for v in params))


# ---------------------------------------------------------------------------
# sweep planning
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ResolutionRule:
    """Pick n_points so the viscous layer width eps^(1/(2s)) is resolved.

    The grid is chosen as the smallest power of two with at least `factor`
    cells across one layer width, clamped to [n_min, n_max].  The defaults
    are calibrated on the quadratic benchmark: solution-level errors are
    already converged at factor 3 (doubling or octupling the grid moves
    them by < 1e-4 relative), the 1024 floor keeps the fixed-scale
    curvature probe free of under-resolution ripples at large s, and past
    the cap the extra cells only sharpen sub-grid front structure that no
    solution-level quantity feels.
    """

    factor: float = 3.0
    n_min: int = 1024
    n_max: int = 16384

    def __post_init__(self) -> None:
        if self.factor <= 0:
            raise ValueError("factor must be positive")
        for name in ("n_min", "n_max"):
            v = getattr(self, name)
            if v < 8 or (v & (v - 1)):
                raise ValueError(f"{name} must be a power of two >= 8, got {v}")
        if self.n_min > self.n_max:
            raise ValueError("n_min must not exceed n_max")

    def n_for(self, s: float, eps: float) -> int:
        width = eps ** (1.0 / (2.0 * s))
        need = self.factor * 2.0 * math.pi / width
        return int(min(max(_pow2ceil(need), self.n_min), self.n_max))


@dataclass(frozen=True)
class SweepPlan:
    """Full description of one rate-measurement sweep."""

    dim: int
    s_values: tuple[float, ...]
    epsilons: tuple[float, ...]
    p_values: tuple[float, ...]
    hamiltonian: HamiltonianSpec
    u0: InitialData
    forcing: object = field(default_factory=ZeroForcing)
    T: float = 2.0
    snapshot_times: tuple[float, ...] = ()
    reference: str = "hopf_lax"
    fine_factor: int = 4
    dt_cfl: float = 0.5
    resolution: ResolutionRule = field(default_factory=ResolutionRule)
    n_points: int | None = None
    record_one_sided: bool = True

    def __post_init__(self) -> None:
        if self.dim not in (1, 2):
            raise ValueError(f"dim must be 1 or 2, got {self.dim}")
        eps = tuple(float(e) for e in self.epsilons)
        if len(eps) < 5:
            raise ValueError(f"need at least 5 viscosities, got {len(eps)}")
        if min(eps) <= 0:
            raise ValueError("viscosities must be positive")
        if max(eps) / min(eps) < 16.0 * (1.0 - 1e-12):
            raise ValueError("viscosities must span at least four octaves")
        object.__setattr__(self, "epsilons", tuple(sorted(eps, reverse=True)))
        svals = tuple(float(s) for s in self.s_values)
        if not svals or any(not 0.0 < s <= 1.0 for s in svals):
            raise ValueError("s values must lie in (0, 1]")
        object.__setattr__(self, "s_values", tuple(sorted(svals)))
        ps = tuple(float(p) for p in self.p_values)
        if not ps or any((p < 1.0) for p in ps):
            raise ValueError("p values must satisfy p >= 1")
        object.__setattr__(self, "p_values", tuple(sorted(ps)))
        if self.reference not in ("hopf_lax", "monotone"):
            raise ValueError(f"reference must be 'hopf_lax' or 'monotone', got {self.reference!r}")
        if self.reference == "hopf_lax" and not getattr(self.forcing, "is_zero", False):
            raise ValueError("the hopf_lax reference requires zero forcing")
        if not self.snapshot_times:
            object.__setattr__(
                self, "snapshot_times", tuple(np.linspace(0.0, self.T, 16).tolist())
            )
        tsnap = tuple(sorted(set(float(t) for t in self.snapshot_times)))
        if tsnap[0] < 0.0 or tsnap[-1] > self.T * (1 + 1e-12):
            raise ValueError("snapshot times must lie in [0, T]")
        object.__setattr__(self, "snapshot_times", tsnap)
        if self.n_points is not None and (self.n_points < 8 or self.n_points & (self.n_points - 1)):
            raise ValueError("explicit n_points must be a power of two >= 8")

    def n_for(self, s: float, eps: float) -> int:
        if self.n_points is not None:
            return self.n_points
        return self.resolution.n_for(s, eps)


@dataclass(frozen=True)
class RateRow:
    s: float
    p: float
    epsilon: float
    error: float
    norm: str
    ref_kind: str


@dataclass(frozen=True)
class CellResult:
    """Diagnostics for one (s, eps) solve within a sweep."""

    s: float
    epsilon: float
    n_points: int
    n_steps: int
    errors: dict
    times: np.ndarray
    k_profile: np.ndarray
    grad_sup_profile: np.ndarray
    one_sided_error: float | None
    one_sided_bound: float | None


@dataclass(frozen=True)
class SweepResult:
    plan: SweepPlan
    rows: tuple[RateRow, ...]
    cells: dict
    failures: tuple[tuple[float, float, str], ...]
    eval_n: dict

    def errors_for(self, s: float, p: float) -> tuple[np.ndarray, np.ndarray]:
        """(epsilons, errors) for one (s, p) slice, largest eps first."""
        eps, err = [], []
        for row in self.rows:
            if row.s == s and row.p == p:
                eps.append(row.epsilon)
                err.append(row.error)
        order = np.argsort(eps)[::-1]
        return np.asarray(eps)[order], np.asarray(err)[order]


def _cell_worker(args: tuple) -> tuple[float, float, object]:
    """Solve one sweep cell and measure its errors (picklable worker)."""
    (plan, s, eps, n_cell, eval_n, ref_values) = args
    grid = TorusGrid(plan.dim, n_cell)
    problem = ProblemSpec(
        grid=grid,
        s=s,
        epsilon=eps,
        hamiltonian=plan.hamiltonian,
        u0=plan.u0.build(grid),
        forcing=plan.forcing,
        T=plan.T,
    )
    try:
        traj = viscous_solve(problem, dt_cfl=plan.dt_cfl, snapshot_times=plan.snapshot_times)
    except (BlowUpError, TailGuardError) as exc:
        return (s, eps, f"{type(exc).__name__}: {exc}")

    factor = n_cell // eval_n
    errors: dict[float, float] = {p: 0.0 for p in plan.p_values}
    one_sided_error = 0.0
    one_sided_bound = 0.0
    eval_grid = TorusGrid(plan.dim, eval_n)
    record_os = plan.record_one_sided and s == 0.5
    for i, t in enumerate(traj.times):
        coarse = subsample(traj.snapshots[i], factor) if factor > 1 else traj.snapshots[i]
        w = coarse.values - ref_values[i]
        wf = Field(eval_grid, w)
        for p in plan.p_values:
            errors[p] = max(errors[p], lp_norm(wf, p))
        if record_os:
            one_sided_error = max(one_sided_error, float(np.max(np.maximum(w, 0.0))))
            one_sided_bound = max(
                one_sided_bound,
                float(np.max(-frac_laplacian(traj.snapshots[i], 0.5).values)),
            )
    cell = CellResult(
        s=s,
        epsilon=eps,
        n_points=n_cell,
        n_steps=traj.n_steps,
        errors=errors,
        times=traj.times.copy(),
        k_profile=traj.k_profile.copy(),
        grad_sup_profile=traj.grad_sup_profile.copy(),
        one_sided_error=one_sided_error if record_os else None,
        one_sided_bound=one_sided_bound if record_os else None,
    )
    return (s, eps, cell)


def _reference_values(plan: SweepPlan, s: float, eval_n: int) -> list[np.ndarray]:
    """Inviscid reference snapshots on the evaluation grid."""
    grid = TorusGrid(plan.dim, eval_n)
    problem = ProblemSpec(
        grid=grid,
        s=s,
        epsilon=0.0,
        hamiltonian=plan.hamiltonian,
        u0=plan.u0.build(grid),
        forcing=plan.forcing,
        T=plan.T,
    )
    if plan.reference == "hopf_lax":
        return [hopf_lax_oracle(problem, t).values for t in plan.snapshot_times]
    traj = monotone_reference(problem, plan.fine_factor, snapshot_times=plan.snapshot_times)
    return [f.values for f in traj.snapshots]


def run_sweep(plan: SweepPlan, threads: int | None = None) -> SweepResult:
    """Execute every (s, eps) cell of the plan and collect error rows.

    Cells that trip a solver guard are recorded as failures and the sweep
    continues.  With FRACVISC_THREADS > 1 (or threads > 1) the cells are
    solved in a process pool; results are assembled in sorted order so the
    output is identical to the sequential path.
    """
    if threads is None:
        threads = int(os.environ.get("FRACVISC_THREADS", "1"))
    if threads < 1:
        raise ValueError(f"threads must be >= 1, got {threads}")

    jobs = []
    eval_ns: dict[float, int] = {}
    refs: dict[float, list[np.ndarray]] = {}
    for s in plan.s_values:
        ns = {eps: plan.n_for(s, eps) for eps in plan.epsilons}
        eval_n = min(ns.values())
        eval_ns[s] = eval_n
        refs[s] = _reference_values(plan, s, eval_n)
        for eps in plan.epsilons:
            jobs.append((plan, s, eps, ns[eps], eval_n, refs[s]))

    if threads == 1:
        outcomes = [_cell_worker(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            outcomes = list(pool.map(_cell_worker, jobs))

    cells: dict[tuple[float, float], CellResult] = {}
    failures: list[tuple[float, float, str]] = []
    for s, eps, out in outcomes:
        if isinstance(out, str):
            failures.append((s, eps, out))
        else:
            cells[(s, eps)] = out

    ref_kind = plan.reference
    rows: list[RateRow] = []
    for s in plan.s_values:
        for p in plan.p_values:
            for eps in plan.epsilons:
                cell = cells.get((s, eps))
                if cell is None:
                    continue
                norm = "sup" if math.isinf(p) else "Lp"
                rows.append(RateRow(s, p, eps, cell.errors[p], norm, ref_kind))
    return SweepResult(
        plan=plan,
        rows=tuple(rows),
        cells=cells,
        failures=tuple(failures),
        eval_n=eval_ns,
    )


# ---------------------------------------------------------------------------
# rate fitting
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RateFit:
    """Least-squares fits of err(eps) against both rate models.

    exponent/prefactor/residual_power describe err ~ prefactor * eps^exponent;
    residual_power_log describes err ~ prefactor_log * eps |log eps| (the
    exponent of that model is pinned at one).  preferred is 'power',
    'power_log', or 'tie'; the models are considered distinguishable only
    when the RMS log-residuals differ by at least twenty percent.
    """

    exponent: float
    prefactor: float
    residual_power: float
    prefactor_log: float
    residual_power_log: float
    preferred: str
    n_used: int

    def accepted_exponent(self, allow_log: bool = False) -> float:
        """Exponent for acceptance checks; the log model counts as one."""
        if allow_log and self.preferred in ("power_log", "tie"):
            return max(self.exponent, 1.0) if self.preferred == "tie" else 1.0
        return self.exponent


def fit_rate(epsilons, errors) -> RateFit:
    """Fit the two rate models through (eps, err) pairs with err > 0."""
    eps = np.asarray(epsilons, dtype=np.float64)
    err = np.asarray(errors, dtype=np.float64)
    ok = np.isfinite(eps) & np.isfinite(err) & (eps > 0) & (err > 0)
    eps, err = eps[ok], err[ok]
    if eps.size < 3:
        raise ValueError(f"need at least 3 positive samples to fit a rate, got {eps.size}")
    x = np.log(eps)
    y = np.log(err)
    a, c = np.polyfit(x, y, 1)
    res_pow = float(np.sqrt(np.mean((y - (a * x + c)) ** 2)))
    z = np.log(eps * np.abs(np.log(eps)))
    c_log = float(np.mean(y - z))
    res_log = float(np.sqrt(np.mean((y - (z + c_log)) ** 2)))
    if res_log < 0.8 * res_pow:
        preferred = "power_log"
    elif res_pow < 0.8 * res_log:
        preferred = "power"
    else:
        preferred = "tie"
    return RateFit(
        exponent=float(a),
        prefactor=float(math.exp(c)),
        residual_power=res_pow,
        prefactor_log=float(math.exp(c_log)),
        residual_power_log=res_log,
        preferred=preferred,
        n_used=int(eps.size),
    )


def target_exponent(s: float, p: float) -> float | None:
    """Theoretical decay exponent of err(s, p, eps), None when not pinned."""
    if s < 0.5 or s == 0.5:
        return 1.0
    if s == 1.0:
        return 0.5 if math.isinf(p) else 0.5 + 0.5 / p
    return 1.0 / (2.0 * s) if math.isinf(p) else None


# ---------------------------------------------------------------------------
# one-sided (semi-superharmonicity) check
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class OneSidedReport:
    """eps-uniformity of sup[-(-Delta)^(1/2) u_eps] and one-sided rates.

    When the bound sup_t sup_x of -(-Delta)^(1/2) u_eps stays eps-uniform
    (relative spread below 20%), the one-sided sup error
    max_t sup (u_eps - u)^+ is expected to decay linearly in eps.
    """

    epsilons: np.ndarray
    bounds: np.ndarray
    spread: float
    uniform: bool
    errors: np.ndarray
    fit: RateFit | None

    @property
    def applicable(self) -> bool:
        return self.uniform

    def passes(self, min_slope: float = 0.9) -> bool:
        if not self.uniform:
            return True
        return self.fit is not None and self.fit.exponent >= min_slope


def one_sided_check(result: SweepResult, s: float = 0.5) -> OneSidedReport:
    """Assemble the one-sided diagnostics recorded during a sweep."""
    eps_list, bounds, errors = [], [], []
    for eps in result.plan.epsilons:
        cell = result.cells.get((s, eps))
        if cell is None or cell.one_sided_bound is None:
            continue
        eps_list.append(eps)
        bounds.append(cell.one_sided_bound)
        errors.append(cell.one_sided_error)
    if len(eps_list) < 3:
        raise ValueError(
            "one_sided_check needs at least 3 cells with recorded one-sided data; "
            "run the sweep with record_one_sided=True and s = 0.5"
        )
    eps_arr = np.asarray(eps_list)
    b_arr = np.asarray(bounds)
    e_arr = np.asarray(errors)
    bmax = float(np.max(np.abs(b_arr)))
    spread = float((np.max(b_arr) - np.min(b_arr)) / max(bmax, 1e-300))
    uniform = spread < 0.20
    fit = None
    if np.all(e_arr > 0):
        fit = fit_rate(eps_arr, e_arr)
    return OneSidedReport(
        epsilons=eps_arr,
        bounds=b_arr,
        spread=spread,
        uniform=uniform,
        errors=e_arr,
        fit=fit,
    )


# ---------------------------------------------------------------------------
# report emission
# ---------------------------------------------------------------------------


def _p_label(p: float) -> str:
    return "inf" if math.isinf(p) else f"{p:g}"


def emit_report(
    result: SweepResult,
    out_dir: str,
    config_echo: dict | None = None,
    one_sided: OneSidedReport | None = None,
) -> dict:
    """Write rates.csv, report.json and plots.gp into out_dir.

    rates.csv is a pure function of the sweep result (fixed row order and
    17-significant-digit floats), so repeated identical sweeps produce
    byte-identical files.  Returns the report dictionary.
    """
    os.makedirs(out_dir, exist_ok=True)
    plan = result.plan

    lines = ["s,p,epsilon,error,norm,ref_kind"]
    for row in result.rows:
        lines.append(
            ",".join(
                [
                    format_float(row.s),
                    _p_label(row.p),
                    format_float(row.epsilon),
                    format_float(row.error),
                    row.norm,
                    row.ref_kind,
                ]
            )
        )
    with open(os.path.join(out_dir, "rates.csv"), "w") as fh:
        fh.write("\n".join(lines) + "\n")

    fits = {}
    for s in plan.s_values:
        for p in plan.p_values:
            eps, err = result.errors_for(s, p)
            key = f"s={s:g},p={_p_label(p)}"
            if eps.size < 3 or np.any(err <= 0):
                fits[key] = {"status": "insufficient data", "n_points": int(eps.size)}
                continue
            fit = fit_rate(eps, err)
            target = target_exponent(s, p)
            allow_log = s == 0.5 and math.isinf(p)
            entry = {
                "model": fit.preferred,
                "exponent": fit.exponent,
                "prefactor": fit.prefactor,
                "residual_power": fit.residual_power,
                "prefactor_log": fit.prefactor_log,
                "residual_power_log": fit.residual_power_log,
                "n_points": fit.n_used,
                "target": target,
            }
            if target is not None:
                entry["passed"] = bool(fit.accepted_exponent(allow_log) >= target - 0.1)
            fits[key] = entry

    report = {
        "fits": fits,
        "failures": [
            {"s": s, "epsilon": eps, "reason": reason} for s, eps, reason in result.failures
        ],
        "eval_n": {f"{s:g}": int(n) for s, n in result.eval_n.items()},
        "cells": {
            f"s={s:g},eps={eps:g}": {
                "n_points": cell.n_points,
                "n_steps": cell.n_steps,
            }
            for (s, eps), cell in sorted(result.cells.items())
        },
    }
    if one_sided is not None:
        report["one_sided"] = {
            "epsilons": [float(e) for e in one_sided.epsilons],
            "bounds": [float(b) for b in one_sided.bounds],
            "spread": one_sided.spread,
            "uniform": one_sided.uniform,
            "errors": [float(e) for e in one_sided.errors],
            "slope": None if one_sided.fit is None else one_sided.fit.exponent,
        }
    if config_echo is not None:
        report["config"] = config_echo

    with open(os.path.join(out_dir, "report.json"), "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")

    gp = [
        "# gnuplot script: log-log error decay per (s, p) slice",
        "set logscale xy",
        "set xlabel 'epsilon'",
        "set ylabel 'error'",
        "set datafile separator ','",
        "set key outside",
        "plot \\",
    ]
    series = []
    for s in plan.s_values:
        for p in plan.p_values:
            cond = f"(stringcolumn(2) eq '{_p_label(p)}' && abs($1 - {s:g}) < 1e-12)"
            series.append(
                f"  'rates.csv' using ({cond} ? $3 : NaN):4 with linespoints"
                f" title 's={s:g} p={_p_label(p)}'"
            )
    gp.append(", \\\n".join(series))
    with open(os.path.join(out_dir, "plots.gp"), "w") as fh:
        fh.write("\n".join(gp) + "\n")
    return report
