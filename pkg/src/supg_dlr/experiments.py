"""Experiment drivers: single runs, h-convergence and rank studies on the
manufactured problem, error metrics, CSV reports and order fitting."""
from __future__ import annotations

import csv
import dataclasses
import io
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, SupgDlrError, ValidationError
from .fem1d import LagrangeSpace, Mesh1D, assemble, estimate_inverse_constant
from .measure import DiscreteMeasure
from .oracle import ManufacturedProblem, best_truncation_error, initial_field, project_field
from .stepper import COUPLINGS, TimeGrid, run
from .supg import assemble_supg, select_delta, validate_coefa

log = logging.getLogger(__name__)

CSV_HEADER = ("h,dt,delta,rank,err_l2_final,err_supg_accum,err_combined,trunc_err,"
              "nu_hat_max,c_lbi_max,stab_lhs,stab_rhs,lemma3_max,prop1_max,wall_time_s")


@dataclass
class ExperimentConfig:
    degree: int = 1
    rank: int = 6
    ranks: tuple = (1, 2, 3)
    levels: tuple = (3, 4, 5, 6)
    t_final: float = 0.5
    dt_coeff: float = 5.0
    dt_exponent: float = None  # None -> 2(k+1)/3
    n_collocation: int = 15
    delta_safety: float = 1.0
    strict_stability: bool = False
    out: str = None
    ic_mode: str = "svd"
    coupling: str = "implicit"
    epsilon: float = 1e-8
    b: float = 1.0
    diagnostics: bool = True
    inject_exact: bool = False
    jobs: int = 1

    def __post_init__(self):
        self.levels = tuple(int(i) for i in self.levels)
        self.ranks = tuple(int(r) for r in self.ranks)
        if self.degree not in (1, 2):
            raise ConfigurationError(f"degree must be 1 or 2, got {self.degree}")
        positive = {"rank": self.rank, "t_final": self.t_final, "dt_coeff": self.dt_coeff,
                    "n_collocation": self.n_collocation, "delta_safety": self.delta_safety,
                    "jobs": self.jobs}
        for name, val in positive.items():
            if not val > 0:
                raise ConfigurationError(f"{name} must be positive, got {val}")
        if self.dt_exponent is not None and not self.dt_exponent > 0:
            raise ConfigurationError("dt_exponent must be positive")
        if not self.levels or min(self.levels) < 1:
            raise ConfigurationError("levels must be positive integers")
        if self.ic_mode not in ("svd", "interp"):
            raise ConfigurationError(f"ic_mode must be svd or interp, got {self.ic_mode!r}")
        if self.coupling not in COUPLINGS:
            raise ConfigurationError(f"coupling must be one of {COUPLINGS}")
        if self.delta_safety > 1:
            raise ConfigurationError("delta_safety must be in (0, 1]")

    @property
    def time_exponent(self):
        return 2 * (self.degree + 1) / 3 if self.dt_exponent is None else self.dt_exponent

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)


_BOOL = {"1": True, "true": True, "yes": True, "on": True,
         "0": False, "false": False, "no": False, "off": False}


def parse_int_list(text):
    """'3..6' -> (3, 4, 5, 6); '1,2,3' -> (1, 2, 3)."""
    text = str(text).strip()
    if ".." in text:
        lo, hi = text.split("..")
        return tuple(range(int(lo), int(hi) + 1))
    return tuple(int(tok) for tok in text.replace(" ", "").split(",") if tok)


def _coerce(name, raw):
    ftype = {f.name: f for f in fields(ExperimentConfig)}[name]
    default = ftype.default
    if name in ("levels", "ranks"):
        return parse_int_list(raw)
    if isinstance(default, bool):
        try:
            return _BOOL[str(raw).strip().lower()]
        except KeyError:
            raise ConfigurationError(f"{name}: not a boolean: {raw!r}") from None
    if isinstance(default, int):
        return int(raw)
    if isinstance(default, float) or name == "dt_exponent":
        return float(raw)
    return str(raw).strip()


def read_config_file(path):
    """Parse ``key = value`` lines; '#' starts a comment. Unknown keys fail."""
    known = {f.name for f in fields(ExperimentConfig)}
    values = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"{path}:{lineno}: expected 'key = value'")
        key, raw = (part.strip() for part in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in known:
            raise ConfigurationError(f"{path}:{lineno}: unknown key {key!r}")
        try:
            values[key] = _coerce(key, raw)
        except ValueError as exc:
            raise ConfigurationError(f"{path}:{lineno}: bad value for {key}: {exc}") from exc
    return values


@dataclass
class LevelRecord:
    h: float
    dt: float
    delta: float
    rank: int
    err_l2_final: float
    err_supg_accum: float
    err_combined: float
    trunc_err: float
    nu_hat_max: float
    c_lbi_max: float
    stab_lhs: float
    stab_rhs: float
    lemma3_max: float
    prop1_max: float
    wall_time_s: float

    def as_row(self):
        return [repr(self.rank) if f.name == "rank" else format(getattr(self, f.name), ".17g")
                for f in fields(self)]


assert ",".join(f.name for f in fields(LevelRecord)) == CSV_HEADER


@dataclass
class RunReport:
    records: list = field(default_factory=list)
    slope: float = float("nan")
    fit_levels: list = field(default_factory=list)
    notes: list = field(default_factory=list)

    def to_csv(self, path=None):
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(CSV_HEADER.split(","))
        for rec in self.records:
            writer.writerow(rec.as_row())
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text

    @classmethod
    def from_csv(cls, text):
        reader = csv.reader(io.StringIO(text))
        header = next(reader)
        if ",".join(header) != CSV_HEADER:
            raise ValueError(f"unexpected CSV header: {header}")
        records = []
        for row in reader:
            vals = {name: (int(v) if name == "rank" else float(v))
                    for name, v in zip(header, row)}
            records.append(LevelRecord(**vals))
        return cls(records=records)

    def summary(self):
        lines = ["    h            dt           delta        R  err_combined  trunc_err"]
        for rec in self.records:
            lines.append(f"  {rec.h:.6e} {rec.dt:.6e} {rec.delta:.6e} {rec.rank:2d} "
                         f"{rec.err_combined:.6e} {rec.trunc_err:.6e}")
        if self.fit_levels:
            lines.append(f"fitted order of err_combined: {self.slope:.4f} "
                         f"(levels h = {', '.join(f'{h:.5g}' for h in self.fit_levels)})")
        lines.extend(self.notes)
        return "\n".join(lines)

    def records_equal(self, other):
        if len(self.records) != len(other.records):
            return False
        for a, b in zip(self.records, other.records):
            for f in fields(LevelRecord):
                x, y = getattr(a, f.name), getattr(b, f.name)
                if not (x == y or (isinstance(x, float) and math.isnan(x) and math.isnan(y))):
                    return False
        return True


def fit_order(h, err, guard=True):
    """Least-squares slope of log(err) against log(h).

    With ``guard`` the coarsest level is dropped when its error is within a
    factor 2 of the next level (pre-asymptotic). Returns (slope, used mask).
    Non-positive or non-finite errors are excluded; with fewer than two usable
    levels the slope is nan.
    """
    h = np.asarray(h, dtype=float)
    err = np.asarray(err, dtype=float)
    order = np.argsort(-h)
    h, err = h[order], err[order]
    use = np.isfinite(err) & (err > 0)
    idx = np.nonzero(use)[0]
    if guard and idx.size > 2 and err[idx[0]] < 2 * err[idx[1]]:
        use[idx[0]] = False
    mask = np.zeros_like(use)
    mask[order] = use
    if use.sum() < 2:
        return float("nan"), mask
    slope = np.polyfit(np.log(h[use]), np.log(err[use]), 1)[0]
    return float(slope), mask


def error_metrics(states, times, problem, ops):
    """(err_l2_final, err_supg_accum, err_combined) against the closed form.

    err_supg_accum = sqrt(sum_i dt_i ||u(t_i) - u^i||_SUPG^2) over i >= 1.
    """
    if len(states) != len(times):
        raise ConfigurationError(f"{len(states)} snapshots for {len(times)} times")
    space = ops.space
    table = space.error_quadrature()
    x = table.x[..., None]
    w = ops.measure.points[None, None, :]
    m = ops.measure.weights
    eps, delta, b = ops.coeffs.epsilon, ops.params.delta, ops.coeffs.b
    cvals = np.broadcast_to(ops.coeffs.c(x, w), table.x.shape + (m.size,))

    def tensor(state):
        return state.expand() if hasattr(state, "expand") else np.asarray(state)

    def errors(state, t):
        X = tensor(state)
        e = space.evaluate(X, table) - problem.u(t, x, w)
        de = space.evaluate(X, table, 1) - problem.u_x(t, x, w)
        l2 = np.einsum("q,eql->l", table.weights, e * e) @ m
        supg = np.einsum("q,eql->l", table.weights,
                         (eps + delta * b * b) * de * de + cvals * e * e) @ m
        return l2, supg

    l2_final, _ = errors(states[-1], times[-1])
    dts = np.diff(times)
    accum = sum(dt * errors(s, t)[1] for dt, s, t in zip(dts, states[1:], times[1:]))
    err_l2 = float(np.sqrt(l2_final))
    err_supg = float(np.sqrt(accum))
    return err_l2, err_supg, err_l2 + err_supg


@dataclass
class LevelSetup:
    space: LagrangeSpace
    spatial: object
    ops: object
    grid: TimeGrid
    measure: DiscreteMeasure
    inverse_constant: float
    problem: ManufacturedProblem


def setup_level(config, level, rank=None):
    """Mesh, space, C_I, delta and operators for h = 2^-level."""
    problem = ManufacturedProblem(epsilon=config.epsilon, b=config.b)
    measure = DiscreteMeasure.uniform_grid(config.n_collocation)
    space = LagrangeSpace(Mesh1D(0.0, 1.0, 2 ** level), config.degree)
    coeffs = problem.coefficients().with_sampled_bounds(space, measure)
    validate_coefa(coeffs, space, measure)
    spatial = assemble(space, coeffs)
    c_i = estimate_inverse_constant(space, spatial)
    grid = TimeGrid.from_target_step(config.t_final,
                                     config.dt_coeff * space.h ** config.time_exponent)
    params = select_delta(space.h, grid.dt, coeffs, c_i, config.delta_safety)
    ops = assemble_supg(space, coeffs, params, measure, spatial)
    return LevelSetup(space, spatial, ops, grid, measure, c_i, problem)


def run_level(config, level, rank=None):
    """One solver run at h = 2^-level; returns (LevelRecord, RunResult or None)."""
    rank = config.rank if rank is None else rank
    start = time.perf_counter()
    st = setup_level(config, level)
    if not config.inject_exact and rank > min(st.space.n_interior, st.measure.size):
        raise ConfigurationError(
            f"rank {rank} exceeds min(N_h, N_C) = {min(st.space.n_interior, st.measure.size)}")
    times = st.grid.times
    if config.inject_exact:
        states = [project_field(lambda x, w, t=t: st.problem.u(t, x, w), st.space, st.spatial,
                                st.measure) for t in times]
        result = None
        nu = c_lbi = lemma3 = prop1 = float("nan")
        lhs = rhs = float("nan")
    else:
        u0, _ = initial_field(st.ops.coeffs, st.space, st.spatial, st.measure, rank,
                              config.ic_mode)
        result = run(u0, st.grid, st.ops, coupling=config.coupling,
                     strict=config.strict_stability, diagnostics=config.diagnostics)
        states = result.states
        nu = result.max_diagnostic("nu_hat")
        c_lbi = result.max_diagnostic("c_lbi")
        lemma3 = result.max_diagnostic("lemma3_residual")
        prop1 = result.max_diagnostic("prop1_residual")
        lhs, rhs = float(result.stability_lhs[-1]), float(result.stability_rhs[-1])
    err_l2, err_supg, err_comb = error_metrics(states, times, st.problem, st.ops)
    trunc, _ = best_truncation_error(st.problem, st.space, st.spatial, st.measure, rank,
                                     [config.t_final])
    record = LevelRecord(
        h=st.space.h, dt=st.grid.dt, delta=st.ops.params.delta, rank=rank,
        err_l2_final=err_l2, err_supg_accum=err_supg, err_combined=err_comb,
        trunc_err=float(trunc[0]), nu_hat_max=nu, c_lbi_max=c_lbi, stab_lhs=lhs,
        stab_rhs=rhs, lemma3_max=lemma3, prop1_max=prop1,
        wall_time_s=time.perf_counter() - start)
    log.info("level %d rank %d: h=%.4g dt=%.4g err=%.4e (%.1fs)", level, rank, record.h,
             record.dt, err_comb, record.wall_time_s)
    return record, result


def _failed_record(config, level, rank):
    h = 2.0 ** -level
    nan = float("nan")
    dt = TimeGrid.from_target_step(config.t_final, config.dt_coeff * h ** config.time_exponent).dt
    return LevelRecord(h=h, dt=dt, delta=nan,
                       rank=rank, err_l2_final=nan, err_supg_accum=nan, err_combined=nan,
                       trunc_err=nan, nu_hat_max=nan, c_lbi_max=nan, stab_lhs=nan,
                       stab_rhs=nan, lemma3_max=nan, prop1_max=nan, wall_time_s=nan)


def _job(args):
    config, level, rank = args
    try:
        record, result = run_level(config, level, rank)
        stable = True if result is None else result.stable
        return record, stable, None
    except (ConfigurationError, ValidationError):
        raise
    except SupgDlrError as exc:
        if config.strict_stability:
            raise
        return _failed_record(config, level, rank), False, f"{type(exc).__name__}: {exc}"


def _run_jobs(config, jobs):
    if config.jobs > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=config.jobs) as pool:
            return list(pool.map(_job, jobs))
    return [_job(j) for j in jobs]


def _finish(report, config, outcomes, jobs):
    for (cfg, level, rank), (record, stable, error) in zip(jobs, outcomes):
        report.records.append(record)
        if error:
            report.notes.append(f"level {level}, rank {rank} failed: {error}")
        elif not stable:
            report.notes.append(f"level {level}, rank {rank}: stability estimate violated")
    if config.out:
        out = Path(config.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        report.to_csv(out)
        out.with_suffix(".txt").write_text(report.summary() + "\n")
    return report


def convergence_study(config):
    """h-sweep at fixed rank with dt = C h^p; fits the order of err_combined."""
    if len(config.levels) < 3:
        raise ConfigurationError("convergence study needs at least 3 levels")
    jobs = [(config, level, config.rank) for level in config.levels]
    report = RunReport()
    outcomes = _run_jobs(config, jobs)
    hs = [o[0].h for o in outcomes]
    errs = [o[0].err_combined for o in outcomes]
    report.slope, mask = fit_order(hs, errs)
    report.fit_levels = [h for h, used in zip(hs, mask) if used]
    if not np.isfinite(report.slope):
        report.notes.append("order not fitted: fewer than two levels with positive error")
    trunc_slope, _ = fit_order(hs, [o[0].trunc_err for o in outcomes], guard=False)
    if np.isfinite(trunc_slope):
        report.notes.append(f"fitted order of trunc_err: {trunc_slope:.4f}")
    else:
        report.notes.append("trunc_err is zero at this rank; no order fitted")
    return _finish(report, config, outcomes, jobs)


def rank_study(config):
    """Same (h, dt) per level across ranks, with the best rank-R truncation error."""
    bad = [r for r in config.ranks if r > config.n_collocation]
    if bad:
        raise ConfigurationError(f"ranks {bad} exceed N_C = {config.n_collocation}")
    jobs = [(config, level, r) for level in config.levels for r in config.ranks]
    report = RunReport()
    outcomes = _run_jobs(config, jobs)
    for record, _, _ in outcomes:
        if np.isfinite(record.trunc_err) and record.trunc_err > 0:
            ratio = record.err_l2_final / record.trunc_err
            report.notes.append(f"h={record.h:.5g} R={record.rank}: "
                                f"err_l2_final / trunc_err = {ratio:.3f}")
    by_level = {}
    for record, _, _ in outcomes:
        by_level.setdefault(record.h, []).append(record)
    for h, recs in by_level.items():
        recs = sorted(recs, key=lambda r: r.rank)
        errs = [r.err_combined for r in recs]
        if any(b > 1.05 * a for a, b in zip(errs, errs[1:])):
            report.notes.append(f"h={h:.5g}: error not monotone in R (soft check)")
    return _finish(report, config, outcomes, jobs)


def single_run(config, level=None):
    level = config.levels[-1] if level is None else level
    jobs = [(config, level, config.rank)]
    return _finish(RunReport(), config, _run_jobs(config, jobs), jobs)


def diagnose(config, level=None):
    """Assumption and stabilization report for one level, without time stepping."""
    level = config.levels[0] if level is None else level
    problem = ManufacturedProblem(epsilon=config.epsilon, b=config.b)
    measure = DiscreteMeasure.uniform_grid(config.n_collocation)
    space = LagrangeSpace(Mesh1D(0.0, 1.0, 2 ** level), config.degree)
    coeffs = problem.coefficients()
    report = validate_coefa(coeffs, space, measure)
    coeffs = coeffs.with_sampled_bounds(space, measure)
    spatial = assemble(space, coeffs)
    c_i = estimate_inverse_constant(space, spatial)
    grid = TimeGrid.from_target_step(config.t_final,
                                     config.dt_coeff * space.h ** config.time_exponent)
    params = select_delta(space.h, grid.dt, coeffs, c_i, config.delta_safety)
    ops = assemble_supg(space, coeffs, params, measure, spatial)
    worst = problem.cross_validate()
    lines = [
        f"level {level}: h = {space.h:.6g}, degree {config.degree}, N_h = {space.n_interior}",
        f"c0 = {report.c0:.6g}, c_sup = {report.c_sup:.6g}, "
        f"|b|h/(2 eps) = {report.advection_ratio:.6g}, div b = 0",
        f"C_I = {c_i:.6g}",
        f"dt = {grid.dt:.6g} ({grid.n_steps} steps), delta = {params.delta:.6g}",
        f"delta bounds: reaction {params.bound_reaction:.6g}, diffusion "
        f"{params.bound_diffusion:.6g}, advection {params.bound_advection:.6g}, "
        f"dt/4 {params.bound_time:.6g}",
        "coercivity check passed for all collocation points",
        "manufactured derivatives vs finite differences: "
        + ", ".join(f"{k} {v:.1e}" for k, v in worst.items()),
    ]
    del ops
    return "\n".join(lines)
