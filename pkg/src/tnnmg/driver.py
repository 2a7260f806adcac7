"""The TNNMG iteration, convergence monitoring and nested iteration."""

from __future__ import annotations

import csv
import io
import logging
import math
import warnings
from dataclasses import dataclass, field, fields

import numpy as np

from .core import InternalError, SeparableFunctional, UsageError
from .linsolve import GridHierarchy, LinearSolverConfig, solve_correction
from .nonsmooth import DEFAULT_CURVATURE_CAP, DEFAULT_EPS
from .postprocess import RHO_MAX, damp, project_into_domain
from .smoother import MONOTONE_SLACK, SmootherConfig, smooth
from .truncation import build_pattern, truncated_gradient, truncated_hessian

log = logging.getLogger(__name__)

# consecutive rejected corrections before a diagnostic warning
REJECTION_WARN_COUNT = 3


@dataclass(frozen=True)
class SolveConfig:
    max_iter: int = 200
    tol: float = 1e-10
    energy_tol: float = 1e-12
    eps: float = DEFAULT_EPS
    curvature_cap: float = DEFAULT_CURVATURE_CAP
    smoother: SmootherConfig = field(default_factory=SmootherConfig)
    linear: LinearSolverConfig = field(default_factory=LinearSolverConfig)
    rho_max: float = RHO_MAX
    project_initial: bool = True

    def __post_init__(self):
        if self.max_iter < 0:
            raise UsageError("max_iter must be non-negative")
        for name in ("tol", "energy_tol", "eps", "curvature_cap", "rho_max"):
            if not getattr(self, name) > 0:
                raise UsageError(f"{name} must be positive")


@dataclass
class IterationRecord:
    iter: int
    energy: float
    energy_after_smoothing: float
    correction_norm: float
    damping: float
    truncated_fraction: float
    increment: float
    # first-order decrease promised by the correction; not part of the CSV
    predicted_decrease: float = field(default=0.0, repr=False)


CSV_COLUMNS = [f.name for f in fields(IterationRecord)][:7]


@dataclass
class IterationReport:
    rows: list[IterationRecord] = field(default_factory=list)
    converged: bool = False
    projected_initial: bool = False
    final_energy: float = math.nan

    @property
    def iterations(self) -> int:
        return len(self.rows)

    def energies(self) -> np.ndarray:
        """Energies ``J(u^0), ..., J(u^N)`` including the final iterate."""
        return np.array([r.energy for r in self.rows] + [self.final_energy])

    def asymptotic_rate(self, last: int = 5) -> float:
        """Geometric mean of increment ratios over the last iterations."""
        inc = np.array([r.increment for r in self.rows], dtype=float)
        inc = inc[inc > 0]
        if inc.size < 2:
            return math.nan
        ratios = inc[1:] / inc[:-1]
        ratios = ratios[-last:]
        return float(np.exp(np.mean(np.log(ratios))))

    def to_csv(self, stream=None) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for r in self.rows:
            writer.writerow([r.iter] + [f"{getattr(r, c):.17g}" for c in CSV_COLUMNS[1:]])
        text = buf.getvalue()
        if stream is not None:
            stream.write(text)
        return text


def _slack(energy: float) -> float:
    return MONOTONE_SLACK * (1.0 + abs(energy))


def tnnmg_step(f: SeparableFunctional, u: np.ndarray, cfg: SolveConfig | None = None,
               hierarchy: GridHierarchy | None = None, index: int = 0):
    """One TNNMG iteration; returns the new iterate and its report row."""
    cfg = cfg or SolveConfig()
    energy = f.value(u)
    if energy == math.inf:
        raise UsageError("TNNMG step needs a feasible iterate")

    w = smooth(f, u, cfg.smoother)
    energy_half = f.value(w)
    if energy_half > energy + _slack(energy):
        raise InternalError(f"smoothing: energy rose from {energy!r} to {energy_half!r}")

    pattern = build_pattern(f, w, cfg.eps, cfg.curvature_cap)
    g = truncated_gradient(f, w, pattern)
    H = truncated_hessian(f, w, pattern)
    v = solve_correction(H, g, pattern, hierarchy, cfg.linear)

    vt = project_into_domain(f, w, v)
    rho = damp(f, w, vt, cfg.rho_max)
    u_new = w + rho * vt if rho > 0.0 else w
    energy_new = f.value(u_new)
    if energy_new > energy_half + _slack(energy_half):
        raise InternalError(f"correction: energy rose from {energy_half!r} to {energy_new!r}")

    row = IterationRecord(
        iter=index,
        energy=energy,
        energy_after_smoothing=energy_half,
        correction_norm=float(np.linalg.norm(vt)),
        damping=float(rho),
        truncated_fraction=pattern.truncated_fraction,
        increment=float(np.linalg.norm(u_new - u)),
        predicted_decrease=-float(g @ vt),
    )
    return u_new, row


def solve(f: SeparableFunctional, u0: np.ndarray, cfg: SolveConfig | None = None,
          hierarchy: GridHierarchy | None = None):
    """Iterate TNNMG from ``u0``; returns ``(u, report)``.

    Stops once the increment is below ``tol`` and the energy change below
    ``energy_tol * (1 + |J|)`` in two consecutive iterations.  Running out
    of iterations is reported through ``report.converged``.
    """
    cfg = cfg or SolveConfig()
    u = f.structure.check(u0).astype(float, copy=True)
    report = IterationReport()
    if not f.is_feasible(u):
        if not cfg.project_initial:
            raise UsageError("initial iterate is outside the domain")
        u = f.project(u)
        report.projected_initial = True
        log.info("initial iterate projected into the domain")

    quiet = 0
    rejected = 0
    for nu in range(cfg.max_iter):
        u, row = tnnmg_step(f, u, cfg, hierarchy, nu)
        report.rows.append(row)
        energy_new = f.value(u)
        # rejections are only suspicious if the decrease would be resolvable
        resolvable = row.predicted_decrease > _slack(row.energy_after_smoothing)
        if row.damping == 0.0 and row.correction_norm > 0.0 and resolvable:
            rejected += 1
            log.debug("iteration %d: correction rejected", nu)
            if rejected == REJECTION_WARN_COUNT:
                warnings.warn("repeated rejected corrections; the truncation threshold eps "
                              "may be badly tuned", RuntimeWarning, stacklevel=2)
        else:
            rejected = 0
        # a rejected correction that promised real progress is not convergence
        small = (row.increment < cfg.tol and rejected == 0
                 and abs(row.energy - energy_new) <= cfg.energy_tol * (1.0 + abs(energy_new)))
        quiet = quiet + 1 if small else 0
        if quiet >= 2:
            report.converged = True
            break
    report.final_energy = f.value(u)
    return u, report


def nested_solve(builder, finest: int, cfg: SolveConfig | None = None, coarsest: int = 1,
                 **kwargs):
    """Solve levels ``coarsest..finest`` in turn, prolonging each solution.

    ``builder(level, **kwargs)`` must return a problem instance with
    ``functional``, ``hierarchy`` and ``initial``.  Returns the finest
    solution and the list of ``(level, report)`` pairs.
    """
    if not 1 <= coarsest <= finest:
        raise UsageError(f"need 1 <= coarsest ({coarsest}) <= finest ({finest})")
    cfg = cfg or SolveConfig()
    reports = []
    u = None
    for level in range(coarsest, finest + 1):
        inst = builder(level, **kwargs)
        f = inst.functional
        if u is None:
            u0 = inst.initial
        else:
            P = inst.hierarchy.prolongations[-1]
            u0 = f.project(P @ u)
        u, report = solve(f, u0, cfg, inst.hierarchy)
        reports.append((level, report))
    return u, reports
