"""Monotone Picard iteration for the mild formulation, with convergence and
divergence classification."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .kernels import KernelSpec
from .profiles import SingularProfile, constant as constant_term, power as power_term
from . import quadrature as Q

#: Horizon used to realize unbounded-time problems on a finite grid.
GLOBAL_HORIZON = 1e3

#: Divergence heuristics: sup-ratio cap, and per-step growth sustained over a window.
SUP_RATIO_CAP = 1e6
GROWTH_FACTOR = 2.0
GROWTH_WINDOW = 3


@dataclass(frozen=True)
class ProblemSpec:
    """Cauchy problem: kernel, nonlinearity (p, gamma), data, and horizon."""

    kernel: KernelSpec
    p: float
    gamma: float
    u0: SingularProfile
    T: float = 1.0

    def __post_init__(self):
        if self.p <= 1.0:
            raise ValueError("need p > 1")
        if not (0.0 < self.gamma < min(self.kernel.theta, self.kernel.dim)):
            raise ValueError("need 0 < gamma < min(theta, dim)")
        if self.u0.dim != self.kernel.dim:
            raise ValueError("data dimension does not match the kernel")
        if not (self.T > 0.0):
            raise ValueError("need T > 0")

    @property
    def z(self) -> tuple:
        """Location of the data singularity (origin when the data is regular)."""
        centers = self.u0.singular_centers()
        return centers[0] if centers else (0.0,) * self.kernel.dim

    @property
    def horizon(self) -> float:
        return GLOBAL_HORIZON if math.isinf(self.T) else self.T


@dataclass
class SolveReport:
    """Iteration history and classification of one Picard run."""

    classification: str  # converged | diverging | inconclusive
    iterations: int
    sup_ratios: list
    residuals: list
    fixed_point_residual: float | None
    divergence_reason: str | None = None
    certificate_link: str | None = None


def default_envelope(problem: ProblemSpec, domain_radius: float) -> SingularProfile:
    """Data profile plus a floor constant, so nodal ratios stay order one."""
    terms = []
    far = 0.0
    for t in problem.u0.terms:
        if t.kind in ("power", "logpower"):
            terms.append(t)
            far = max(far, t.amplitude * domain_radius ** (-t.a))
        elif t.kind == "dirac" and t.amplitude > 0:
            # a Dirac seeds a bump; envelope it by a near-borderline power
            terms.append(power_term(t.amplitude, 0.999 * problem.kernel.dim, t.center))
            far = max(far, t.amplitude * domain_radius ** (-0.999 * problem.kernel.dim))
    const = problem.u0.constant_part() + max(far, 1e-12)
    terms.append(constant_term(const))
    return SingularProfile(tuple(terms), dim=problem.kernel.dim)


def picard_solve(problem: ProblemSpec, grid: Q.SpaceTimeGrid | None = None,
                 q: Q.QuadSpec | None = None, max_iter: int = 40,
                 conv_tol: float = 1e-5, envelope: SingularProfile | None = None,
                 keep_iterates: bool = False,
                 nonlinear_off: bool = False) -> tuple[SolveReport, Q.DiscreteField]:
    """Iterate u <- semigroup(u0) + duhamel(u) until convergence or a divergence signature.

    The first iterate is the semigroup term alone; monotonicity of the map
    makes the nodal values nondecreasing, so residual decay certifies a fixed
    point while sustained growth or a divergence signature classifies the run
    as diverging.
    """
    q = Q.QuadSpec.for_duhamel() if q is None else q
    grid = Q.SpaceTimeGrid.build(problem) if grid is None else grid
    if envelope is None:
        envelope = default_envelope(problem, grid.domain_radius)

    base = Q.heat_convolve_grid(problem.kernel, problem.u0, grid, q)
    fld = Q.DiscreteField.from_values(grid, envelope, base)
    env_nodes = fld.envelope_at_nodes()

    sup_ratios = [float(np.max(base / env_nodes))]
    residuals: list[float] = []
    iterates = [fld] if keep_iterates else []
    classification = "inconclusive"
    reason = None
    fp_resid = None

    if not np.any(base > 0):
        # zero data is already the fixed point
        return SolveReport("converged", 0, sup_ratios, [], 0.0), fld

    for n in range(1, max_iter + 1):
        if nonlinear_off:
            new_vals = base.copy()
        else:
            try:
                duh = Q.duhamel_grid(problem.kernel, problem.gamma, problem.p, fld, grid, q)
            except Q.DivergenceSignature as sig:
                classification = "diverging"
                reason = f"duhamel divergence signature: {sig}"
                break
            new_vals = base + duh
        sup = float(np.max(new_vals / env_nodes))
        resid = float(np.max(np.abs(new_vals - fld.values) / (1.0 + fld.values)))
        sup_ratios.append(sup)
        residuals.append(resid)
        fp_resid = float(np.max(np.abs(new_vals - fld.values) / env_nodes))
        fld = Q.DiscreteField.from_values(grid, envelope, new_vals)
        if keep_iterates:
            iterates.append(fld)
        if sup > SUP_RATIO_CAP:
            classification = "diverging"
            reason = f"sup ratio exceeded cap {SUP_RATIO_CAP:g}"
            break
        if len(sup_ratios) > GROWTH_WINDOW:
            window = sup_ratios[-(GROWTH_WINDOW + 1):]
            if all(b >= GROWTH_FACTOR * a for a, b in zip(window, window[1:])):
                classification = "diverging"
                reason = f"growth factor >= {GROWTH_FACTOR} over {GROWTH_WINDOW} iterations"
                break
        if resid < conv_tol:
            classification = "converged"
            break

    iterations = len(residuals)
    report = SolveReport(classification, iterations, sup_ratios, residuals,
                         fp_resid, divergence_reason=reason)
    report._iterates = iterates  # diagnostic retention, requested via keep_iterates
    return report, fld


def verify_monotone(report: SolveReport, fields: list | None = None) -> float:
    """Max envelope-relative violation of nodewise monotonicity across iterates."""
    fields = getattr(report, "_iterates", None) if fields is None else fields
    if not fields or len(fields) < 2:
        raise ValueError("need at least two retained iterates")
    worst = 0.0
    for a, b in zip(fields, fields[1:]):
        env = a.envelope_at_nodes()
        worst = max(worst, float(np.max((a.values - b.values) / env)))
    return max(worst, 0.0)


def scaling_check(problem: ProblemSpec, lam: float = 2.0,
                  grid: Q.SpaceTimeGrid | None = None, q: Q.QuadSpec | None = None,
                  max_iter: int = 8, nonlinear_off: bool = False) -> float:
    """Self-similarity mismatch for origin-centred pure-power data.

    For data c|x|**(-(theta-gamma)/(p-1)) the problem is scale invariant, so a
    computed iterate must agree with its own rescaling
    lam**a u(lam x, lam**theta t) at common space-time nodes.
    """
    terms = [t for t in problem.u0.terms if t.kind != "constant"]
    if len(terms) != 1 or terms[0].kind != "power":
        raise ValueError("scaling check needs pure power data")
    t0 = terms[0]
    if any(c != 0.0 for c in t0.center):
        raise ValueError("scaling check needs data centred at the origin")
    theta = problem.kernel.theta
    a_opt = (theta - problem.gamma) / (problem.p - 1.0)
    if not math.isclose(t0.a, a_opt, rel_tol=1e-9):
        raise ValueError("scaling check needs the scale-covariant exponent")
    if problem.u0.constant_part() != 0.0:
        raise ValueError("scaling check needs pure power data")

    grid = Q.SpaceTimeGrid.build(problem) if grid is None else grid
    _, fld = picard_solve(problem, grid=grid, max_iter=max_iter,
                          q=q, nonlinear_off=nonlinear_off)

    xs = grid.points
    ts = grid.times
    mism = 0.0
    for j, t in enumerate(ts):
        t_scaled = lam ** theta * t
        if t_scaled > ts[-1] * (1 + 1e-12):
            continue
        keep = np.abs(xs) * lam <= grid.domain_radius
        if not keep.any():
            continue
        direct = fld.values[j, keep]
        rescaled = lam ** t0.a * fld.eval(lam * xs[keep], t_scaled)
        denom = np.maximum(np.abs(direct), 1e-300)
        mism = max(mism, float(np.max(np.abs(direct - rescaled) / denom)))
    return mism
