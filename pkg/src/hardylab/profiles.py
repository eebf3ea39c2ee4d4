"""Singular initial profiles, critical exponents, the amplitude weight, the
auxiliary convex gauge, and the explicit supersolution templates.

Everything here is symbolic data: profiles are finite sums of Dirac, power,
log-corrected power, and constant terms; templates record which candidate
supersolution to assemble and with which constants.  Numerical evaluation of
the template fields happens in :mod:`hardylab.quadrature`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

TEMPLATE_FORMS = ("ubar", "wbar", "vbar", "wtilde", "ubar_plus", "wbar_plus")

_EQ_TOL = 1e-12


def _isclose(a: float, b: float) -> bool:
    return math.isclose(a, b, rel_tol=_EQ_TOL, abs_tol=1e-300)


@dataclass(frozen=True)
class CriticalExponents:
    p_F: float
    p_gamma: float


def critical_exponents(dim: int, gamma: float, theta: float = 2.0) -> CriticalExponents:
    """Fujita-type exponents 1 + theta/N and 1 + (theta - gamma)/N."""
    if not (0.0 < gamma < min(theta, dim)):
        raise ValueError("need 0 < gamma < min(theta, dim)")
    return CriticalExponents(p_F=1.0 + theta / dim, p_gamma=1.0 + (theta - gamma) / dim)


def psi_weight(z, dim: int, p: float, gamma: float, theta: float = 2.0) -> float:
    """Amplitude weight for data singular at z, by criticality of p.

    Below the Fujita exponent (and at it in low dimension N <= theta) the
    weight is |z|**(theta/(p-1)) * (1+|z|)**(-(theta-gamma)/(p-1)); at or
    above it the weight is |z|**(gamma/(p-1)).  Both branches vanish at z=0.
    """
    r = float(np.linalg.norm(np.atleast_1d(np.asarray(z, dtype=float))))
    p_F = 1.0 + theta / dim
    low_branch = p < p_F and not _isclose(p, p_F)
    if _isclose(p, p_F):
        low_branch = dim <= theta
    if low_branch:
        return r ** (theta / (p - 1.0)) * (1.0 + r) ** (-(theta - gamma) / (p - 1.0))
    return r ** (gamma / (p - 1.0))


# ---------------------------------------------------------------------------
# Singular profiles


@dataclass(frozen=True)
class ProfileTerm:
    kind: str  # dirac | power | logpower | constant
    amplitude: float
    center: tuple = (0.0,)
    a: float = 0.0       # power exponent (power, logpower)
    k: float = 0.0       # log-correction exponent (logpower)
    cutoff: float = 1.0  # support radius of the log-corrected term

    def __post_init__(self):
        if self.kind not in ("dirac", "power", "logpower", "constant"):
            raise ValueError(f"unknown profile term kind {self.kind!r}")
        if self.amplitude < 0:
            raise ValueError("amplitudes must be nonnegative")
        if self.kind in ("power", "logpower") and self.a <= 0:
            raise ValueError("power exponent must be positive")
        if self.kind == "logpower" and (self.k <= 0 or self.cutoff <= 0):
            raise ValueError("logpower needs positive log exponent and cutoff")
        object.__setattr__(self, "center", tuple(float(c) for c in np.atleast_1d(self.center)))


def dirac(amplitude: float, center=(0.0,)) -> ProfileTerm:
    return ProfileTerm("dirac", amplitude, center)


def power(amplitude: float, a: float, center=(0.0,)) -> ProfileTerm:
    return ProfileTerm("power", amplitude, center, a=a)


def logpower(amplitude: float, a: float, k: float, cutoff: float = 1.0, center=(0.0,)) -> ProfileTerm:
    return ProfileTerm("logpower", amplitude, center, a=a, k=k, cutoff=cutoff)


def constant(amplitude: float) -> ProfileTerm:
    return ProfileTerm("constant", amplitude)


@dataclass(frozen=True)
class SingularProfile:
    """Finite sum of Dirac / power / log-corrected / constant terms."""

    terms: tuple
    dim: int = 1

    def __post_init__(self):
        object.__setattr__(self, "terms", tuple(self.terms))
        for term in self.terms:
            if not isinstance(term, ProfileTerm):
                raise TypeError("terms must be ProfileTerm instances")
            if len(term.center) != self.dim and term.kind != "constant":
                raise ValueError("term center dimension mismatch")

    @property
    def locally_integrable(self) -> bool:
        return all(t.kind != "power" or t.a < self.dim for t in self.terms)

    def singular_centers(self) -> list:
        out = []
        for t in self.terms:
            if t.kind in ("dirac", "power", "logpower") and t.amplitude > 0:
                if t.center not in out:
                    out.append(t.center)
        return out

    def constant_part(self) -> float:
        return sum(t.amplitude for t in self.terms if t.kind == "constant")

    def scaled(self, factor: float) -> "SingularProfile":
        return SingularProfile(tuple(replace(t, amplitude=t.amplitude * factor) for t in self.terms),
                               dim=self.dim)

    def with_constant(self, extra: float) -> "SingularProfile":
        if extra == 0:
            return self
        return SingularProfile(self.terms + (constant(extra),), dim=self.dim)

    def to_dict(self) -> dict:
        return {"dim": self.dim, "terms": [
            {"kind": t.kind, "amplitude": t.amplitude, "center": list(t.center),
             "a": t.a, "k": t.k, "cutoff": t.cutoff} for t in self.terms]}

    @staticmethod
    def from_dict(d: dict) -> "SingularProfile":
        terms = tuple(ProfileTerm(t["kind"], t["amplitude"], tuple(t.get("center", (0.0,))),
                                  a=t.get("a", 0.0), k=t.get("k", 0.0), cutoff=t.get("cutoff", 1.0))
                      for t in d["terms"])
        return SingularProfile(terms, dim=d.get("dim", 1))


def _radii(x, center, dim):
    a = np.asarray(x, dtype=float)
    c = np.asarray(center, dtype=float)
    if dim == 1:
        if a.ndim and a.shape[-1] == 1:
            a = a[..., 0]
        return np.abs(a - c[0])
    if a.ndim == 1 and a.shape[0] == dim:
        a = a[None, :]
        return np.sqrt(((a - c) ** 2).sum(axis=-1))[0]
    return np.sqrt(((a - c) ** 2).sum(axis=-1))


def eval_profile(prof: SingularProfile, x):
    """Pointwise value; infinite at singular centers.

    Dirac terms contribute infinity at their center and zero elsewhere; they
    carry mass only under convolution.
    """
    vals = None
    for t in prof.terms:
        if t.kind == "constant":
            v = np.full_like(np.asarray(_radii(x, (0.0,) * prof.dim, prof.dim), dtype=float),
                             t.amplitude, dtype=float)
        else:
            r = _radii(x, t.center, prof.dim)
            with np.errstate(divide="ignore", over="ignore"):
                if t.kind == "dirac":
                    v = np.where(r == 0.0, np.inf, 0.0) * (1.0 if t.amplitude else 0.0)
                elif t.kind == "power":
                    v = t.amplitude * r ** (-t.a)
                else:
                    inside = r <= t.cutoff
                    v = np.where(inside,
                                 t.amplitude * r ** (-t.a)
                                 * np.log(math.e + 1.0 / np.where(r > 0, r, 1.0)) ** (-t.k),
                                 0.0)
                    v = np.where(r == 0.0, np.inf if t.amplitude else 0.0, v)
        vals = v if vals is None else vals + v
    if vals is None:
        vals = np.zeros_like(np.asarray(_radii(x, (0.0,) * prof.dim, prof.dim), dtype=float))
    return vals if vals.ndim else float(vals)


# ---------------------------------------------------------------------------
# Auxiliary convex gauge


@dataclass(frozen=True)
class AuxiliaryH:
    """Strictly increasing convex gauge X**alpha or X*log(A+X)**beta."""

    case: str  # "power" | "log"
    alpha: float = 0.0
    beta: float = 0.0
    bigA: float = math.e
    validated: bool = False

    def __call__(self, X):
        X = np.asarray(X, dtype=float)
        if self.case == "power":
            return X ** self.alpha
        return X * np.log(self.bigA + X) ** self.beta

    def inverse(self, Y):
        """Gauge inverse; closed form in the power case, bracketed bisection otherwise."""
        Y = np.asarray(Y, dtype=float)
        if self.case == "power":
            return Y ** (1.0 / self.alpha)
        hi = np.maximum(Y, 1.0)
        for _ in range(80):  # bracket doubling
            need = self(hi) < Y
            if not need.any():
                break
            hi = np.where(need, 2.0 * hi, hi)
        lo = np.zeros_like(hi)
        for _ in range(110):
            mid = 0.5 * (lo + hi)
            below = self(mid) < Y
            lo = np.where(below, mid, lo)
            hi = np.where(below, hi, mid)
        out = 0.5 * (lo + hi)
        return out if out.ndim else float(out)

    def inverse_bound_constant(self, Y) -> float:
        """Empirical C with inverse(Y) <= C * Y * log(A+Y)**-beta on the sample."""
        if self.case == "power":
            raise ValueError("bound applies to the log case")
        Y = np.asarray(Y, dtype=float)
        return float(np.max(self.inverse(Y) / (Y * np.log(self.bigA + Y) ** (-self.beta))))


_A_SCAN = tuple(math.e * 2.0 ** j for j in range(41))
_GRID = None


def _validation_grid():
    global _GRID
    if _GRID is None:
        _GRID = np.geomspace(1e-8, 1e8, 10_000)
    return _GRID


def monotonicity_conditions(beta: float, bigA: float, p: float, gamma: float,
                            theta: float = 2.0, grid=None) -> dict:
    """Signs of the four gauge monotonicity conditions on a log grid."""
    X = _validation_grid() if grid is None else np.asarray(grid, dtype=float)
    H = AuxiliaryH("log", beta=beta, bigA=bigA)
    HX = H(X)
    cond = {
        "H_increasing": bool(np.all(np.diff(HX) > 0)),
        "power_quotient_increasing": bool(np.all(np.diff(X ** p / HX) > 0)),
        "gauge_quotient_increasing": bool(np.all(np.diff(HX / X) > 0)),
        "weighted_log_decreasing": bool(np.all(np.diff(
            X ** (-(theta - gamma)) * np.log(bigA + 1.0 / X) ** (-1.0 - beta)) < 0)),
    }
    return cond


def select_A_min(beta: float, dim: int, p: float, gamma: float, theta: float = 2.0) -> float:
    """Smallest A = e * 2**j meeting all four monotonicity conditions, doubled for margin."""
    pf = 1.0 + theta / dim
    pg = 1.0 + (theta - gamma) / dim
    if _isclose(p, pf):
        bound = dim / theta
    elif _isclose(p, pg):
        bound = dim / (theta - gamma)
    else:
        raise ValueError("log-corrected gauge applies at the critical exponents only")
    if not (0.0 < beta < bound):
        raise ValueError(f"beta must lie in (0, {bound}) for this case")
    for A in _A_SCAN:
        if all(monotonicity_conditions(beta, A, p, gamma, theta).values()):
            return 2.0 * A
    raise ValueError("no admissible A in the scan family; beta is inadmissible")


def admissible_range(case_p: str, dim: int, p: float, gamma: float, theta: float = 2.0) -> tuple:
    """Open parameter interval for the gauge exponent in each criticality case."""
    pf = 1.0 + theta / dim
    pg = 1.0 + (theta - gamma) / dim
    if case_p == "supercritical-fujita":
        if p <= pf:
            raise ValueError("supercritical-fujita needs p > p_F")
        return (1.0, min(p, dim * (p - 1.0) / theta))
    if case_p == "critical-fujita":
        if not _isclose(p, pf):
            raise ValueError("critical-fujita needs p = p_F")
        return (0.0, dim / theta)
    if case_p == "supercritical-hardy":
        if p <= pg:
            raise ValueError("supercritical-hardy needs p > p_gamma")
        return (1.0, min(p, dim * (p - 1.0) / (theta - gamma)))
    if case_p == "critical-hardy":
        if not _isclose(p, pg):
            raise ValueError("critical-hardy needs p = p_gamma")
        return (0.0, dim / (theta - gamma))
    raise ValueError(f"unknown case {case_p!r}")


def build_aux_H(dim: int, p: float, gamma: float, theta: float = 2.0,
                case_p: str = "supercritical-fujita",
                alpha: float | None = None, beta: float | None = None) -> AuxiliaryH:
    """Gauge with validated parameters; defaults sit at the midpoint of the range."""
    lo, hi = admissible_range(case_p, dim, p, gamma, theta)
    if hi <= lo:
        raise ValueError(f"empty admissible range for {case_p} at (dim={dim}, p={p}, gamma={gamma})")
    if case_p.startswith("supercritical"):
        a = 0.5 * (lo + hi) if alpha is None else float(alpha)
        if not (lo < a < hi):
            raise ValueError(f"alpha must lie in ({lo}, {hi})")
        return AuxiliaryH("power", alpha=a, validated=True)
    b = 0.5 * (lo + hi) if beta is None else float(beta)
    if not (lo < b < hi):
        raise ValueError(f"beta must lie in ({lo}, {hi})")
    A = select_A_min(b, dim, p, gamma, theta)
    return AuxiliaryH("log", beta=b, bigA=A, validated=True)


# ---------------------------------------------------------------------------
# Supersolution templates


@dataclass(frozen=True)
class SupersolutionTemplate:
    """Assembled candidate supersolution with its constants.

    The field is prefactor * c * psi_value * CORE(x, t * time_dilation) + 2*C0,
    where CORE is the gauge-convolved profile (ubar / vbar), the heat kernel
    itself (wbar / wtilde), and the _plus variants swap the amplitude weight
    for its short-horizon improvement.
    """

    form: str
    dim: int
    p: float
    gamma: float
    theta: float
    z: tuple
    T: float
    c: float
    C0: float
    psi_value: float
    prefactor: float
    time_dilation: float
    base_profile: SingularProfile
    H: AuxiliaryH | None = None

    def extremal_data(self) -> SingularProfile:
        """Largest admissible initial data covered by this template."""
        if self.form in ("wbar", "wtilde", "wbar_plus"):
            amp = self.c * self.psi_value
            prof = SingularProfile((dirac(amp, self.z),), dim=self.dim)
        else:
            prof = self.base_profile.scaled(self.c * self.psi_value)
        if self.C0 > 0:
            prof = prof.with_constant(self.C0)
        return prof


def make_template(problem, form: str, c: float, C0: float = 0.0,
                  alpha: float | None = None, beta: float | None = None) -> SupersolutionTemplate:
    """Build one of the explicit supersolution templates for the problem.

    Compatibility between the form and (p, gamma, z, T) follows the theorem
    hypotheses; the _plus variants additionally require T <= |z|**theta.
    """
    if form not in TEMPLATE_FORMS:
        raise ValueError(f"unknown template form {form!r}")
    dim = problem.kernel.dim
    theta = problem.kernel.theta
    p, gamma = problem.p, problem.gamma
    z = tuple(np.atleast_1d(np.asarray(problem.z, dtype=float)))
    T = problem.T
    zn = float(np.linalg.norm(z))
    crit = critical_exponents(dim, gamma, theta)
    if c <= 0 or C0 < 0:
        raise ValueError("need c > 0 and C0 >= 0")

    psi = psi_weight(z, dim, p, gamma, theta)
    H = None
    dilation = 1.0
    prefactor = 2.0

    if form in ("ubar", "ubar_plus"):
        if zn == 0.0:
            raise ValueError("ubar requires a data singularity away from the origin")
        if p < crit.p_F and not _isclose(p, crit.p_F):
            raise ValueError("ubar requires p >= p_F")
        dilation = 2.0
        prefactor = 2.0 ** (dim / theta + 1.0)
        if _isclose(p, crit.p_F):
            base = SingularProfile((logpower(1.0, dim, dim / theta + 1.0, 1.0, z),), dim=dim)
            H = build_aux_H(dim, p, gamma, theta, "critical-fujita", beta=beta)
        else:
            base = SingularProfile((power(1.0, theta / (p - 1.0), z),), dim=dim)
            H = build_aux_H(dim, p, gamma, theta, "supercritical-fujita", alpha=alpha)
    elif form in ("wbar", "wbar_plus"):
        if zn == 0.0:
            raise ValueError("wbar requires a data singularity away from the origin")
        if not (p < crit.p_F) or _isclose(p, crit.p_F):
            raise ValueError("wbar requires p < p_F")
        dilation = 2.0
        prefactor = 2.0 ** (dim / theta + 1.0)
        base = SingularProfile((dirac(1.0, z),), dim=dim)
    elif form == "vbar":
        if p < crit.p_gamma and not _isclose(p, crit.p_gamma):
            raise ValueError("vbar requires p >= p_gamma")
        if _isclose(p, crit.p_gamma):
            base = SingularProfile((logpower(1.0, dim, dim / (theta - gamma) + 1.0, 1.0, z),), dim=dim)
            H = build_aux_H(dim, p, gamma, theta, "critical-hardy", beta=beta)
        else:
            base = SingularProfile((power(1.0, (theta - gamma) / (p - 1.0), z),), dim=dim)
            H = build_aux_H(dim, p, gamma, theta, "supercritical-hardy", alpha=alpha)
        psi = 1.0  # amplitude enters unweighted for origin-anchored data
    elif form == "wtilde":
        if not (p < crit.p_gamma) or _isclose(p, crit.p_gamma):
            raise ValueError("wtilde requires p < p_gamma")
        base = SingularProfile((dirac(1.0, z),), dim=dim)
        psi = 1.0

    if form.endswith("_plus"):
        if T > zn ** theta:
            raise ValueError("the improved variants require T <= |z|**theta")
        psi = zn ** (gamma / (p - 1.0))

    return SupersolutionTemplate(
        form=form, dim=dim, p=p, gamma=gamma, theta=theta, z=z, T=T,
        c=float(c), C0=float(C0), psi_value=float(psi),
        prefactor=float(prefactor), time_dilation=float(dilation),
        base_profile=base, H=H,
    )
