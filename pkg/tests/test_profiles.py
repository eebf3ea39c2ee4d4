import math

import numpy as np
import pytest

from hardylab import profiles as P
from hardylab.kernels import KernelSpec
from hardylab.solver import ProblemSpec


def test_critical_exponents_values():
    ce = P.critical_exponents(2, 1.0, 2.0)
    assert ce.p_F == pytest.approx(2.0) and ce.p_gamma == pytest.approx(1.5)
    ce = P.critical_exponents(1, 0.5, 2.0)
    assert ce.p_F == pytest.approx(3.0) and ce.p_gamma == pytest.approx(2.5)
    ce = P.critical_exponents(1, 0.5, 1.0)
    assert ce.p_F == pytest.approx(2.0) and ce.p_gamma == pytest.approx(1.5)
    with pytest.raises(ValueError):
        P.critical_exponents(1, 1.5, 1.0)


def test_exponent_ordering_property():
    rng = np.random.default_rng(0)
    for _ in range(200):
        dim = int(rng.integers(1, 4))
        theta = float(rng.uniform(0.2, 2.0))
        gamma = float(rng.uniform(1e-6, min(theta, dim) * 0.999))
        ce = P.critical_exponents(dim, gamma, theta)
        assert 1.0 < ce.p_gamma < ce.p_F


def test_psi_weight_cases():
    # supercritical branch
    assert P.psi_weight((2.0, 0.0, 0.0), 3, 2.0, 1.0, 2.0) == pytest.approx(2.0)
    # |z| = 1 on the supercritical branch is exactly 1
    assert P.psi_weight((1.0,), 1, 4.0, 0.5, 2.0) == pytest.approx(1.0)
    # subcritical branch: |z|^{2/(p-1)} (1+|z|)^{-(2-gamma)/(p-1)}
    assert P.psi_weight((1.0, 0.0), 2, 1.5, 1.0, 2.0) == pytest.approx(0.25)


def test_psi_weight_vanishes_at_origin():
    for p, dim, theta in ((1.5, 2, 2.0), (2.0, 2, 2.0), (4.0, 1, 2.0), (1.5, 1, 1.0)):
        vals = [P.psi_weight((10.0 ** -j,) + (0.0,) * (dim - 1), dim, p, 0.5, theta)
                for j in range(1, 7)]
        assert all(v > 0 for v in vals)
        assert all(b < a for a, b in zip(vals, vals[1:]))
        assert vals[-1] < 1e-3


def test_eval_profile_values():
    prof = P.SingularProfile((P.power(1.0, 0.75, (0.0,)),), dim=1)
    assert P.eval_profile(prof, 2.0) == pytest.approx(2.0 ** -0.75, rel=1e-14)
    lp = P.SingularProfile((P.logpower(1.0, 1.0, 1.5, 1.0, (0.0,)),), dim=1)
    # independent evaluation: r^-1 (log(e + 1/r))^-1.5 at r = 1
    assert P.eval_profile(lp, 1.0) == pytest.approx(math.log(math.e + 1.0) ** -1.5, rel=1e-14)
    assert P.eval_profile(lp, 1.5) == 0.0  # outside cutoff
    assert P.eval_profile(prof, 0.0) == np.inf
    d = P.SingularProfile((P.dirac(3.0, (0.5,)),), dim=1)
    assert P.eval_profile(d, 0.5) == np.inf
    assert P.eval_profile(d, 0.4) == 0.0


def test_profile_integrability_flag_and_serialization():
    ok = P.SingularProfile((P.power(1.0, 0.9, (0.0,)),), dim=1)
    assert ok.locally_integrable
    bad = P.SingularProfile((P.power(1.0, 1.2, (0.0,)),), dim=1)
    assert not bad.locally_integrable
    rt = P.SingularProfile.from_dict(ok.to_dict())
    assert rt == ok


def test_aux_H_power_case():
    H = P.build_aux_H(1, 4.0, 0.5, 2.0, "supercritical-fujita", alpha=1.5)
    assert H(4.0) == pytest.approx(8.0)
    assert H.inverse(8.0) == pytest.approx(4.0)
    assert H.validated and H.bigA == math.e


def test_aux_H_log_case_monotone_and_inverse():
    H = P.build_aux_H(1, 3.0, 0.5, 2.0, "critical-fujita", beta=0.3)
    X = np.geomspace(1e-6, 1e6, 400)
    HX = H(X)
    assert np.all(np.diff(HX) > 0)
    back = H.inverse(HX)
    assert np.max(np.abs(back - X) / X) <= 1e-10
    assert H(0.0) == 0.0


def test_aux_H_convexity_on_grid():
    H = P.build_aux_H(1, 3.0, 0.5, 2.0, "critical-fujita", beta=0.3)
    X = np.linspace(0.0, 10.0, 2001)
    second = np.diff(H(X), 2)
    assert np.min(second) >= -1e-12


def test_select_A_min_and_conditions():
    A = P.select_A_min(0.3, 1, 3.0, 0.5, 2.0)
    assert A >= math.e
    cond = P.monotonicity_conditions(0.3, A, 3.0, 0.5, 2.0)
    assert all(cond.values())
    with pytest.raises(ValueError):
        P.select_A_min(0.6, 1, 3.0, 0.5, 2.0)  # beta >= N/2
    with pytest.raises(ValueError):
        P.select_A_min(0.3, 1, 2.9, 0.5, 2.0)  # p not critical


def test_inverse_bound_constant_log_case():
    H = P.build_aux_H(1, 3.0, 0.5, 2.0, "critical-fujita", beta=0.3)
    Y = np.geomspace(1e-6, 1e6, 500)
    C = H.inverse_bound_constant(Y)
    assert np.isfinite(C) and C > 0
    assert np.all(H.inverse(Y) <= C * Y * np.log(H.bigA + Y) ** (-H.beta) * (1 + 1e-12))


def _problem(p, z, gamma=0.5, dim=1, T=1.0):
    u0 = P.SingularProfile((P.power(0.1, 0.5, (z,) if dim == 1 else z),), dim=dim)
    return ProblemSpec(kernel=KernelSpec(dim=dim), p=p, gamma=gamma, u0=u0, T=T)


def test_make_template_ubar():
    tpl = P.make_template(_problem(4.0, 1.0), "ubar", c=0.1)
    assert tpl.form == "ubar"
    assert tpl.psi_value == pytest.approx(1.0)
    assert tpl.time_dilation == 2.0
    assert tpl.prefactor == pytest.approx(2.0 ** 1.5)
    f = tpl.base_profile.terms[0]
    assert f.kind == "power" and f.a == pytest.approx(2.0 / 3.0)
    assert tpl.H.case == "power"


def test_make_template_wtilde_and_vbar():
    tpl = P.make_template(_problem(2.0, 0.0), "wtilde", c=0.05)
    assert tpl.base_profile.terms[0].kind == "dirac"
    assert tpl.prefactor == 2.0 and tpl.time_dilation == 1.0

    tpl = P.make_template(_problem(2.5, 0.0), "vbar", c=0.05)
    g = tpl.base_profile.terms[0]
    assert g.kind == "logpower" and g.a == pytest.approx(1.0)
    assert g.k == pytest.approx(1.0 / 1.5 + 1.0)
    assert tpl.H.case == "log"


def test_make_template_rejects_incompatible():
    with pytest.raises(ValueError):
        P.make_template(_problem(4.0, 0.0), "ubar", c=0.1)  # z = 0
    with pytest.raises(ValueError):
        P.make_template(_problem(2.0, 1.0), "ubar", c=0.1)  # p < p_F
    with pytest.raises(ValueError):
        P.make_template(_problem(2.75, 1.0, T=1.5), "wbar_plus", c=0.1)  # T > |z|^theta
    tpl = P.make_template(_problem(2.75, 1.0, T=0.5), "wbar_plus", c=0.1)
    assert tpl.psi_value == pytest.approx(1.0)  # |z| = 1 improvement


def test_template_extremal_data():
    tpl = P.make_template(_problem(4.0, 1.0), "ubar", c=0.2, C0=0.3)
    data = tpl.extremal_data()
    kinds = [t.kind for t in data.terms]
    assert "power" in kinds and "constant" in kinds
    assert data.constant_part() == pytest.approx(0.3)
