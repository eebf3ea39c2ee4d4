import math

import numpy as np
import pytest
from scipy import integrate

from hardylab import kernels as K


def test_gaussian_closed_form_values():
    k1 = K.KernelSpec(dim=1)
    assert K.eval_kernel(k1, 0.0, 1.0) == pytest.approx((4 * math.pi) ** -0.5, rel=1e-14)
    k2 = K.KernelSpec(dim=2)
    assert K.eval_kernel(k2, [2.0, 0.0], 1.0) == pytest.approx((4 * math.pi) ** -1 * math.exp(-1), rel=1e-14)


def test_cauchy_closed_form():
    kc = K.KernelSpec(dim=1, operator="fractional", theta=1.0)
    assert K.eval_kernel(kc, 0.0, 1.0) == pytest.approx(1 / math.pi, rel=1e-14)
    # Fourier-inversion oracle at an off-origin point
    r, t = 0.7, 0.4
    oracle, _ = integrate.quad(lambda u: math.exp(-t * u) * math.cos(r * u) / math.pi, 0, np.inf)
    assert K.eval_kernel(kc, r, t) == pytest.approx(oracle, rel=1e-10)


def test_eval_kernel_rejects_bad_time_and_missing_table():
    k = K.KernelSpec(dim=1)
    with pytest.raises(ValueError):
        K.eval_kernel(k, 0.0, 0.0)
    with pytest.raises(ValueError):
        K.KernelSpec(dim=1, operator="fractional", theta=0.5)
    with pytest.raises(ValueError):
        K.KernelSpec(dim=4)


@pytest.mark.parametrize("dim", [1, 2, 3])
def test_product_identity_random_tuples(dim):
    rng = np.random.default_rng(7 + dim)
    k = K.KernelSpec(dim=dim)
    n = 2000
    x, y, eta = (rng.uniform(-5, 5, size=(n, dim)) for _ in range(3))
    t = 10.0 ** rng.uniform(-1, 1, size=n)
    s = t * rng.uniform(0.01, 0.99, size=n)
    _, _, rel = K.kernel_product_identity(k, x, y, eta, s, t)
    assert np.max(rel) <= 1e-12


def test_product_identity_degenerate_case():
    k = K.KernelSpec(dim=1)
    lhs, rhs, rel = K.kernel_product_identity(k, 0.0, 0.0, 0.0, 0.25, 1.0)
    assert lhs == pytest.approx(K.eval_kernel(k, 0.0, 0.75) * K.eval_kernel(k, 0.0, 0.25), rel=1e-14)
    assert rel <= 1e-13
    with pytest.raises(ValueError):
        K.kernel_product_identity(k, 0.0, 0.0, 0.0, 1.5, 1.0)


def test_fractional_table_matches_cauchy(cauchy_table_512):
    tab = cauchy_table_512
    exact = K.cauchy_kernel(tab.nodes, 1.0, 1)
    assert np.max(np.abs(tab.values - exact) / exact) <= 1e-8


def test_fractional_table_theta_near_two():
    tab = K.build_fractional_table(1.999, 1, resolution=512, rmax=100.0)
    sel = tab.nodes <= 3.0
    gauss = K.gaussian_kernel(tab.nodes[sel], 1.0, 1)
    assert np.max(np.abs(tab.values[sel] - gauss)) <= 1e-3


def test_fractional_table_mass_at_default_resolution():
    tab = K.build_fractional_table(0.5, 1, resolution=512, rmax=100.0)
    assert abs(tab.mass - 1.0) <= 1e-6


def test_table_rejects_insufficient_resolution():
    with pytest.raises(ValueError):
        K.build_fractional_table(0.5, 1, resolution=32, rmax=100.0)


def test_table_save_load_roundtrip(tmp_path, cauchy_table_512):
    p = tmp_path / "table.json"
    K.save_table(cauchy_table_512, p)
    back = K.load_table(p)
    assert back.theta == cauchy_table_512.theta
    assert back.dim == cauchy_table_512.dim
    assert np.array_equal(back.nodes, cauchy_table_512.nodes)
    assert np.array_equal(back.values, cauchy_table_512.values)


def test_self_similar_scaling(cauchy_table_512):
    k = K.KernelSpec(dim=1, operator="fractional", theta=1.0, table=cauchy_table_512)
    x = np.linspace(-8, 8, 41)
    for lam in (0.5, 2.0, 10.0):
        lhs = K.eval_kernel(k, x, 1.3)
        rhs = lam * K.eval_kernel(k, lam * x, lam ** k.theta * 1.3)
        assert np.max(np.abs(lhs - rhs) / lhs) <= 1e-12


def test_kernel_positivity_and_symmetry(cauchy_table_512):
    rng = np.random.default_rng(3)
    for k in (K.KernelSpec(dim=1),
              K.KernelSpec(dim=1, operator="fractional", theta=1.0, table=cauchy_table_512)):
        x = rng.uniform(-20, 20, size=200)
        t = 10.0 ** rng.uniform(-2, 2, size=200)
        v = K.eval_kernel(k, x, 1.0)
        assert np.all(v > 0)
        assert np.array_equal(K.eval_kernel(k, x, 2.0), K.eval_kernel(k, -x, 2.0))


def test_gaussian_selfchecks():
    rep = K.kernel_selfchecks(K.KernelSpec(dim=1), sample_count=4, seed=1)
    assert rep["normalization"] <= 1e-8
    assert rep["symmetry"] <= 1e-14
    assert rep["semigroup"] <= 1e-8


def test_fractional_selfchecks_cauchy(cauchy_table_hi):
    k = K.KernelSpec(dim=1, operator="fractional", theta=1.0, table=cauchy_table_hi)
    rep = K.kernel_selfchecks(k, sample_count=3, seed=2)
    assert rep["normalization"] <= 1e-6
    assert rep["semigroup"] <= 1e-6
