import math

import numpy as np
import pytest
from scipy.integrate import quad

from chic.experiments import KERNEL_PRESETS
from chic.kernel import KernelSpec, build_kernel, eval_Q
from chic.moments import (MomentError, TABLE1_REFERENCE, TuningError, compute_C0, compute_C1,
                          compute_constants, compute_J1, compute_M1, compute_phi1, moment_report,
                          phi1_ode_residual, phi1_reduced, phi1_variation_of_constants,
                          polynomial_M1_closed_form, sigma, tune_kernel)

SQRT2 = math.sqrt(2.0)
TABLE_SPECS = {
    "NMN": KERNEL_PRESETS["nmn"], "Zhou k=2": KERNEL_PRESETS["zhou2"],
    "Zhou k=3": KERNEL_PRESETS["zhou3"], "Zhou k=8": KERNEL_PRESETS["zhou8"],
    "EXP k=2": KERNEL_PRESETS["exp2"], "EXP k=1": KERNEL_PRESETS["exp1"],
    "Rational": KERNEL_PRESETS["rational"], "Pade": KERNEL_PRESETS["pade"],
}


@pytest.fixture(scope="module")
def kernels():
    return {label: build_kernel(spec) for label, spec in TABLE_SPECS.items()}


def test_sigma_profile():
    z = compute_phi1(build_kernel(KernelSpec.polynomial(1))).z_grid
    assert len(z) == 2001 and z[0] == -20.0 and z[-1] == 20.0
    s = sigma(z)
    assert s[1000] == 0.0
    assert np.array_equal(s[::-1], -s)
    assert np.all(np.diff(s[500:1500]) > 0)
    assert np.all(np.diff(s) >= 0)


@pytest.mark.parametrize("k,expected", [(1, 1 - math.pi ** 2 / 6), (3, 49 / 36 - math.pi ** 2 / 6),
                                        (8, -0.117512)])
def test_m1_examples(k, expected):
    got = compute_M1(build_kernel(KernelSpec.polynomial(k)))
    assert abs(got - expected) < (1e-10 if k != 8 else 1e-6)


@pytest.mark.parametrize("k", [1, 2, 3, 8])
def test_m1_closed_form(k):
    assert abs(compute_M1(build_kernel(KernelSpec.polynomial(k))) - polynomial_M1_closed_form(k)) < 1e-10


def _q_poly(k, u):
    b = quad(lambda t: (1 - t * t) ** k, 0, 1, epsabs=1e-15)[0]
    return quad(lambda t: (1 - t * t) ** k, 0, u, epsabs=1e-15)[0] / b


@pytest.mark.parametrize("k", [2, 3])
def test_j1_against_u_quadrature(k):
    # independent route: scipy quad in the phase variable with Q by direct quadrature
    q1 = lambda u: 1.5 * u - 0.5 * u ** 3
    f = lambda u: (_q_poly(k, u) - q1(u)) * (1 - _q_poly(k, u)) / (1 - u * u) ** 3
    ref = 8 / 3 * quad(f, 0, 1 - 1e-6, limit=400, epsabs=1e-12)[0]
    assert abs(compute_J1(build_kernel(KernelSpec.polynomial(k))) - ref) < 1e-6


def test_m1_against_u_quadrature(kernels):
    k = kernels["EXP k=1"]
    ref = -2 * quad(lambda u: float(k.dQ(u)) * math.atanh(u) ** 2, 0, 1, limit=400, epsabs=1e-13)[0]
    assert abs(compute_M1(k) - ref) < 1e-9


def test_j1_examples():
    assert compute_J1(build_kernel(KernelSpec.polynomial(1))) == 0.0
    assert abs(compute_J1(build_kernel(KernelSpec.polynomial(2))) - 0.090) < 5e-3
    assert abs(compute_J1(build_kernel(KernelSpec.polynomial(8))) - 0.118) < 5e-3


def test_j1_divergent_for_low_degeneracy():
    with pytest.raises(MomentError, match="divergent"):
        compute_J1(build_kernel(KernelSpec.mass()))


def test_sign_structure(kernels):
    assert compute_M1(build_kernel(KernelSpec.mass())) < 0
    for label, k in kernels.items():
        assert compute_M1(k) < 0
        j1 = compute_J1(k)
        assert j1 == 0.0 if label == "NMN" else j1 > 0


def test_c0_vanishes(kernels):
    for k in list(kernels.values()) + [build_kernel(KernelSpec.mass())]:
        assert abs(compute_C0(k)) < 1e-10


def test_monotone_balance_along_polynomials():
    c1 = {k: compute_C1(build_kernel(KernelSpec.polynomial(k))) for k in (1, 2, 3, 8, 9)}
    assert c1[1] < c1[2] < c1[3] < c1[8]
    assert c1[3] < 0 < c1[9]
    assert abs(c1[8]) < 0.01


def test_phi1_nmn_vanishes(kernels):
    prof = compute_phi1(kernels["NMN"])
    assert np.max(np.abs(prof.phi1)) <= 1e-12
    assert prof.sup_norm == 0.0


def test_phi1_profile_invariants(kernels):
    for k in kernels.values():
        prof = compute_phi1(k)
        assert prof.phi1[1000] == 0.0
        assert np.max(np.abs(prof.phi1)) <= 10
        assert np.array_equal(prof.phi1, prof.phi1[::-1])


@pytest.mark.parametrize("label,expected", [("Zhou k=8", 0.169), ("Rational", 0.167)])
def test_phi1_sup_norm(kernels, label, expected):
    assert abs(compute_phi1(kernels[label]).sup_norm - expected) < 5e-3


def test_phi1_oracle(kernels):
    z = np.linspace(-6, 6, 601)
    for k in kernels.values():
        assert np.max(np.abs(phi1_reduced(k, z) - phi1_variation_of_constants(k, z))) < 1e-8


def test_phi1_ode_residual(kernels):
    for k in kernels.values():
        _, res = phi1_ode_residual(k, compute_phi1(k))
        assert np.max(np.abs(res)) < 1e-6


def test_phi1_ode_residual_stencil_converges():
    k = build_kernel(KERNEL_PRESETS["pade"])
    prof = compute_phi1(k)
    errs = [np.max(np.abs(phi1_ode_residual(k, prof, order)[1])) for order in (2, 4, 6, 8)]
    assert errs[0] > errs[1] > errs[2] > errs[3]


def test_phi1_rejects_short_grid(kernels):
    with pytest.raises(ValueError):
        compute_phi1(kernels["Pade"], z_max=5)


def test_constants():
    c = compute_constants(2)
    assert abs(c.c_W - 2 * SQRT2 / 3) < 1e-15
    assert abs(c.c_M - 4 * SQRT2 / 3) < 1e-10
    assert c.c_N == 2.0
    assert abs(c.c_SD - 4 / 9) < 1e-10
    c1 = compute_constants(1)
    # int sech^2(z/sqrt2) dz = [sqrt2 tanh(z/sqrt2)] = 2 sqrt2
    assert abs(c1.c_M - 2 * SQRT2) < 1e-10
    assert c1.c_N == 2.0
    with pytest.raises(ValueError):
        compute_constants(0)


def test_report_row_order():
    rep = moment_report(build_kernel(KernelSpec.polynomial(3)))
    assert list(rep.row()) == ["kernel", "M1", "J1", "C1", "sup_phi1", "C0", "B"]
    assert rep.C1 == rep.M1 + rep.J1
    ref = TABLE1_REFERENCE["Zhou k=3"]
    for got, want in zip((rep.M1, rep.J1, rep.C1, rep.sup_phi1), ref):
        assert abs(got - want) < 5e-3


def test_tune_exp2():
    spec, rep = tune_kernel(KernelSpec.exp_shaped(2, -7.0), "beta2", (-12, -3))
    assert abs(spec.beta2 - -6.95) < 0.05
    assert abs(rep.C1) < 1e-6


def test_tune_no_root():
    with pytest.raises(TuningError, match="no moment-balance root"):
        tune_kernel(KernelSpec.exp_shaped(2, -7.0), "beta2", (-3, -1))


def test_tuned_presets_balanced(kernels):
    for label in ("Zhou k=8", "EXP k=2", "EXP k=1", "Rational", "Pade"):
        tol = 0.01 if label == "Zhou k=8" else 1e-4
        assert abs(compute_C1(kernels[label])) < tol
