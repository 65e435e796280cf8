import warnings

import numpy as np
import pytest
from hypothesis import given, strategies as st

from smalldev.model import (Ball, Box, DiffusionModel, EllipticityError, ModelError, lattice,
                            scale_domain, sigma0, sigma_at, validate)


def bm(dim=2, drift=None):
    drift = drift or ["0"] * dim
    cols = [["1" if i == k else "0" for i in range(dim)] for k in range(dim)]
    return DiffusionModel.from_strings(drift, cols)


def test_sigma_identity():
    np.testing.assert_array_equal(sigma0(bm(2)), np.eye(2))


def test_sigma_product():
    # B = [[1,0],[1,1]]: columns (1,1) and (0,1)
    m = DiffusionModel.from_strings(["0", "0"], [["1", "1"], ["0", "1"]])
    np.testing.assert_array_equal(sigma0(m), [[1, 1], [1, 2]])


def test_sigma_state_dependent():
    m = DiffusionModel.from_strings(["0"], [["x1"]])
    np.testing.assert_array_equal(sigma_at(m, [2.0]), [[4.0]])


def test_sigma_exactly_symmetric():
    m = DiffusionModel.from_strings(
        ["0", "0", "0"],
        [["1.1+sin(x1)", "0.3*x2", "0.7"], ["0.2", "1+x3^2", "cos(x1)"], ["0.1*x1", "0.4", "1.3"]],
    )
    rng = np.random.default_rng(1)
    for x in rng.normal(size=(20, 3)):
        s = sigma_at(m, x)
        assert np.all(s == s.T)
        assert np.linalg.eigvalsh(s)[0] >= -1e-12


def test_validate_brownian():
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        rep = validate(bm(2), Box((-1, -1), (1, 1)))
    assert rep.mu_ell == 1.0 and rep.passed
    assert np.all(rep.drift_jacobian_sup == 0) and np.all(rep.diffusion_jacobian_sup == 0)


def test_validate_degenerate():
    m = DiffusionModel.from_strings(["0", "0"], [["1", "0"], ["0", "0"]])
    with pytest.raises(EllipticityError):
        validate(m, Box((-1, -1), (1, 1)))


def test_validate_drift_jacobian():
    m = bm(2, ["sin(t)", "x1"])
    rep = validate(m, Box((-1, -1), (1, 1)))
    assert rep.drift_jacobian_sup[1, 0] == 1.0
    assert rep.drift_jacobian_sup[0, 0] == 0.0
    assert rep.drift_time_sup[0] == pytest.approx(1.0)
    assert rep.passed


def test_validate_warns_when_origin_outside():
    with pytest.warns(UserWarning, match="not an interior point"):
        rep = validate(bm(1), Box((0.0,), (1.0,)))
    assert not rep.contains_origin and rep.passed


def test_validate_flags_singular_derivative():
    m = DiffusionModel.from_strings(["1/x1"], [["1"]])
    with pytest.warns(UserWarning):
        rep = validate(m, Box((-1.0,), (1.0,)), samples=5)
    assert not rep.derivatives_bounded and not rep.passed


def test_scale_examples():
    assert scale_domain(Box((-1, -1), (1, 1)), 0.5) == Box((-0.5, -0.5), (0.5, 0.5))
    assert scale_domain(Ball(1.0), 0.1) == Ball(0.1)
    b = Box((0.0, -2.0), (1.0, 3.0))
    assert scale_domain(b, 1.0) == b


def test_scale_rejects_nonpositive():
    with pytest.raises(ModelError):
        scale_domain(Ball(1.0), 0.0)


@given(st.floats(1e-3, 1e3), st.floats(1e-3, 1e3),
       st.lists(st.floats(-10, 10).filter(lambda v: v == 0 or abs(v) > 1e-6), min_size=2, max_size=2))
def test_scale_composition_within_two_ulp(a, b, lo):
    dom = Box(tuple(lo), tuple(v + 1.5 for v in lo))
    twice = scale_domain(scale_domain(dom, a), b)
    once = scale_domain(dom, a * b)
    for u, v in zip(twice.lo + twice.hi, once.lo + once.hi):
        # three correctly rounded products: at most 2 ulp apart
        assert abs(u - v) <= 2 * np.spacing(abs(v))


def test_volume_scales():
    dom = Box((0.0, 0.0, 0.0), (1.0, 2.0, 3.0))
    assert scale_domain(dom, 0.5).volume == pytest.approx(dom.volume * 0.125)
    assert scale_domain(Ball(1.0, 2), 0.5).volume == pytest.approx(np.pi / 4)


def test_box_rejects_inverted():
    with pytest.raises(ModelError):
        Box((1.0,), (0.0,))


def test_model_rejects_bad_shapes():
    with pytest.raises(ModelError):
        DiffusionModel.from_strings(["0", "0"], [["1", "0"]])
    with pytest.raises(ModelError):
        DiffusionModel.from_strings(["0"], [["1+t"]])
    with pytest.raises(ModelError):
        DiffusionModel(1, ("0",), (("1",),), horizon=0.0)


def test_lattice_ball_clipped():
    pts = lattice(Ball(1.0, 2), 9)
    assert np.all(np.sum(pts**2, 1) <= 1 + 1e-12)
    assert len(lattice(Box((0, 0), (1, 1)), 5)) == 25
