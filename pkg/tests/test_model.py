import math

import numpy as np
import pytest

from spatial_pmle.model import (
    DataError, Dataset, ParamVector, grad_loglik, hessian_beta, hessian_cross, loglik,
    predicted_mean,
)

from conftest import central_diff, random_dataset


def one(y=0, P=1.0, A=1.0, X=None):
    X = np.zeros((1, 0)) if X is None else np.atleast_2d(X)
    return Dataset([y], [P], [A], X)


@pytest.mark.parametrize("A, P, alpha, X, beta, expected", [
    (1, 2, 0.0, None, [], 2.0),
    (1, 1, math.log(3), None, [], 3.0),
    (2, 1, 0.0, [[1.0]], [math.log(2)], 4.0),
])
def test_predicted_mean(A, P, alpha, X, beta, expected):
    d = one(P=P, A=A, X=X)
    mu = predicted_mean(d, ParamVector([alpha], beta))
    assert mu[0] == pytest.approx(expected, rel=1e-14)


@pytest.mark.parametrize("y, P, alpha, expected", [
    (0, 1.0, 0.0, -1.0),
    (3, 1.0, math.log(3), 3 * math.log(3) - 3),
    (1, math.e, 0.0, 1 - math.e),
])
def test_loglik_values(y, P, alpha, expected):
    assert loglik(one(y=y, P=P), ParamVector([alpha], [])) == pytest.approx(expected, abs=1e-12)


def test_loglik_reported_decimals():
    assert loglik(one(y=3), ParamVector([math.log(3)], [])) == pytest.approx(0.29584, abs=1e-5)


def test_grad_zero_at_saturation():
    ga, _ = grad_loglik(one(y=3), ParamVector([math.log(3)], []))
    assert ga[0] == pytest.approx(0.0, abs=1e-14)


def test_grad_beta_example():
    d = Dataset([2, 0], [1, 1], [1, 1], [[1.0], [-1.0]])
    _, gb = grad_loglik(d, ParamVector([0.0, 0.0], [0.0]))
    np.testing.assert_allclose(gb, [2.0])


def test_dimension_mismatch():
    d = Dataset([1, 2], 1, 1, np.ones((2, 1)))
    with pytest.raises(DataError):
        loglik(d, ParamVector([0.0], [0.0]))
    with pytest.raises(DataError):
        grad_loglik(d, ParamVector([0.0, 0.0], [0.0, 1.0]))


def test_grad_finite_differences(rng):
    for _ in range(20):
        d = random_dataset(rng, 8, 3)
        theta = ParamVector(rng.normal(0, 1, 8), rng.normal(0, 1, 3))
        f = lambda t: loglik(d, ParamVector.from_flat(t, d.n))
        num = central_diff(f, theta.flat())
        ga, gb = grad_loglik(d, theta)
        ana = np.concatenate([ga, gb])
        assert np.linalg.norm(ana - num) <= 1e-5 * max(1.0, np.linalg.norm(ana))


def test_concavity(rng):
    d = random_dataset(rng, 10, 3)
    for _ in range(50):
        t1, t2 = rng.normal(0, 2, 13), rng.normal(0, 2, 13)
        t = rng.uniform(0.01, 0.99)
        lhs = loglik(d, ParamVector.from_flat(t * t1 + (1 - t) * t2, 10))
        rhs = (t * loglik(d, ParamVector.from_flat(t1, 10))
               + (1 - t) * loglik(d, ParamVector.from_flat(t2, 10)))
        assert lhs >= rhs - 1e-10


def test_hessian_beta_examples():
    d = one(X=[[1.0]])
    assert hessian_beta(d, ParamVector([math.log(2)], [0.0]))[0, 0] == pytest.approx(2.0)
    d0 = Dataset([1, 2], 1, 1, np.zeros((2, 2)))
    np.testing.assert_array_equal(hessian_beta(d0, ParamVector([0.1, 0.2], [0.3, 0.4])),
                                  np.zeros((2, 2)))


def test_hessian_beta_fd(rng):
    d = random_dataset(rng, 9, 3)
    theta = ParamVector(rng.normal(0, 0.5, 9), rng.normal(0, 0.5, 3))
    H = hessian_beta(d, theta)
    for j in range(3):
        fj = lambda b: grad_loglik(d, ParamVector(theta.alpha, b))[1][j]
        num = central_diff(fj, theta.beta, h=1e-5)
        np.testing.assert_allclose(-num, H[j], rtol=1e-5, atol=1e-5)
    assert np.linalg.eigvalsh(H).min() >= -1e-10
    np.testing.assert_array_equal(H, H.T)


def test_hessian_cross_examples():
    d = one(X=[[1.0]])
    np.testing.assert_allclose(hessian_cross(d, ParamVector([math.log(2)], [0.0])), [[-2.0]])
    # tiny mean -> vanishing column
    d2 = Dataset([0, 0], 1, 1, [[1.0], [2.0]])
    Hc = hessian_cross(d2, ParamVector([0.0, -30.0], [0.0]))
    assert abs(Hc[0, 1]) < 1e-12


def test_hessian_cross_fd(rng):
    d = random_dataset(rng, 7, 2)
    theta = ParamVector(rng.normal(0, 0.5, 7), rng.normal(0, 0.5, 2))
    Hc = hessian_cross(d, theta)
    for j in range(2):
        fj = lambda a: grad_loglik(d, ParamVector(a, theta.beta))[1][j]
        num = central_diff(fj, theta.alpha, h=1e-5)
        np.testing.assert_allclose(num, Hc[j], rtol=1e-5, atol=1e-5)


def test_predicted_mean_positive_under_clamp():
    d = Dataset([0, 5], [1, 1], [1, 1], [[50.0], [-50.0]])
    mu = predicted_mean(d, ParamVector([-100.0, 100.0], [10.0]))
    assert np.all(mu > 0) and np.all(np.isfinite(mu))


def test_param_vector_clamps_alpha():
    t = ParamVector([-100.0, 5.0, 100.0], [])
    np.testing.assert_array_equal(t.alpha, [-30.0, 5.0, 30.0])


@pytest.mark.parametrize("kwargs, msg", [
    (dict(y=[1.5], p_offset=[1], area=[1]), "integers"),
    (dict(y=[-1], p_offset=[1], area=[1]), "integers"),
    (dict(y=[1], p_offset=[0], area=[1]), "offsets"),
    (dict(y=[1], p_offset=[1], area=[-2]), "areas"),
    (dict(y=[np.nan], p_offset=[1], area=[1]), "non-finite"),
])
def test_dataset_validation(kwargs, msg):
    with pytest.raises(DataError, match=msg):
        Dataset(X=np.zeros((1, 1)), **kwargs)


def test_dataset_x_rows_must_match():
    with pytest.raises(DataError):
        Dataset([1, 2], 1, 1, np.zeros((3, 1)))
