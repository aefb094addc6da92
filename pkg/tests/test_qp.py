import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.optimize import minimize

from mfplan.qp import INFEASIBLE, OPTIMAL, kkt_residual, solve_qp


def random_qp(rng, n, m_eq, m_in):
    L = rng.normal(size=(n, n))
    G = L @ L.T + n * np.eye(n)
    a = rng.normal(size=n)
    x_feas = rng.normal(size=n)
    C = rng.normal(size=(n, m_eq + m_in))
    b = C.T @ x_feas
    b[m_eq:] -= rng.uniform(0, 1, m_in)
    return G, a, C, b


def scipy_oracle(G, a, C, b, meq):
    cons = []
    if meq:
        cons.append({"type": "eq", "fun": lambda x: C[:, :meq].T @ x - b[:meq],
                     "jac": lambda x: C[:, :meq].T})
    if C.shape[1] > meq:
        cons.append({"type": "ineq", "fun": lambda x: C[:, meq:].T @ x - b[meq:],
                     "jac": lambda x: C[:, meq:].T})
    res = minimize(lambda x: 0.5 * x @ G @ x + a @ x, np.zeros(len(a)),
                   jac=lambda x: G @ x + a, constraints=cons, method="SLSQP",
                   options={"ftol": 1e-14, "maxiter": 500})
    return res.x


def test_unconstrained_is_newton_step():
    rng = np.random.default_rng(0)
    G, a, _, _ = random_qp(rng, 6, 0, 0)
    x, lam, status, _ = solve_qp(G, a, np.zeros((6, 0)), np.zeros(0), 0)
    assert status == OPTIMAL
    np.testing.assert_allclose(x, np.linalg.solve(G, -a), atol=1e-10)


def test_box_example():
    # min 0.5||x||^2 - x0 s.t. x0 <= 0.5 -> x = (0.5, 0)
    G = np.eye(2)
    a = np.array([-1.0, 0.0])
    C = np.array([[-1.0], [0.0]])
    b = np.array([-0.5])
    x, lam, status, _ = solve_qp(G, a, C, b, 0)
    assert status == OPTIMAL
    np.testing.assert_allclose(x, [0.5, 0.0], atol=1e-12)
    assert lam[0] == pytest.approx(0.5)


def test_infeasible_detected():
    G = np.eye(1)
    C = np.array([[1.0, -1.0]])
    b = np.array([1.0, 0.0])      # x >= 1 and x <= 0
    _, _, status, _ = solve_qp(G, np.zeros(1), C, b, 0)
    assert status == INFEASIBLE


@given(st.integers(0, 2**32 - 1), st.integers(2, 8), st.integers(0, 2), st.integers(0, 12))
def test_matches_scipy_and_kkt(seed, n, meq, m_in):
    meq = min(meq, n - 1)
    rng = np.random.default_rng(seed)
    G, a, C, b = random_qp(rng, n, meq, m_in)
    x, lam, status, _ = solve_qp(G, a, C, b, meq)
    assert status == OPTIMAL
    assert kkt_residual(G, a, C, b, meq, x, lam) <= 1e-8
    ref = scipy_oracle(G, a, C, b, meq)
    f = lambda z: 0.5 * z @ G @ z + a @ z
    assert f(x) <= f(ref) + 1e-7 * (1 + abs(f(ref)))
