import numpy as np
import pytest

from worstrisk.risk import QuadraticRisk, WorstRiskObjective


def rand_spd(rng, p, floor=0.3):
    A = rng.standard_normal((p, p))
    return A @ A.T / p + floor * np.eye(p)


def random_risk(rng, p, scale=1.0, offset=(0.5, 2.0)):
    G = rand_spd(rng, p) * scale
    z = rng.standard_normal(p) * scale
    return QuadraticRisk(G, z, z @ np.linalg.solve(G, z) + rng.uniform(*offset))


def random_objective(rng, p, k, gamma, min_eig=0.05):
    """Random objective whose penalized Hessians are all positive definite."""
    while True:
        risks = [random_risk(rng, p) for _ in range(k)]
        obj = WorstRiskObjective(risks, random_risk(rng, p, scale=0.5, offset=(0.1, 1.0)), gamma)
        if all(np.linalg.eigvalsh(obj.penalized(i).G).min() > min_eig for i in range(k)):
            return obj


def oracle_suite(n=50, seed=1):
    """Seeded instances with p in {1, 2}, k in {2, 3}, gamma in [0, 3)."""
    rng = np.random.default_rng(seed)
    out = []
    for t in range(n):
        p, k = 1 + t % 2, 2 + (t // 2) % 2
        gamma = rng.uniform(0, 3)
        out.append(random_objective(rng, p, k, gamma))
    return out


@pytest.fixture(scope="session")
def suite():
    return oracle_suite()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def suite_estimates(suite):
    from worstrisk.estimator import minimize_worst_risk

    return [minimize_worst_risk(obj) for obj in suite]
