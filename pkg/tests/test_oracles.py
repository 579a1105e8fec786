import numpy as np

from mcfbc.oracles import ORACLES, run_all, scalar_lasso_bruteforce


def test_all_oracles_pass_in_order():
    res = run_all()
    assert [r["name"] for r in res] == [name for name, _ in ORACLES]
    assert all(r["passed"] for r in res), res


def test_bruteforce_handles_dead_zone_and_signs():
    c = np.array([0.05, -0.05, 0.7, -0.7, 0.0])
    got = scalar_lasso_bruteforce(c, 0.2)
    assert np.allclose(got, [0, 0, 0.6, -0.6, 0], atol=1e-12)
