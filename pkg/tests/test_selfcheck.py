import time

from optidice.selfcheck import FAMILIES, run_selfcheck
from optidice.solver import grad_hess_chi2


def test_all_families_pass_quickly():
    start = time.perf_counter()
    results = run_selfcheck(seed=0)
    elapsed = time.perf_counter() - start
    assert [r.name for r in results] == list(FAMILIES)
    assert all(r.passed for r in results), [r.line() for r in results if not r.passed]
    assert elapsed < 30


def test_sign_flipped_gradient_is_caught():
    def flipped(*args):
        g, H = grad_hess_chi2(*args)
        return -g, H

    (result,) = run_selfcheck(seed=0, grad_hess=flipped, families=["gradient"])
    assert not result.passed
    assert result.line().startswith("[FAIL] gradient")


def test_wrong_hessian_is_caught():
    def scaled(*args):
        g, H = grad_hess_chi2(*args)
        return g, 2 * H

    (result,) = run_selfcheck(seed=1, grad_hess=scaled, families=["gradient"])
    assert not result.passed
