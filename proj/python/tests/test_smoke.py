import math

import numpy as np
import pytest

import kroninv


def dense_kron(factors):
    # mode 0 fastest: kron(F[d-1], ..., F[0])
    out = factors[0]
    for f in factors[1:]:
        out = np.kron(f, out)
    return out


def test_operator_matches_numpy_kron():
    rng = np.random.default_rng(0)
    f = [[rng.standard_normal((n, n)) for n in (3, 2, 4)] for _ in range(2)]
    op = kroninv.KronSumOperator(f, [1.0, 0.5])
    dense = dense_kron(f[0]) + 0.5 * dense_kron(f[1])
    assert op.dims == [3, 2, 4]
    assert op.rank == 2
    np.testing.assert_allclose(op.to_dense(), dense, rtol=1e-13, atol=1e-13)
    x = rng.standard_normal((3, 2, 4))
    y = kroninv.apply(op, x)
    assert y.shape == (3, 2, 4)
    np.testing.assert_allclose(y.reshape(-1, order="F"), dense @ x.reshape(-1, order="F"), rtol=1e-12)


def test_greedy_inverse_small_poisson():
    pr = kroninv.poisson(d=3, n=6)
    seen = []
    res = kroninv.greedy_inverse(pr.a, algorithm="alg_p", steps=4, on_step=lambda r, e: seen.append((r, e)))
    eps = res["epsilon"]
    assert [r for r, _ in seen] == [1, 2, 3, 4]
    assert all(b <= a * (1 + 1e-12) for a, b in zip(eps, eps[1:]))
    a = pr.a.to_dense()
    p = res["p"].to_dense()
    dense_eps = np.linalg.norm(np.eye(a.shape[0]) - p @ a) / math.sqrt(a.shape[0])
    assert eps[-1] == pytest.approx(dense_eps, rel=1e-8)
    assert kroninv.error_estimate(res["p"], pr.a)[0] == pytest.approx(eps[-1], rel=1e-12)


def test_seed_determinism():
    pr = kroninv.poisson(d=3, n=5)
    a = kroninv.greedy_inverse(pr.a, steps=3, seed=7)["epsilon"]
    b = kroninv.greedy_inverse(pr.a, steps=3, seed=7)["epsilon"]
    assert a == b


def test_solve_against_reference():
    pr = kroninv.stochastic_elliptic(mesh=5, p=3)
    ref = kroninv.reference_solution(pr)
    assert ref.shape == tuple(pr.dims)
    np.testing.assert_allclose(pr.a.to_dense() @ ref.reshape(-1, order="F"), pr.b, rtol=1e-10, atol=1e-12)
    pre = kroninv.greedy_inverse(pr.a, steps=3, constraint="sparse", constraint_modes=[0], fill_gamma=0.5)["p"]
    u, trace = kroninv.solve(pr, pre, rank=6, max_iterations=8, reference=ref)
    assert u.shape == tuple(pr.dims)
    assert trace["iteration"][0] == 0
    assert trace["epsilon_solution"][-1] < trace["epsilon_solution"][0]
    plain_u, plain = kroninv.solve(pr, None, rank=6, max_iterations=8, reference=ref)
    assert trace["epsilon_solution"][-1] < plain["epsilon_solution"][-1]


def test_save_load_round_trip(tmp_path):
    pr = kroninv.poisson(d=2, n=4)
    p = kroninv.greedy_inverse(pr.a, steps=2)["p"]
    path = tmp_path / "p.json"
    kroninv.save(p, path)
    q = kroninv.load(path)
    assert isinstance(q, kroninv.BasisOperator)
    np.testing.assert_array_equal(p.to_dense(), q.to_dense())


def test_errors_are_raised():
    pr = kroninv.poisson(d=2, n=4)
    with pytest.raises(kroninv.KroninvError):
        kroninv.greedy_inverse(pr.a, algorithm="bogus")
    with pytest.raises(kroninv.KroninvError):
        pr.a.matvec(np.ones(3))
