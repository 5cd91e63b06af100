import threading

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from holostream.beamform import (BeamformerSolution, Status, achieved_sinr, ap_powers,
                                 build_problem, solve, verify_solution)
from holostream.channel import ChannelRealization, NoiseModel, sinr_all


def complex_normal(rng, *shape):
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2)


def random_problem(rng, K, M, I, scale=1.0, targets=None, caps=None, noise=NoiseModel(1.0, 1.0)):
    h = complex_normal(rng, K, M, I) * scale
    targets = rng.uniform(0.8, 5.0, K) if targets is None else targets
    caps = np.full(M, 10.0) if caps is None else caps
    return build_problem(ChannelRealization(h), targets, caps, noise)


def test_stacking_is_ap_major_and_matches_direct_sum():
    rng = np.random.default_rng(0)
    h = complex_normal(rng, 2, 2, 2)
    w = complex_normal(rng, 2, 2, 2)
    prob = build_problem(ChannelRealization(h), [1.0, 1.0], [1.0, 1.0], NoiseModel(1.0, 1.0))
    assert prob.h.shape == (2, 4)
    np.testing.assert_array_equal(prob.h[0], np.concatenate([h[0, 0], h[0, 1]]))
    for k in range(2):
        for j in range(2):
            direct = sum(np.vdot(h[k, m], w[j, m]) for m in range(2))
            assert np.vdot(prob.h[k], w[j].reshape(-1)) == pytest.approx(direct, rel=1e-12)
    single = build_problem(ChannelRealization(h[:, :1]), [1.0, 1.0], [1.0], NoiseModel(1.0, 1.0))
    np.testing.assert_array_equal(single.h, h[:, 0])


def test_build_problem_rejects_mismatch():
    ch = ChannelRealization(np.ones((2, 3, 2), dtype=complex))
    noise = NoiseModel(1.0, 1.0)
    with pytest.raises(ValueError):
        build_problem(ch, [1.0], [1.0, 1.0, 1.0], noise)
    with pytest.raises(ValueError):
        build_problem(ch, [1.0, 1.0], [1.0, 1.0], noise)
    with pytest.raises(ValueError):
        build_problem(ch, [1.0, 1.0], [1.0, 0.0, 1.0], noise)


def test_single_user_matches_maximum_ratio_power():
    rng = np.random.default_rng(1)
    for _ in range(30):
        I = int(rng.integers(1, 5))
        h = complex_normal(rng, 1, 1, I) * 10 ** rng.uniform(-7, -3)
        noise = NoiseModel(10 ** rng.uniform(-21, -18), rng.uniform(1e6, 5e7))
        gamma = rng.uniform(0.8, 100.0)
        p_min = gamma * noise.power / np.sum(np.abs(h) ** 2)
        prob = build_problem(ChannelRealization(h), [gamma], [2 * p_min], noise)
        sol = solve(prob)
        assert sol.status is Status.FEASIBLE
        assert sol.power == pytest.approx(p_min, rel=1e-5)
        assert verify_solution(sol, prob)
        too_small = build_problem(ChannelRealization(h), [gamma], [0.9 * p_min], noise)
        assert solve(too_small).status is Status.INFEASIBLE


def test_unbounded_target_is_infeasible():
    rng = np.random.default_rng(2)
    prob = random_problem(rng, 2, 2, 2, targets=np.array([1e12, 1.0]))
    assert solve(prob).status is Status.INFEASIBLE
    inf = random_problem(rng, 2, 2, 2, targets=np.array([np.inf, 1.0]))
    assert solve(inf).status is Status.INFEASIBLE


def random_search_feasible(prob, n=1_000_000, seed=0):
    """Search random beamformer pairs on the total-power sphere of a K=2, M=1 problem."""
    rng = np.random.default_rng(seed)
    I = prob.I
    w = rng.standard_normal((n, 2, 2 * I)).view(complex)
    w *= np.sqrt(prob.caps[0] / np.sum(np.abs(w) ** 2, axis=(1, 2)))[:, None, None]
    g = np.einsum("ki,nji->nkj", prob.h.conj(), w)
    p = np.abs(g) ** 2
    s0 = p[:, 0, 0] / (p[:, 0, 1] + prob.noise_power)
    s1 = p[:, 1, 1] / (p[:, 1, 0] + prob.noise_power)
    return bool(np.any((s0 >= prob.targets[0]) & (s1 >= prob.targets[1])))


def test_feasibility_agrees_with_random_search():
    rng = np.random.default_rng(3)
    found = 0
    for trial in range(8):
        prob = random_problem(rng, 2, 1, 2, targets=rng.uniform(0.8, 4.0, 2), caps=np.array([4.0]))
        sol = solve(prob)
        if sol.feasible:
            assert verify_solution(sol, prob)
        if random_search_feasible(prob, seed=trial):
            found += 1
            assert sol.status is Status.FEASIBLE
    assert found >= 2


def test_feasible_solutions_pass_verification():
    rng = np.random.default_rng(4)
    feasible = 0
    for _ in range(60):
        K, M, I = (int(v) for v in rng.integers(1, 4, 3))
        prob = random_problem(rng, K, M, I)
        sol = solve(prob)
        assert sol.status is not Status.NUMERICAL_FAILURE
        if sol.feasible:
            feasible += 1
            assert verify_solution(sol, prob, 1e-6)
            assert sol.power == pytest.approx(float(np.sum(np.abs(sol.w) ** 2)))
            np.testing.assert_allclose(sol.ap_power, ap_powers(sol.w))
    assert feasible > 20


def test_backends_agree_on_random_instances():
    rng = np.random.default_rng(5)
    for _ in range(100):
        K, M, I = int(rng.integers(1, 4)), int(rng.integers(1, 5)), int(rng.integers(1, 5))
        prob = random_problem(rng, K, M, I)
        a = solve(prob)
        b = solve(prob, backend="cvxpy-cvxopt", fallbacks=())
        assert a.status == b.status
        if a.feasible:
            assert a.power == pytest.approx(b.power, rel=1e-5)


def test_phase_rotation_leaves_sinr_unchanged():
    rng = np.random.default_rng(6)
    for _ in range(20):
        h = complex_normal(rng, 3, 2, 2)
        w = complex_normal(rng, 3, 2, 2)
        phases = np.exp(1j * rng.uniform(0, 2 * np.pi, 3))
        ch, noise = ChannelRealization(h), NoiseModel(0.3, 1.0)
        np.testing.assert_allclose(sinr_all(ch, w * phases[:, None, None], noise),
                                   sinr_all(ch, w, noise), rtol=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.1, 1.0), st.floats(1.0, 10.0))
def test_feasibility_monotone_in_targets_and_caps(seed, shrink, grow):
    rng = np.random.default_rng(seed)
    prob = random_problem(rng, 2, 2, 2)
    if not solve(prob).feasible:
        return
    easier = build_problem(prob.channel(), prob.targets * shrink, prob.caps * grow,
                           NoiseModel(prob.noise_power, 1.0))
    assert solve(easier).feasible


def test_repeated_solves_are_deterministic():
    rng = np.random.default_rng(7)
    prob = random_problem(rng, 3, 3, 2)
    first = solve(prob)
    assert first.feasible
    for _ in range(3):
        assert solve(prob).power == pytest.approx(first.power, rel=1e-6)


def test_concurrent_solves_match_serial():
    rng = np.random.default_rng(8)
    problems = [random_problem(rng, 2, 2, 2) for _ in range(12)]
    serial = [solve(p, backend="cvxpy").power for p in problems]
    out = [None] * len(problems)

    def work(i):
        out[i] = solve(problems[i], backend="cvxpy").power

    threads = [threading.Thread(target=work, args=(i,)) for i in range(len(problems))]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    np.testing.assert_allclose(out, serial, rtol=1e-6)


def test_verify_examples():
    h = np.array([[[1.0 + 1.0j, 0.5 - 0.2j]]])
    noise = NoiseModel(1e-3, 1.0)
    gamma = 4.0
    prob = build_problem(ChannelRealization(h), [gamma], [1.0], noise)
    # maximum-ratio transmission at exactly the power that meets the target
    p = gamma * noise.power / np.sum(np.abs(h) ** 2)
    w = h / np.linalg.norm(h) * np.sqrt(p)
    mrt = BeamformerSolution(w, Status.FEASIBLE)
    assert verify_solution(mrt, prob, 1e-6)
    assert achieved_sinr(w, prob)[0] == pytest.approx(gamma)
    assert not verify_solution(BeamformerSolution(0.5 * w, Status.FEASIBLE), prob, 1e-6)
    assert not verify_solution(BeamformerSolution(np.zeros_like(w), Status.FEASIBLE), prob, 1e-6)
    assert not verify_solution(BeamformerSolution(w * 1e3, Status.FEASIBLE), prob, 1e-6)
