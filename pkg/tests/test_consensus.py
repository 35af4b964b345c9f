import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from cola.consensus import (ConsensusBuilder, ConsensusConfig, classes_used, marginal_entropy,
                            pairwise_agreement)
from cola.gradcheck import finite_difference_check
from cola.harness.synthetic import SyntheticMultiViewSpec, run_synthetic
from cola.tensor import NonFiniteError

# 1 / (1 + e^25) and 1 / (1 + e^-1), mpmath
SIGMA_25_COMPLEMENT = 1.38879438647711456e-11
SIGMA_1 = 0.7310585786300049
TWO_LN4 = 2.772588722239781


def builder(k=4, d=3, seed=0, **cfg):
    return ConsensusBuilder(d, np.random.default_rng(seed), ConsensusConfig(k=k, hidden=8, **cfg))


def set_linear_output(b, net, logits):
    """Make ``net`` output ``logits`` for every input."""
    for p in net.parameters():
        p.data[...] = 0.0
    net.layers[-1].bias.data[...] = logits


class TestDistributions:
    def test_teacher_centered_logits_give_uniform(self):
        b = builder()
        set_linear_output(b, b.teacher, [0.3, -1.0, 2.0, 0.0])
        b.center = np.array([0.3, -1.0, 2.0, 0.0])
        np.testing.assert_allclose(b.teacher_probs(np.ones(3)), [0.25] * 4)

    def test_teacher_sharp(self):
        b = builder(k=2)
        set_linear_output(b, b.teacher, [1.0, 0.0])
        p = b.teacher_probs(np.zeros(3))
        assert p[1] == pytest.approx(SIGMA_25_COMPLEMENT, rel=1e-9)

    @given(st.floats(-10, 10))
    def test_teacher_shift_invariance(self, c):
        b = builder()
        logits = np.array([0.1, 0.5, -0.2, 0.0])
        set_linear_output(b, b.teacher, logits)
        b.center = np.array([0.05, 0.0, 0.1, -0.1])
        before = b.teacher_probs(np.ones(3))
        set_linear_output(b, b.teacher, logits + c)
        b.center = b.center + c
        np.testing.assert_allclose(b.teacher_probs(np.ones(3)), before, atol=1e-9)

    def test_student_zero_logits_uniform(self):
        b = builder()
        set_linear_output(b, b.student, np.zeros(4))
        np.testing.assert_allclose(b.student_probs(np.ones(3)).data, [0.25] * 4)

    def test_student_temperature(self):
        b = builder(k=2)
        set_linear_output(b, b.student, [0.1, 0.0])
        np.testing.assert_allclose(b.student_probs(np.ones(3)).data, [SIGMA_1, 1 - SIGMA_1], rtol=1e-12)

    def test_student_ignores_center(self):
        b = builder(k=2)
        set_linear_output(b, b.student, [0.1, 0.0])
        b.center = np.array([5.0, -5.0])
        np.testing.assert_allclose(b.student_probs(np.ones(3)).data, [SIGMA_1, 1 - SIGMA_1], rtol=1e-12)

    def test_smaller_temperature_is_sharper(self, rng):
        for _ in range(100):
            logits = rng.normal(size=4)
            sharp, soft = builder(tau_student=0.05), builder(tau_student=0.2)
            set_linear_output(sharp, sharp.student, logits)
            set_linear_output(soft, soft.student, logits)
            x = np.ones(3)
            assert sharp.student_probs(x).data.max() > soft.student_probs(x).data.max()

    @given(hnp.arrays(np.float64, (4, 3), elements=st.floats(-3, 3)))
    def test_valid_distributions(self, x):
        b = builder()
        for p in (b.teacher_probs(x), b.student_probs(x).data):
            np.testing.assert_allclose(p.sum(axis=-1), 1.0, atol=1e-9)
            assert np.all(p > 0)

    def test_width_mismatch(self):
        with pytest.raises(ValueError):
            builder(d=3).teacher_probs(np.zeros(4))


class TestLoss:
    def test_two_uniform_agents(self):
        b = builder()
        set_linear_output(b, b.student, np.zeros(4))
        set_linear_output(b, b.teacher, np.zeros(4))
        loss = b.consensus_loss(np.ones((1, 2, 3)), np.ones((1, 2), dtype=bool))
        assert loss.item() == pytest.approx(TWO_LN4, abs=1e-10)

    def test_pair_counts(self):
        assert ConsensusBuilder.pair_weights(np.ones((1, 3), dtype=bool)).sum() == 6
        assert ConsensusBuilder.pair_weights(np.array([[1, 0, 1]], dtype=bool)).sum() == 2

    def test_loss_counts_ordered_pairs(self):
        b = builder()
        set_linear_output(b, b.student, np.zeros(4))
        set_linear_output(b, b.teacher, np.zeros(4))
        three = b.consensus_loss(np.ones((1, 3, 3)), np.ones((1, 3), dtype=bool)).item()
        one_dead = b.consensus_loss(np.ones((1, 3, 3)), np.array([[1, 1, 0]], dtype=bool)).item()
        assert three == pytest.approx(6 * np.log(4)) and one_dead == pytest.approx(2 * np.log(4))

    def test_matching_point_masses(self):
        b = builder(k=2)
        set_linear_output(b, b.student, [50.0, -50.0])
        set_linear_output(b, b.teacher, [50.0, -50.0])
        assert b.consensus_loss(np.ones((2, 3, 3)), np.ones((2, 3), dtype=bool)).item() < 1e-9

    def test_dead_features_do_not_matter(self, rng):
        b = builder()
        feats = rng.normal(size=(4, 3, 3))
        alive = np.array([[1, 0, 1], [0, 0, 1], [1, 1, 1], [1, 1, 0]], dtype=bool)
        poked = feats.copy()
        poked[~alive] = rng.normal(size=(int((~alive).sum()), 3)) * 100
        a = b.consensus_loss(feats, alive).item()
        c = b.consensus_loss(poked, alive).item()
        assert a == c

    def test_mean_over_valid_steps(self, rng):
        b = builder()
        feats = rng.normal(size=(3, 2, 3))
        alive = np.ones((3, 2), dtype=bool)
        valid = np.array([True, True, False])
        full = b.consensus_loss(feats[:2], alive[:2]).item()
        assert b.consensus_loss(feats, alive, valid).item() == pytest.approx(full)

    def test_teacher_branch_gets_no_gradient(self, rng):
        b = builder()
        loss = b.consensus_loss(rng.normal(size=(2, 3, 3)), np.ones((2, 3), dtype=bool))
        from cola import tensor as T
        T.backward(loss)
        assert all(p.grad is None for p in b.teacher.parameters())
        assert all(p.grad is not None for p in b.student.parameters())

    def test_gradcheck(self, rng):
        b = builder()
        b.center = rng.normal(size=4)
        feats = rng.normal(size=(3, 3, 3))
        alive = np.array([[1, 1, 1], [1, 0, 1], [1, 1, 0]], dtype=bool)
        assert finite_difference_check(lambda: b.consensus_loss(feats, alive),
                                       b.student.parameters()) < 1e-4


class TestInference:
    def test_argmax(self):
        b = builder(k=3)
        set_linear_output(b, b.student, np.log([0.1, 0.7, 0.2]))
        assert b.infer(np.ones(3)) == 1

    def test_tie_goes_to_lowest(self):
        b = builder(k=2)
        set_linear_output(b, b.student, [0.5, 0.5])
        assert b.infer(np.ones(3)) == 0

    def test_matches_probability_argmax(self, rng):
        b = builder(k=5)
        x = rng.normal(size=(50, 3))
        np.testing.assert_array_equal(b.infer(x), np.argmax(b.student_probs(x).data, axis=-1))

    def test_single_agent_input_suffices(self, rng):
        b = builder(k=5)
        x = rng.normal(size=(4, 3))
        batch = b.infer(x)
        assert [b.infer(row) for row in x] == list(batch)


class TestEma:
    def test_center_from_zero(self):
        b = builder(k=3)
        assert np.allclose(b.update_center(np.ones((5, 3))), 0.1)

    def test_center_fixed_point(self):
        b = builder(k=3)
        b.center = np.array([1.0, 2.0, 3.0])
        np.testing.assert_allclose(b.update_center(np.tile([1.0, 2.0, 3.0], (4, 1))), [1, 2, 3])

    def test_center_two_updates(self):
        b = builder(k=2)
        mu = np.array([2.0, -4.0])
        b.update_center(mu[None])
        b.update_center(mu[None])
        np.testing.assert_allclose(b.center, mu * 0.19, rtol=1e-12)

    def test_empty_batch_keeps_center(self):
        b = builder(k=2)
        b.center = np.array([1.0, 1.0])
        np.testing.assert_array_equal(b.update_center(np.zeros((0, 2))), [1.0, 1.0])

    def test_teacher_unchanged_when_equal(self):
        b = builder()
        before = [p.data.copy() for p in b.teacher.parameters()]
        b.update_teacher()
        for p, q in zip(b.teacher.parameters(), before):
            np.testing.assert_array_equal(p.data, q)

    def test_teacher_step(self):
        b = builder()
        for p in b.teacher.parameters():
            p.data[...] = 0.0
        for p in b.student.parameters():
            p.data[...] = 1.0
        b.update_teacher()
        for p in b.teacher.parameters():
            np.testing.assert_allclose(p.data, 0.004)

    def test_teacher_geometric_convergence(self):
        b = builder()
        for p in b.teacher.parameters():
            p.data[...] = 0.0
        for p in b.student.parameters():
            p.data[...] = 1.0
        for _ in range(50):
            b.update_teacher()
        for p in b.teacher.parameters():
            np.testing.assert_allclose(p.data, 1.0 - 0.996 ** 50, rtol=1e-12)


class TestTrainStep:
    def test_lonely_agents_leave_student_unchanged(self, rng):
        b = builder()
        before = b.student.state_dict()
        loss = b.train_step(rng.normal(size=(4, 3, 3)), np.array([[1, 0, 0]] * 4, dtype=bool))
        assert loss == 0.0
        for k, v in b.student.state_dict().items():
            np.testing.assert_array_equal(v, before[k])

    def test_nan_aborts(self):
        b = builder()
        feats = np.full((1, 2, 3), np.nan)
        with pytest.raises(NonFiniteError, match="consensus loss"):
            b.train_step(feats, np.ones((1, 2), dtype=bool))

    def test_order_student_then_center_then_teacher(self, rng):
        b = builder()
        feats = rng.normal(size=(2, 3, 3))
        alive = np.ones((2, 3), dtype=bool)
        twin = builder()
        b.train_step(feats, alive)
        # replay by hand
        from cola import tensor as T
        loss = twin.consensus_loss(feats, alive)
        twin.optimizer.zero_grad()
        T.backward(loss)
        twin.optimizer.step()
        twin.update_center(twin.teacher_logits(feats.reshape(-1, 3)))
        twin.update_teacher()
        np.testing.assert_array_equal(b.center, twin.center)
        for p, q in zip(b.teacher.parameters(), twin.teacher.parameters()):
            np.testing.assert_array_equal(p.data, q.data)

    def test_loss_decreases_on_synthetic_views(self):
        drops = []
        for seed in range(5):
            r = run_synthetic(SyntheticMultiViewSpec(steps=100, seed=seed))
            first = r["first_losses"]
            drops.append(np.mean(first[:10]) - np.mean(first[-10:]))
        assert np.median(drops) > 0

    def test_agreement_after_training(self):
        r = run_synthetic(SyntheticMultiViewSpec(steps=600, seed=0))
        assert r["agreement"] >= 0.95

    def test_state_dict_round_trip(self, rng):
        b = builder()
        b.train_step(rng.normal(size=(2, 3, 3)), np.ones((2, 3), dtype=bool))
        c = builder(seed=9)
        c.load_state_dict(b.state_dict())
        x = rng.normal(size=(5, 3))
        np.testing.assert_array_equal(b.infer(x), c.infer(x))
        np.testing.assert_array_equal(b.teacher_probs(x), c.teacher_probs(x))


class TestDiagnostics:
    def test_agreement(self):
        assert pairwise_agreement(np.array([[1, 1, 1], [0, 0, 2]])) == pytest.approx((3 + 1) / 6)

    def test_agreement_respects_alive(self):
        assert pairwise_agreement(np.array([[1, 1, 3]]), np.array([[1, 1, 0]])) == 1.0

    def test_entropy_and_usage(self):
        c = np.array([[0, 1], [2, 3]])
        assert marginal_entropy(c, 4) == pytest.approx(np.log(4))
        assert classes_used(c) == 4
        assert marginal_entropy(np.zeros((3, 2), dtype=int), 4) == 0.0
