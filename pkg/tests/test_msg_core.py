"""Gaussian message algebra against hand arithmetic and direct-sum oracles."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from scmasim.msg_core import (
    VACUOUS,
    DiscretePrior,
    GaussianMsg,
    IndefiniteMessage,
    ep_project,
    from_natural,
    gdiv,
    gmul,
    gmul_all,
    gpow,
    moment_match,
    symbol_extrinsic_llr,
)


def direct_tilted_moments(probs, support, cav_mean, cav_var):
    """Direct weighted-sum evaluation of the tilted belief moments (oracle)."""
    w = np.asarray(probs) * np.exp(-np.abs(cav_mean - np.asarray(support)) ** 2 / cav_var)
    w = w / w.sum()
    mean = np.sum(w * support)
    var = np.sum(w * np.abs(support - mean) ** 2)
    return mean, var


def enumeration_extrinsic_llr(means, variances, points, bit_labels, prior_llrs):
    """Brute-force Bayes over all codeword indices (oracle)."""
    M, B = bit_labels.shape
    p0 = 1.0 / (1.0 + np.exp(-np.asarray(prior_llrs, dtype=float)))
    like = np.ones(M)
    for i in range(M):
        for b in range(B):
            like[i] *= p0[b] if bit_labels[i, b] == 0 else 1.0 - p0[b]
        for d in range(len(means)):
            if math.isfinite(variances[d]):
                like[i] *= math.exp(-abs(means[d] - points[i, d]) ** 2 / variances[d])
    out = np.empty(B)
    for b in range(B):
        num = like[bit_labels[:, b] == 0].sum()
        den = like[bit_labels[:, b] == 1].sum()
        out[b] = math.log(num / den) - prior_llrs[b]
    return out


finite_msgs = st.builds(
    GaussianMsg,
    mean=st.complex_numbers(min_magnitude=0, max_magnitude=10, allow_nan=False, allow_infinity=False),
    var=st.floats(min_value=1e-3, max_value=1e3),
)


class TestAlgebra:
    def test_pinned_examples(self):
        out = gmul(GaussianMsg(0, 1.0), GaussianMsg(2, 1.0))
        assert out.mean == pytest.approx(1.0)
        assert out.var == pytest.approx(0.5)

        out = gdiv(GaussianMsg(1, 1.0), GaussianMsg(0, 2.0))
        assert out.mean == pytest.approx(2.0)
        assert out.var == pytest.approx(2.0)  # precision 0.5

        out = gpow(GaussianMsg(3, 2.0), 2.0)
        assert out.mean == pytest.approx(3.0)
        assert out.var == pytest.approx(1.0)

    def test_vacuous_identity_and_flags(self):
        a = GaussianMsg(1.5 - 0.5j, 0.7)
        assert gmul(a, VACUOUS) == a
        assert gmul(VACUOUS, a) == a
        assert gpow(a, 0.0) == VACUOUS
        with pytest.raises(IndefiniteMessage):
            gdiv(GaussianMsg(0, 2.0), GaussianMsg(0, 1.0))

    def test_vacuous_mean_is_canonical(self):
        assert GaussianMsg(3 + 1j, math.inf).natural() == (0j, 0.0)

    @given(a=finite_msgs, b=finite_msgs, c=finite_msgs)
    @settings(max_examples=200, deadline=None)
    def test_commutative_and_associative(self, a, b, c):
        ab = gmul(a, b)
        ba = gmul(b, a)
        np.testing.assert_allclose(ab.natural()[0], ba.natural()[0], atol=1e-12)
        np.testing.assert_allclose(ab.natural()[1], ba.natural()[1], atol=1e-12)
        lhs = gmul(gmul(a, b), c).natural()
        rhs = gmul(a, gmul(b, c)).natural()
        np.testing.assert_allclose(lhs[0], rhs[0], rtol=1e-10, atol=1e-12)
        np.testing.assert_allclose(lhs[1], rhs[1], rtol=1e-10, atol=1e-12)

    @given(a=finite_msgs, b=finite_msgs)
    @settings(max_examples=200, deadline=None)
    def test_gdiv_inverts_gmul(self, a, b):
        back = gdiv(gmul(a, b), b)
        np.testing.assert_allclose(back.mean, a.mean, rtol=1e-9, atol=1e-9)
        np.testing.assert_allclose(back.var, a.var, rtol=1e-9, atol=1e-9)

    @given(a=finite_msgs, gamma=st.floats(min_value=0.05, max_value=0.95))
    @settings(max_examples=200, deadline=None)
    def test_gpow_exponents_add(self, a, gamma):
        back = gmul(gpow(a, gamma), gpow(a, 1.0 - gamma))
        np.testing.assert_allclose(back.mean, a.mean, rtol=1e-9, atol=1e-9)
        np.testing.assert_allclose(back.var, a.var, rtol=1e-9, atol=1e-9)

    def test_monoid_on_random_messages(self):
        rng = np.random.default_rng(7)
        for _ in range(10_000):
            m = rng.normal(size=2) @ np.array([1, 1j])
            a = GaussianMsg(m, float(rng.uniform(0.01, 100.0)))
            e, l = gmul(a, VACUOUS).natural()
            ea, la = a.natural()
            assert abs(e - ea) <= 1e-10 * max(1.0, abs(ea))
            assert abs(l - la) <= 1e-10 * max(1.0, la)

    def test_gmul_all_matches_fold(self):
        rng = np.random.default_rng(3)
        msgs = [GaussianMsg(complex(*rng.normal(size=2)), float(rng.uniform(0.1, 3))) for _ in range(6)]
        folded = msgs[0]
        for m in msgs[1:]:
            folded = gmul(folded, m)
        batched = gmul_all(msgs)
        np.testing.assert_allclose(batched.mean, folded.mean, atol=1e-12)
        np.testing.assert_allclose(batched.var, folded.var, rtol=1e-12)

    def test_from_natural_rejects_indefinite(self):
        with pytest.raises(IndefiniteMessage):
            from_natural(1.0, 0.0)
        with pytest.raises(IndefiniteMessage):
            from_natural(0.0, -0.5)


class TestEpProject:
    def test_symmetric_prior_keeps_zero_mean(self):
        prior = DiscretePrior(np.array([1.0, -1.0]), np.array([0.5, 0.5]))
        out = ep_project(prior, GaussianMsg(0.0, 2.0))
        assert abs(out.mean) < 1e-12

    def test_degenerate_prior_hits_var_floor(self):
        prior = DiscretePrior(np.array([1 + 1j, -1 - 1j]), np.array([1.0, 0.0]))
        out = ep_project(prior, GaussianMsg(0.3, 1.0))
        assert out.mean == pytest.approx(1 + 1j)
        assert out.var == pytest.approx(1e-8)

    def test_vacuous_cavity_falls_back_to_prior_moments(self):
        support = np.array([1.0, 1j, -1.0, -1j])
        probs = np.array([0.4, 0.3, 0.2, 0.1])
        prior = DiscretePrior(support, probs)
        out = ep_project(prior, VACUOUS)
        mm = moment_match(prior)
        assert out.mean == pytest.approx(mm.mean)
        assert out.var == pytest.approx(mm.var)

    def test_against_direct_weighted_sum(self):
        support = np.array([1.0, -1.0])
        probs = np.array([0.8, 0.2])
        cav = GaussianMsg(0.5, 1.0)
        b_mean, b_var = direct_tilted_moments(probs, support, cav.mean, cav.var)
        out = ep_project(DiscretePrior(support, probs), cav)
        joint = gmul(out, cav)
        np.testing.assert_allclose(joint.mean, b_mean, atol=1e-12)
        np.testing.assert_allclose(joint.var, b_var, atol=1e-12)

    def test_moment_consistency_random(self):
        # gmul(ep_project(p, cav), cav) reproduces the tilted moments whenever
        # no safeguard fires
        rng = np.random.default_rng(11)
        checked = 0
        for _ in range(500):
            M = int(rng.integers(2, 6))
            support = rng.normal(size=M) + 1j * rng.normal(size=M)
            probs = rng.dirichlet(np.ones(M))
            cav = GaussianMsg(complex(*rng.normal(size=2)), float(rng.uniform(0.05, 5.0)))
            b_mean, b_var = direct_tilted_moments(probs, support, cav.mean, cav.var)
            if b_var >= cav.var or b_var <= 1e-8:
                continue
            out = ep_project(DiscretePrior(support, probs), cav)
            joint = gmul(out, cav)
            np.testing.assert_allclose(joint.mean, b_mean, rtol=1e-9, atol=1e-10)
            np.testing.assert_allclose(joint.var, b_var, rtol=1e-9, atol=1e-10)
            checked += 1
        assert checked > 300

    def test_rejects_all_zero_prior(self):
        with pytest.raises(ValueError):
            DiscretePrior(np.array([1.0, -1.0]), np.array([0.0, 0.0]))


class TestSymbolExtrinsicLlr:
    def gray_labels(self, M):
        B = M.bit_length() - 1
        lab = np.zeros((M, B), dtype=int)
        for m in range(M):
            g = m ^ (m >> 1)
            for b in range(B):
                lab[m, b] = (g >> (B - 1 - b)) & 1
        return lab

    def test_vacuous_messages_give_zero(self):
        labels = self.gray_labels(4)
        points = np.array([[1, 1], [1j, 1j], [-1, -1], [-1j, -1j]], dtype=complex)
        out = symbol_extrinsic_llr(
            np.zeros(2, complex), np.full(2, np.inf), points, labels, np.zeros(2)
        )
        np.testing.assert_allclose(out, 0.0, atol=1e-12)

    def test_certainty_limit_selects_codeword_bits(self):
        labels = self.gray_labels(4)
        points = np.array([[1, 1], [1j, 1j], [-1, -1], [-1j, -1j]], dtype=complex)
        target = 2  # gray label 11
        out = symbol_extrinsic_llr(
            points[target], np.full(2, 1e-6), points, labels, np.zeros(2)
        )
        hard = (out < 0).astype(int)
        np.testing.assert_array_equal(hard, labels[target])

    def test_matches_enumeration_oracle(self):
        rng = np.random.default_rng(5)
        for _ in range(200):
            M = int(rng.choice([2, 4, 8]))
            D = int(rng.integers(1, 4))
            labels = self.gray_labels(M)
            points = rng.normal(size=(M, D)) + 1j * rng.normal(size=(M, D))
            means = rng.normal(size=D) + 1j * rng.normal(size=D)
            variances = rng.uniform(0.3, 3.0, size=D)
            prior_llrs = rng.uniform(-2.0, 2.0, size=labels.shape[1])
            got = symbol_extrinsic_llr(means, variances, points, labels, prior_llrs)
            want = enumeration_extrinsic_llr(means, variances, points, labels, prior_llrs)
            np.testing.assert_allclose(got, want, rtol=1e-9, atol=1e-9)

    def test_batched_matches_scalar(self):
        rng = np.random.default_rng(9)
        M, D = 4, 2
        labels = self.gray_labels(M)
        points = rng.normal(size=(M, D)) + 1j * rng.normal(size=(M, D))
        means = rng.normal(size=(5, D)) + 1j * rng.normal(size=(5, D))
        variances = rng.uniform(0.2, 2.0, size=(5, D))
        prior_llrs = rng.uniform(-1.0, 1.0, size=(5, labels.shape[1]))
        got = symbol_extrinsic_llr(means, variances, points, labels, prior_llrs)
        for t in range(5):
            single = symbol_extrinsic_llr(means[t], variances[t], points, labels, prior_llrs[t])
            np.testing.assert_allclose(got[t], single, atol=1e-12)
