"""Loss oracles: independent scalar-loop references frozen against the
tape implementations, plus the analytic-gradient cross-checks."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nccl_lab.autodiff import Tape, backward, grad_check
from nccl_lab.geometry import build_etf
from nccl_lab.losses import (ClampCounter, DistillConfig, FNC2Config,
                             PlasticityConfig, distill_blend_weight,
                             dr_grad_analytic, dr_loss,
                             fnc2_grad_decomposition, fnc2_loss, hsd_loss,
                             ird_loss, plasticity_loss, sprd_loss,
                             supcon_loss)

CLAMP = 1.0 - 1e-12


def unit_rows(rng, n, d):
    z = rng.standard_normal((n, d))
    return z / np.linalg.norm(z, axis=1, keepdims=True)


def tape_value(fn, *args, **kwargs):
    tape = Tape()
    return float(fn(tape, *args, **kwargs).values)


# -- scalar-loop oracles ----------------------------------------------------

def oracle_dr(z, targets):
    total = 0.0
    for i in range(len(z)):
        total += 0.5 * (float(z[i] @ targets[i]) - 1.0) ** 2
    return total / len(z)


def oracle_fnc2(z, labels, protos, past, tau, gamma):
    n = len(z)
    total = 0.0
    for i in range(n):
        a = 0.0
        for k in range(n):
            if k != i:
                a += math.exp(float(z[i] @ z[k]) / tau)
        if past is not None:
            for p in past:
                a += math.exp(float(z[i] @ p) / tau)
        positives = [j for j in range(n) if j != i and labels[j] == labels[i]]
        w = 1.0 / (len(positives) + 1.0)
        for j in positives:
            c = min(math.exp(float(z[i] @ z[j]) / tau) / a, CLAMP)
            total -= w * (1.0 - c) ** gamma * math.log(c)
        r = min(math.exp(float(z[i] @ protos[labels[i]]) / tau) / a, CLAMP)
        total -= w * (1.0 - r) ** gamma * math.log(r)
    return total


def oracle_supcon(z, labels, tau):
    n = len(z)
    total = 0.0
    for i in range(n):
        positives = [j for j in range(n) if j != i and labels[j] == labels[i]]
        if not positives:
            continue
        a = sum(math.exp(float(z[i] @ z[k]) / tau)
                for k in range(n) if k != i)
        for j in positives:
            total -= math.log(math.exp(float(z[i] @ z[j]) / tau) / a) \
                / len(positives)
    return total


def oracle_ird(z_cur, z_past, kc, kp):
    n = len(z_cur)
    total = 0.0
    for i in range(n):
        at = sum(math.exp(float(z_past[i] @ z_past[k]) / kp)
                 for k in range(n) if k != i)
        ac = sum(math.exp(float(z_cur[i] @ z_cur[k]) / kc)
                 for k in range(n) if k != i)
        for j in range(n):
            if j == i:
                continue
            t = math.exp(float(z_past[i] @ z_past[j]) / kp) / at
            s = math.exp(float(z_cur[i] @ z_cur[j]) / kc) / ac
            total -= t * math.log(s)
    return total


def oracle_sprd(z_cur, z_past, protos, zc, zp):
    n = len(z_cur)
    total = 0.0
    for i in range(n):
        at = sum(math.exp(float(z_past[i] @ p) / zp) for p in protos)
        ac = sum(math.exp(float(z_cur[i] @ p) / zc) for p in protos)
        for p in protos:
            t = math.exp(float(z_past[i] @ p) / zp) / at
            s = math.exp(float(z_cur[i] @ p) / zc) / ac
            total -= t * math.log(s)
    return total


# -- value tests against the oracles ---------------------------------------

class TestDr:
    def test_matches_oracle(self):
        rng = np.random.default_rng(0)
        z = unit_rows(rng, 8, 6)
        targets = unit_rows(rng, 8, 6)
        tape = Tape()
        got = float(dr_loss(tape, tape.leaf(z), targets).values)
        assert abs(got - oracle_dr(z, targets)) < 1e-12

    def test_zero_iff_aligned(self):
        z = build_etf(4, 6, seed=0).vectors
        assert tape_value(lambda t, x: dr_loss(t, t.leaf(x), z), z) < 1e-30

    def test_off_sphere_targets_allowed(self):
        # linear-ablation targets sit inside the sphere; must not raise
        rng = np.random.default_rng(1)
        z = unit_rows(rng, 4, 5)
        targets = unit_rows(rng, 4, 5) * 0.6
        tape = Tape()
        dr_loss(tape, tape.leaf(z), targets)

    def test_non_unit_features_rejected(self):
        tape = Tape()
        with pytest.raises(ValueError, match="unit-norm"):
            dr_loss(tape, tape.leaf(np.ones((2, 3))), np.ones((2, 3)))

    def test_analytic_grad_vs_autodiff(self):
        # per-sample term 1/2 (<z,p> - 1)^2, gradient -(1 - <z,p>) p
        rng = np.random.default_rng(2)
        for _ in range(20):
            z = unit_rows(rng, 1, 6)[0]
            p = unit_rows(rng, 1, 6)[0]
            tape = Tape()
            tz = tape.leaf(z)
            loss = tape.scale(tape.pow_const(
                tape.add_const(tape.inner(tz, tape.constant(p)), -1.0), 2.0),
                0.5)
            auto = backward(tape, loss).wrt(tz)
            np.testing.assert_allclose(dr_grad_analytic(z, p), auto,
                                       atol=1e-10)


class TestFnc2:
    def test_matches_oracle(self):
        rng = np.random.default_rng(3)
        protos = build_etf(4, 8, seed=1)
        for gamma in (0.0, 2.0):
            for past in (None, unit_rows(rng, 2, 8)):
                z = unit_rows(rng, 8, 8)
                labels = rng.integers(0, 4, size=8)
                cfg = FNC2Config(tau=0.5, gamma=gamma)
                tape = Tape()
                got = float(fnc2_loss(tape, tape.leaf(z), labels, protos,
                                      past, cfg).values)
                want = oracle_fnc2(z, labels, protos.vectors, past, 0.5,
                                   gamma)
                assert abs(got - want) < 1e-10

    def test_nonnegative(self):
        # every ratio is clamped below 1, so -log is positive
        rng = np.random.default_rng(4)
        protos = build_etf(3, 6, seed=0)
        for seed in range(10):
            z = unit_rows(np.random.default_rng(seed), 6, 6)
            labels = np.random.default_rng(seed).integers(0, 3, size=6)
            tape = Tape()
            val = float(fnc2_loss(tape, tape.leaf(z), labels, protos, None,
                                  FNC2Config()).values)
            assert val > 0.0

    def test_clamp_counter_fires_on_dominant_ratio(self):
        # z0 on its prototype with one very dissimilar negative: the
        # prototype ratio exceeds 1 and must be clamped (and counted)
        protos = build_etf(2, 16, seed=0)
        other = np.zeros(16)
        other[-1] = 1.0
        z = np.stack([protos[0], other])
        counter = ClampCounter()
        tape = Tape()
        val = float(fnc2_loss(tape, tape.leaf(z), np.array([0, 1]), protos,
                              None, FNC2Config(tau=0.1), counter).values)
        assert counter.events > 0
        assert np.isfinite(val)

    def test_grad_matches_fd(self):
        protos = build_etf(4, 8, seed=2)
        labels = np.array([0, 1, 2, 3, 0, 1])
        raw = np.random.default_rng(5).standard_normal((6, 8))

        for gamma in (0.0, 2.0):
            def f(tape, x):
                z = tape.l2_normalize(x)
                return fnc2_loss(tape, z, labels, protos, None,
                                 FNC2Config(tau=0.5, gamma=gamma))

            assert grad_check(f, raw) < 1e-4

    def test_decomposition_sums_to_autodiff(self):
        # single positive-free anchor, gamma=0: G_pull + G_push equals
        # the tape gradient of -log r~
        rng = np.random.default_rng(6)
        tau = 0.5
        p_tilde = unit_rows(rng, 1, 8)[0]
        others = unit_rows(rng, 5, 8)
        past = unit_rows(rng, 3, 8)
        z0 = unit_rows(rng, 1, 8)[0]

        tape = Tape()
        z = tape.leaf(z0)
        num = tape.scale(tape.inner(z, tape.constant(p_tilde)), 1.0 / tau)
        sims = tape.matmul(tape.constant(np.vstack([others, past])),
                           tape.reshape(z, (8, 1)))
        a = tape.sum(tape.exp(tape.scale(tape.reshape(sims, (8,)),
                                         1.0 / tau)))
        loss = tape.sub(tape.log(a), num)   # -log(exp(num)/A)
        auto = backward(tape, loss).wrt(z)

        g_pull, g_push = fnc2_grad_decomposition(z0, p_tilde, others, past,
                                                 tau)
        np.testing.assert_allclose(g_pull + g_push, auto, atol=1e-8)


class TestSupCon:
    def test_matches_oracle(self):
        rng = np.random.default_rng(7)
        z = unit_rows(rng, 8, 6)
        labels = rng.integers(0, 3, size=8)
        tape = Tape()
        got = float(supcon_loss(tape, tape.leaf(z), labels, 0.5).values)
        assert abs(got - oracle_supcon(z, labels, 0.5)) < 1e-10

    def test_positive_free_anchor_contributes_exactly_zero(self):
        # [PAPER claim] mixed/unique-label anchors vanish from SupCon
        rng = np.random.default_rng(8)
        z = unit_rows(rng, 5, 6)
        labels = np.array([0, 0, 1, 1, 2])   # label 2 has no positives
        tape = Tape()
        full = float(supcon_loss(tape, tape.leaf(z), labels, 0.5).values)
        tape2 = Tape()
        without = float(supcon_loss(tape2, tape2.leaf(z[:4]), labels[:4],
                                    0.5).values)
        # the lone anchor adds nothing, and its removal only changes the
        # other anchors' denominators; check its own term is exactly 0
        grads = None
        tape3 = Tape()
        tz = tape3.leaf(z)
        loss3 = supcon_loss(tape3, tz, labels, 0.5)
        grads = backward(tape3, loss3).wrt(tz)
        assert full == pytest.approx(oracle_supcon(z, labels, 0.5), abs=1e-12)
        # all-unique batch: loss is exactly 0 and gradient exactly 0
        tape4 = Tape()
        tz4 = tape4.leaf(z)
        loss4 = supcon_loss(tape4, tz4, np.arange(5), 0.5)
        assert float(loss4.values) == 0.0
        assert np.array_equal(backward(tape4, loss4).wrt(tz4), np.zeros_like(z))

    def test_grad_matches_fd(self):
        labels = np.array([0, 0, 1, 1, 2, 2])
        raw = np.random.default_rng(9).standard_normal((6, 6))

        def f(tape, x):
            return supcon_loss(tape, tape.l2_normalize(x), labels, 0.5)

        assert grad_check(f, raw) < 1e-4


class TestDistill:
    def test_ird_matches_oracle(self):
        rng = np.random.default_rng(10)
        z_cur = unit_rows(rng, 8, 6)
        z_past = unit_rows(rng, 8, 6)
        tape = Tape()
        got = float(ird_loss(tape, tape.leaf(z_cur), z_past, 0.2, 0.01).values)
        assert abs(got - oracle_ird(z_cur, z_past, 0.2, 0.01)) < 1e-9

    def test_ird_gibbs_inequality(self):
        # cross-entropy >= teacher entropy, with equality only when the
        # student distribution matches the teacher's (same features AND
        # same temperature)
        rng = np.random.default_rng(11)
        z = unit_rows(rng, 6, 5)
        tape = Tape()
        matched = float(ird_loss(tape, tape.leaf(z), z, 0.01, 0.01).values)
        tape2 = Tape()
        mismatched = float(ird_loss(tape2, tape2.leaf(z), z, 0.2, 0.01).values)
        # matched == sum of teacher row entropies
        entropy = 0.0
        for i in range(6):
            sims = np.array([z[i] @ z[k] for k in range(6) if k != i]) / 0.01
            p = np.exp(sims - sims.max())
            p /= p.sum()
            entropy -= float((p * np.log(p)).sum())
        assert abs(matched - entropy) < 1e-9
        assert mismatched > matched

    def test_ird_needs_two(self):
        tape = Tape()
        with pytest.raises(ValueError, match="at least 2"):
            ird_loss(tape, tape.leaf(np.ones((1, 3))), np.ones((1, 3)),
                     0.2, 0.01)

    def test_sprd_matches_oracle(self):
        rng = np.random.default_rng(12)
        protos = build_etf(5, 6, seed=3)
        z_cur = unit_rows(rng, 7, 6)
        z_past = unit_rows(rng, 7, 6)
        tape = Tape()
        got = float(sprd_loss(tape, tape.leaf(z_cur), z_past, protos,
                              0.2, 0.1).values)
        want = oracle_sprd(z_cur, z_past, protos.vectors, 0.2, 0.1)
        assert abs(got - want) < 1e-9

    def test_sprd_empty_prototypes(self):
        tape = Tape()
        with pytest.raises(ValueError, match="empty prototype"):
            sprd_loss(tape, tape.leaf(np.ones((2, 3))), np.ones((2, 3)),
                      np.empty((0, 3)), 0.2, 0.1)

    def test_grads_match_fd(self):
        rng = np.random.default_rng(13)
        z_past = unit_rows(rng, 6, 6)
        protos = build_etf(4, 6, seed=4)
        raw = rng.standard_normal((6, 6))

        def f_ird(tape, x):
            return ird_loss(tape, tape.l2_normalize(x), z_past, 0.2, 0.01)

        def f_sprd(tape, x):
            return sprd_loss(tape, tape.l2_normalize(x), z_past, protos,
                             0.2, 0.1)

        assert grad_check(f_ird, raw) < 1e-4
        assert grad_check(f_sprd, raw) < 1e-4


class TestHsd:
    def test_blend_weight_schedule(self):
        cfg = DistillConfig(warmup_epochs=10, total_epochs=100)
        for e in range(11):
            assert distill_blend_weight(e, cfg) == 0.0
        # [PAPER] xi = (e - e0)/E: at e0=10, E=100, e=60 -> 0.5
        assert distill_blend_weight(60, cfg) == 0.5
        with pytest.raises(ValueError):
            distill_blend_weight(-1, cfg)

    def test_warmup_returns_ird_bitwise(self):
        rng = np.random.default_rng(14)
        z_past = unit_rows(rng, 5, 4)
        cfg = DistillConfig(warmup_epochs=10, total_epochs=100)
        tape = Tape()
        z = tape.l2_normalize(tape.leaf(rng.standard_normal((5, 4))))
        ird = ird_loss(tape, z, z_past, 0.2, 0.01)
        for e in (0, 5, 10):
            out = hsd_loss(tape, ird, None, e, cfg)
            assert out is ird   # same tensor, same bits

    def test_post_warmup_blend(self):
        rng = np.random.default_rng(15)
        z_past = unit_rows(rng, 5, 4)
        protos = build_etf(3, 4, seed=5)
        cfg = DistillConfig(warmup_epochs=10, total_epochs=100)
        tape = Tape()
        z = tape.l2_normalize(tape.leaf(rng.standard_normal((5, 4))))
        ird = ird_loss(tape, z, z_past, 0.2, 0.01)
        sprd = sprd_loss(tape, z, z_past, protos, 0.2, 0.1)
        out = hsd_loss(tape, ird, sprd, 60, cfg)
        want = 0.5 * float(ird.values) + 0.5 * float(sprd.values)
        assert abs(float(out.values) - want) < 1e-12

    def test_post_warmup_requires_sprd(self):
        rng = np.random.default_rng(16)
        z_past = unit_rows(rng, 5, 4)
        cfg = DistillConfig(warmup_epochs=10, total_epochs=100)
        tape = Tape()
        z = tape.l2_normalize(tape.leaf(rng.standard_normal((5, 4))))
        ird = ird_loss(tape, z, z_past, 0.2, 0.01)
        with pytest.raises(ValueError, match="sprd"):
            hsd_loss(tape, ird, None, 60, cfg)


class TestPlasticity:
    def _batch(self, seed=17):
        rng = np.random.default_rng(seed)
        protos = build_etf(4, 6, seed=6)
        z = unit_rows(rng, 8, 6)
        labels = rng.integers(0, 4, size=8)
        mixed = unit_rows(rng, 8, 6)
        mixed_targets = unit_rows(rng, 8, 6)
        return protos, z, labels, mixed, mixed_targets

    def test_dr_mode_additivity(self):
        protos, z, labels, mixed, targets = self._batch()
        cfg = PlasticityConfig(mode="dr", upsilon=5.0)
        tape = Tape()
        tz, tm = tape.leaf(z), tape.leaf(mixed)
        total = float(plasticity_loss(tape, tz, tm, labels, targets, protos,
                                      cfg, FNC2Config()).values)
        base = oracle_dr(z, protos.vectors[labels])
        assert abs(total - (base + 5.0 * oracle_dr(mixed, targets))) < 1e-12

    def test_fnc2_mode_additivity(self):
        protos, z, labels, mixed, targets = self._batch(18)
        cfg = PlasticityConfig(mode="fnc2", iota=5.0)
        tape = Tape()
        tz, tm = tape.leaf(z), tape.leaf(mixed)
        total = float(plasticity_loss(tape, tz, tm, labels, targets, protos,
                                      cfg, FNC2Config()).values)
        base = oracle_fnc2(z, labels, protos.vectors, None, 0.5, 0.0)
        assert abs(total - (base + 5.0 * oracle_dr(mixed, targets))) < 1e-10

    def test_no_mix_short_circuit_bitwise(self):
        protos, z, labels, mixed, targets = self._batch(19)
        cfg = PlasticityConfig(mode="dr", upsilon=5.0)
        tape = Tape()
        tz = tape.leaf(z)
        with_none = plasticity_loss(tape, tz, None, labels, None, protos,
                                    cfg, FNC2Config())
        tape2 = Tape()
        tz2 = tape2.leaf(z)
        base = dr_loss(tape2, tz2, protos.vectors[labels])
        assert float(with_none.values) == float(base.values)

    def test_zero_weight_short_circuit(self):
        protos, z, labels, mixed, targets = self._batch(20)
        cfg = PlasticityConfig(mode="dr", upsilon=0.0)
        tape = Tape()
        tz, tm = tape.leaf(z), tape.leaf(mixed)
        out = plasticity_loss(tape, tz, tm, labels, targets, protos, cfg,
                              FNC2Config())
        tape2 = Tape()
        base = dr_loss(tape2, tape2.leaf(z), protos.vectors[labels])
        assert float(out.values) == float(base.values)

    def test_mixed_without_targets_raises(self):
        protos, z, labels, mixed, _ = self._batch(21)
        tape = Tape()
        with pytest.raises(ValueError, match="mixed prototypes"):
            plasticity_loss(tape, tape.leaf(z), tape.leaf(mixed), labels,
                            None, protos, PlasticityConfig(), FNC2Config())


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10**6))
def test_losses_finite_on_random_batches(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 10))
    protos = build_etf(4, 8, seed=seed % 100)
    z = unit_rows(rng, n, 8)
    labels = rng.integers(0, 4, size=n)
    z_past = unit_rows(rng, n, 8)
    tape = Tape()
    tz = tape.leaf(z)
    vals = [
        float(dr_loss(tape, tz, protos.vectors[labels]).values),
        float(fnc2_loss(tape, tz, labels, protos, None, FNC2Config()).values),
        float(supcon_loss(tape, tz, labels, 0.5).values),
        float(ird_loss(tape, tz, z_past, 0.2, 0.01).values),
        float(sprd_loss(tape, tz, z_past, protos, 0.2, 0.1).values),
    ]
    assert all(np.isfinite(v) for v in vals)
