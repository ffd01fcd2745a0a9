"""Evolutionary-layer tests: dominance and archive behavior against brute
filters, exact hypervolume values, buffer bucketing, the increment regressor,
tppe scoring arithmetic, and the greedy prospective selection loop."""

from __future__ import annotations

import math

import numpy as np
import pytest

from conftest import make_cfg
from mocharge import seeding
from mocharge.emo import (
    AlgoConfig,
    ArchiveEntry,
    BadReference,
    EmptyArchive,
    EmptyPopulation,
    IncrementModel,
    ParetoArchive,
    TppeConfig,
    buffer_index,
    dominates,
    emoppo_tml,
    even_simplex_weights,
    fit_increment_models,
    hypervolume2,
    non_dominated_mask,
    pareto_filter_unique,
    pits,
    sample_candidate_weights,
    tppe,
    tpu,
)
from mocharge.momdp import RewardWeights
from mocharge.ppo import make_task

W = RewardWeights(a=0.25, b=1.0, c=1.0, r_bound=-1.0, r_charge=1.0)


def mk_entry(f, uid=0, gen=0):
    return ArchiveEntry(
        objectives=np.asarray(f, dtype=np.float64),
        policy=None,
        policy_meta={},
        weight=np.array([0.5, 0.5]),
        generation=gen,
        task_uid=uid,
    )


class TestDominance:
    def test_definition(self):
        assert dominates([0.5, 0.5], [0.4, 0.4])
        assert dominates([0.5, 0.4], [0.5, 0.3])
        assert not dominates([0.5, 0.5], [0.5, 0.5])
        assert not dominates([0.6, 0.3], [0.3, 0.6])
        assert not dominates([0.4, 0.4], [0.5, 0.5])

    def test_shape_checked(self):
        with pytest.raises(ValueError):
            dominates([1.0, 2.0], [1.0, 2.0, 3.0])

    def test_mask_matches_definitional_oracle(self):
        rng = np.random.default_rng(0)
        pts = rng.random((100, 2))
        pts[10] = pts[50]  # exact duplicate pair survives in both
        mask = non_dominated_mask(pts)
        for i in range(100):
            want = not any(dominates(pts[j], pts[i]) for j in range(100) if j != i)
            assert mask[i] == want

    def test_filter_unique_keeps_earlier_duplicate(self):
        a = np.array([0.5, 0.5])
        out = pareto_filter_unique([a, np.array([0.3, 0.3]), a.copy()])
        assert len(out) == 1
        assert out[0] is a


class TestHypervolume:
    def test_single_point(self):
        assert hypervolume2([[0.5, 0.5]]) == pytest.approx(0.25, abs=1e-15)

    def test_two_point_front(self):
        assert hypervolume2([[0.8, 0.2], [0.2, 0.8]]) == pytest.approx(0.28, abs=1e-15)

    def test_order_invariant(self):
        a = hypervolume2([[0.2, 0.8], [0.8, 0.2], [0.5, 0.5]])
        b = hypervolume2([[0.5, 0.5], [0.8, 0.2], [0.2, 0.8]])
        assert a == b == pytest.approx(0.28 + 0.3 * 0.3, abs=1e-12)

    def test_dominated_point_contributes_nothing(self):
        assert hypervolume2([[0.5, 0.5], [0.4, 0.4]]) == pytest.approx(0.25, abs=1e-15)
        assert hypervolume2([[0.5, 0.5], [0.5, 0.5]]) == pytest.approx(0.25, abs=1e-15)

    def test_reference_violations(self):
        with pytest.raises(BadReference):
            hypervolume2([[0.0, 0.0]])
        with pytest.raises(BadReference):
            hypervolume2([[0.5, -0.1]])
        with pytest.raises(BadReference):
            hypervolume2([[0.5, 0.5]], ref=(0.6, 0.0))

    def test_shape_checked(self):
        with pytest.raises(ValueError):
            hypervolume2([[0.5, 0.5, 0.5]])

    def test_nonzero_reference(self):
        got = hypervolume2([[0.8, 0.6]], ref=(0.2, 0.1))
        assert got == pytest.approx(0.6 * 0.5, abs=1e-15)

    def test_matches_monte_carlo(self):
        rng = np.random.default_rng(0)
        pts = 0.1 + 0.9 * rng.random((6, 2))
        exact = hypervolume2(pts)
        samples = rng.random((200_000, 2))
        hits = np.zeros(len(samples), dtype=bool)
        for p in pts:
            hits |= (samples[:, 0] <= p[0]) & (samples[:, 1] <= p[1])
        mc = hits.mean()
        sigma = math.sqrt(mc * (1.0 - mc) / len(samples))
        assert abs(exact - mc) < 4.0 * sigma + 1e-9


class TestArchive:
    def test_accepts_and_evicts(self):
        arc = ParetoArchive()
        assert arc.update([mk_entry([0.4, 0.4])]) == 1
        assert arc.update([mk_entry([0.3, 0.3])]) == 0  # dominated
        assert arc.update([mk_entry([0.4, 0.4])]) == 0  # duplicate
        assert arc.update([mk_entry([0.5, 0.5])]) == 1  # evicts the first
        assert len(arc) == 1
        np.testing.assert_array_equal(arc.points()[0], [0.5, 0.5])

    def test_duplicate_keeps_earlier_entry(self):
        arc = ParetoArchive()
        first = mk_entry([0.5, 0.5], uid=1)
        arc.update([first])
        arc.update([mk_entry([0.5, 0.5], uid=2)])
        assert len(arc) == 1
        assert arc.entries[0].task_uid == 1

    def test_incomparable_coexist(self):
        arc = ParetoArchive()
        arc.update([mk_entry([0.8, 0.2]), mk_entry([0.2, 0.8]), mk_entry([0.5, 0.5])])
        assert len(arc) == 3
        arc.check_invariants()

    def test_insertion_order_recorded(self):
        arc = ParetoArchive()
        arc.update([mk_entry([0.8, 0.2]), mk_entry([0.2, 0.8])])
        assert [e.order for e in arc.entries] == [0, 1]

    def test_random_stream_matches_brute_filter(self):
        rng = np.random.default_rng(7)
        pts = rng.random((200, 2))
        pts[40] = pts[10]
        arc = ParetoArchive()
        hv_log = []
        for i, p in enumerate(pts):
            arc.update([mk_entry(p, uid=i)])
            hv_log.append(arc.hypervolume())
        arc.check_invariants()
        want = pareto_filter_unique(list(pts))
        got = sorted(map(tuple, arc.points()))
        assert got == sorted(map(tuple, want))
        assert all(b >= a - 1e-15 for a, b in zip(hv_log, hv_log[1:]))

    def test_zero_coordinate_entries_allowed(self):
        # a point on the axis has zero dominated area but stays archived
        arc = ParetoArchive()
        arc.update([mk_entry([0.5, 0.0])])
        assert len(arc) == 1
        assert arc.hypervolume() == 0.0

    def test_empty_hypervolume(self):
        assert ParetoArchive().hypervolume() == 0.0


class TestBufferIndex:
    def test_diagonal_center(self):
        assert buffer_index([1.0, 1.0], 50) == 25

    def test_axes(self):
        assert buffer_index([1.0, 0.0], 50) == 0
        assert buffer_index([0.0, 1.0], 50) == 49  # clamped from b_num
        assert buffer_index([0.0, 0.0], 50) == 0

    def test_bounds(self):
        for f1 in np.linspace(0.0, 1.0, 20):
            for f2 in np.linspace(0.0, 1.0, 20):
                assert 0 <= buffer_index([f1, f2], 10) <= 9

    def test_monotone_in_angle(self):
        angles = np.linspace(0.0, math.pi / 2.0 - 1e-9, 100)
        idx = [buffer_index([math.cos(a), math.sin(a)], 10) for a in angles]
        assert all(b >= a for a, b in zip(idx, idx[1:]))


def stub_task(uid, f, w=(0.5, 0.5), scenario=None):
    scn = scenario if scenario is not None else make_cfg()
    t = make_task(uid, scn, np.array(w), hidden_size=4, learning_rate=1e-3,
                  init_log_std=0.0, seed=0)
    t.objectives = np.asarray(f, dtype=np.float64)
    return t


class TestTpu:
    def test_eviction_keeps_top_norms(self):
        scn = make_cfg()
        a = stub_task(0, [0.9, 0.9], scenario=scn)
        b = stub_task(1, [0.5, 0.5], scenario=scn)
        c = stub_task(2, [0.3, 0.3], scenario=scn)  # same bucket, lowest norm
        out = tpu([a, b], [c], b_num=50, b_size=2)
        assert [t.uid for t in out] == [0, 1]

    def test_buckets_concatenated_in_angular_order(self):
        scn = make_cfg()
        lo = stub_task(0, [0.9, 0.1], scenario=scn)
        hi = stub_task(1, [0.1, 0.9], scenario=scn)
        mid = stub_task(2, [0.6, 0.6], scenario=scn)
        out = tpu([hi, mid], [lo], b_num=50, b_size=2)
        assert [t.uid for t in out] == [0, 2, 1]

    def test_missing_objectives_rejected(self):
        scn = make_cfg()
        t = make_task(0, scn, np.array([0.5, 0.5]), hidden_size=4,
                      learning_rate=1e-3, init_log_std=0.0, seed=0)
        with pytest.raises(ValueError):
            tpu([t], [], b_num=10, b_size=1)

    def test_stable_on_equal_norms(self):
        scn = make_cfg()
        a = stub_task(0, [0.5, 0.5], scenario=scn)
        b = stub_task(1, [0.5, 0.5], scenario=scn)
        out = tpu([a], [b], b_num=10, b_size=2)
        assert [t.uid for t in out] == [0, 1]


class TestIncrementModel:
    def teacher(self, w):
        a = np.array([[0.3, -0.1], [0.05, 0.2]])
        return a @ np.asarray(w) + np.array([0.02, -0.03])

    def test_cold_model_predicts_zero(self):
        m = IncrementModel()
        np.testing.assert_array_equal(m.predict([0.3, 0.7]), np.zeros(2))
        assert not m.trained

    def test_fits_linear_teacher(self):
        ws = [np.array([i / 11.0, 1.0 - i / 11.0]) for i in range(12)]
        hist = [(w, self.teacher(w)) for w in ws]
        m = IncrementModel(2, 32, 2000, 0.01)
        m.fit(hist, seeding.generator(0, seeding.TAG_MODEL, 1, 0))
        for w in ws:
            assert np.abs(m.predict(w) - self.teacher(w)).max() < 5e-3
        probe = np.array([0.37, 0.63])
        assert np.abs(m.predict(probe) - self.teacher(probe)).max() < 5e-3

    def test_duplicated_history_is_mean_reduced(self):
        # doubling every row leaves the mean gradient unchanged, so training
        # lands in (numerically) the same place
        ws = [np.array([i / 7.0, 1.0 - i / 7.0]) for i in range(8)]
        hist = [(w, self.teacher(w)) for w in ws]
        m1 = IncrementModel(2, 32, 2000, 0.01)
        m2 = IncrementModel(2, 32, 2000, 0.01)
        m1.fit(hist, seeding.generator(0, seeding.TAG_MODEL, 1, 0))
        m2.fit(hist + hist, seeding.generator(0, seeding.TAG_MODEL, 1, 0))
        probe = np.array([0.4, 0.6])
        np.testing.assert_allclose(m1.predict(probe), m2.predict(probe), atol=5e-3)

    def test_refit_determinism(self):
        scn = make_cfg()
        t = stub_task(0, [0.5, 0.5], scenario=scn)
        t.history = [(np.array([0.5, 0.5]), np.array([0.1, -0.1]))]
        m_a = fit_increment_models([t], master_seed=3, generation=2, epochs=50)[0]
        m_b = fit_increment_models([t], master_seed=3, generation=2, epochs=50)[0]
        probe = np.array([0.2, 0.8])
        np.testing.assert_array_equal(m_a.predict(probe), m_b.predict(probe))


class TestTppe:
    def cfg(self, g_max=10, **kw):
        return TppeConfig(g_max=g_max, **kw)

    def test_schedules(self):
        c = self.cfg()
        assert c.alpha(0) == 0.0 and c.alpha(5) == 0.5 and c.alpha(15) == 1.0
        assert c.lam(0) == 1.0 and c.lam(5) == 0.5 and c.lam(15) == 0.0
        z = TppeConfig(g_max=0)
        assert z.alpha(3) == 1.0 and z.lam(3) == 0.0

    def test_schedule_overrides(self):
        c = self.cfg(alpha_fn=lambda t: 0.25, lambda_fn=lambda t: 0.75)
        assert c.alpha(99) == 0.25 and c.lam(99) == 0.75

    def test_mode_validated(self):
        with pytest.raises(ValueError):
            TppeConfig(g_max=5, mode="bogus")

    def test_single_point_is_alpha_h(self):
        sc = tppe(5, [np.array([0.6, 0.7])], None, None, self.cfg())
        assert sc.diversity == 0.0
        assert sc.hypervolume == pytest.approx(0.42, abs=1e-12)
        assert sc.score == pytest.approx(0.5 * 0.42, abs=1e-12)

    def test_gap_sum_when_lambda_one(self):
        pts = [np.array(p) for p in ((0.1, 0.9), (0.4, 0.6), (0.6, 0.3), (0.9, 0.1))]
        sc = tppe(0, pts, None, None, self.cfg(lambda_fn=lambda t: 1.0))
        want = 0.3 * math.sqrt(2.0) + 2.0 * math.sqrt(0.13)
        assert sc.diversity == pytest.approx(want, rel=1e-12)
        # t = 0 under the default ramp: score is purely the diversity term
        assert sc.score == pytest.approx(want, rel=1e-12)

    def test_density_term_when_lambda_zero(self):
        pts = [np.array(p) for p in ((0.2, 0.8), (0.5, 0.5), (0.8, 0.2))]
        sc = tppe(0, pts, None, None, self.cfg(lambda_fn=lambda t: 0.0))
        arr = np.stack(sorted(pts, key=lambda p: p[0]))
        gaps = np.linalg.norm(arr[1:] - arr[:-1], axis=1)
        bw = gaps.mean()
        diff = arr[:, None, :] - arr[None, :, :]
        dens = np.exp(-(diff ** 2).sum(axis=2) / (2.0 * bw * bw)).sum(axis=1)
        want = sum(1.0 / (dens[i] + 1e-6) for i in range(2))
        assert sc.diversity == pytest.approx(want, rel=1e-10)

    def test_candidate_extends_front(self):
        base = [np.array([0.5, 0.5])]
        sc = tppe(10, base, None, (np.array([0.8, 0.2]), np.array([1.0, 0.0])), self.cfg())
        assert sc.hypervolume == pytest.approx(0.25 + 0.3 * 0.2, abs=1e-12)
        np.testing.assert_array_equal(sc.predicted_point, [0.8, 0.2])

    def test_dominated_candidate_leaves_h(self):
        base = [np.array([0.6, 0.6])]
        sc = tppe(10, base, None, (np.array([0.3, 0.3]), np.array([0.5, 0.5])), self.cfg())
        assert sc.hypervolume == pytest.approx(0.36, abs=1e-12)

    def test_predicted_point_clipped(self):
        sc = tppe(10, [np.array([0.5, 0.5])], None,
                  (np.array([1.2, 0.5]), np.array([0.5, 0.5])), self.cfg())
        np.testing.assert_array_equal(sc.predicted_point, [1.0, 0.5])

    def test_trained_model_shifts_prediction(self):
        hist = [(np.array([0.5, 0.5]), np.array([0.2, 0.1]))] * 4
        m = IncrementModel(2, 8, 500, 0.01)
        m.fit(hist, np.random.default_rng(0))
        sc = tppe(10, [np.array([0.1, 0.1])], m,
                  (np.array([0.4, 0.4]), np.array([0.5, 0.5])), self.cfg())
        assert sc.predicted_point[0] > 0.5  # 0.4 + roughly 0.2
        assert sc.predicted_point[1] > 0.45

    def test_algorithm_mode(self):
        pts = [np.array([0.8, 0.2]), np.array([0.2, 0.8])]
        c = self.cfg(mode="algorithm", alpha_fn=lambda t: 0.5, lambda_fn=lambda t: 1.0)
        sc = tppe(3, pts, None, None, c)
        gap = float(np.linalg.norm([0.6, -0.6]))
        assert sc.score == pytest.approx(0.28 - 0.5 * gap, rel=1e-12)

    def test_empty_archive_rejected(self):
        with pytest.raises(EmptyArchive):
            tppe(0, [], None, None, self.cfg())


class TestSampleWeights:
    def test_first_is_own_weight(self):
        rng = np.random.default_rng(0)
        w = np.array([0.3, 0.7])
        ws = sample_candidate_weights(w, 4, rng)
        assert len(ws) == 4
        np.testing.assert_array_equal(ws[0], w)
        for cand in ws[1:]:
            assert cand.sum() == pytest.approx(1.0, abs=1e-12)
            assert np.all(cand >= 0.0)

    def test_k_one_draws_nothing(self):
        rng_a = np.random.default_rng(5)
        rng_b = np.random.default_rng(5)
        sample_candidate_weights(np.array([0.5, 0.5]), 1, rng_a)
        assert rng_a.integers(0, 1 << 30) == rng_b.integers(0, 1 << 30)


def pits_oracle(n_select, k_candidates, t, population, models, archive, cfg, rng):
    """Independent restatement of the greedy scan, mirroring rng consumption."""
    virtual = [e.objectives.copy() for e in archive.entries]
    picks = []
    for _ in range(n_select):
        best = None
        for j, task in enumerate(population):
            weights = [task.w.copy()]
            alpha = task.w * 25.0 + 0.3
            for _ in range(k_candidates - 1):
                weights.append(rng.dirichlet(alpha))
            for k_idx, w in enumerate(weights):
                model = models.get(task.uid)
                sc = tppe(t, virtual, model, (task.objectives, w), cfg)
                key = (sc.score, sc.hypervolume)
                if best is None or key > best[0]:
                    best = (key, j, k_idx, w, sc)
        _, j, k_idx, w, sc = best
        picks.append((j, w))
        virtual = pareto_filter_unique(virtual + [sc.predicted_point])
    return picks


class TestPits:
    def test_single_task_single_candidate(self):
        scn = make_cfg()
        t = stub_task(3, [0.6, 0.4], w=(0.3, 0.7), scenario=scn)
        arc = ParetoArchive()
        out = pits(1, 1, 2, [t], {}, arc, TppeConfig(g_max=10),
                   seeding.generator(0, seeding.TAG_PITS, 1))
        assert len(out) == 1
        np.testing.assert_array_equal(out[0].w, [0.3, 0.7])
        assert out[0].uid == 3
        assert out[0] is not t  # clone, not the original

    def test_dominant_task_sweeps_selection(self):
        scn = make_cfg()
        strong = stub_task(0, [0.9, 0.9], scenario=scn)
        weak = stub_task(1, [0.1, 0.1], scenario=scn)
        arc = ParetoArchive()
        cfg = TppeConfig(g_max=10)
        out = pits(2, 1, 10, [strong, weak], {}, arc, cfg,
                   seeding.generator(0, seeding.TAG_PITS, 1))
        assert [t.uid for t in out] == [0, 0]

    def test_matches_exhaustive_oracle(self):
        scn = make_cfg()
        population = [
            stub_task(0, [0.7, 0.3], w=(0.8, 0.2), scenario=scn),
            stub_task(1, [0.3, 0.7], w=(0.2, 0.8), scenario=scn),
        ]
        arc = ParetoArchive()
        arc.update([mk_entry([0.5, 0.5]), mk_entry([0.75, 0.2])])
        cfg = TppeConfig(g_max=8)
        got = pits(3, 3, 4, population, {}, arc, cfg,
                   seeding.generator(42, seeding.TAG_PITS, 4))
        want = pits_oracle(3, 3, 4, population, {}, arc, cfg,
                           seeding.generator(42, seeding.TAG_PITS, 4))
        assert len(got) == 3
        for sel, (j, w) in zip(got, want):
            assert sel.uid == population[j].uid
            np.testing.assert_array_equal(sel.w, w)

    def test_deterministic(self):
        scn = make_cfg()
        population = [stub_task(0, [0.6, 0.5], scenario=scn),
                      stub_task(1, [0.4, 0.7], scenario=scn)]
        arc = ParetoArchive()
        arc.update([mk_entry([0.5, 0.5])])
        cfg = TppeConfig(g_max=10)
        a = pits(2, 3, 1, population, {}, arc, cfg, seeding.generator(9, seeding.TAG_PITS, 1))
        b = pits(2, 3, 1, population, {}, arc, cfg, seeding.generator(9, seeding.TAG_PITS, 1))
        for x, y in zip(a, b):
            assert x.uid == y.uid
            np.testing.assert_array_equal(x.w, y.w)

    def test_empty_population_rejected(self):
        with pytest.raises(EmptyPopulation):
            pits(1, 1, 0, [], {}, ParetoArchive(), TppeConfig(g_max=5),
                 np.random.default_rng(0))


class TestSimplexWeights:
    def test_singleton(self):
        (w,) = even_simplex_weights(1)
        np.testing.assert_array_equal(w, [0.5, 0.5])

    def test_two_endpoints(self):
        a, b = even_simplex_weights(2)
        np.testing.assert_array_equal(a, [0.0, 1.0])
        np.testing.assert_array_equal(b, [1.0, 0.0])

    def test_three_evenly_spaced(self):
        ws = even_simplex_weights(3)
        np.testing.assert_allclose(np.stack(ws), [[0.0, 1.0], [0.5, 0.5], [1.0, 0.0]])
        for w in ws:
            assert w.sum() == pytest.approx(1.0, abs=1e-15)


def tiny_algo(**kw):
    base = dict(
        n_tasks=2,
        candidate_weights=2,
        warmup_iters=2,
        update_iters=1,
        generations=1,
        buffer_count=10,
        buffer_size=2,
        minibatch_size=64,
        rollout_budget=20,
        hidden_size=8,
        eval_seed_count=2,
        model_epochs=50,
    )
    base.update(kw)
    return AlgoConfig(**base)


def tiny_scn():
    return make_cfg(n_sensors=2, n_slots=8, sensor_rate_range=(0.5, 0.5),
                    emergency_threshold=0.0)


class TestEmoppo:
    def test_zero_generations_is_warmup_only(self):
        res = emoppo_tml(tiny_scn(), W, tiny_algo(generations=0), master_seed=0)
        assert len(res.generation_rows) == 1
        assert res.generation_rows[0].generation == 0
        assert res.warmup_hypervolume == res.archive.hypervolume()
        assert len(res.archive) >= 1
        assert len(res.population) == 2  # falls back to the warm-up offspring
        assert res.eval_seeds == seeding.derive_ints(0, seeding.TAG_EVAL, 2)

    def test_one_generation_runs_and_grows_log(self):
        res = emoppo_tml(tiny_scn(), W, tiny_algo(), master_seed=1)
        assert [r.generation for r in res.generation_rows] == [0, 1]
        assert res.generation_rows[1].archive_size == len(res.archive)
        assert len(res.generation_rows[1].selected_weights) == 2
        res.archive.check_invariants()
        for e in res.archive.entries:
            assert 0.0 <= e.objectives[0] <= 1.0
            assert 0.0 <= e.objectives[1] <= 1.0
            assert e.policy is not None
            assert e.policy_meta["kind"] == "recurrent"

    def test_reproducible(self):
        a = emoppo_tml(tiny_scn(), W, tiny_algo(), master_seed=5)
        b = emoppo_tml(tiny_scn(), W, tiny_algo(), master_seed=5)
        np.testing.assert_array_equal(a.archive.points(), b.archive.points())
        assert [r.hypervolume for r in a.generation_rows] == [
            r.hypervolume for r in b.generation_rows
        ]

    def test_hypervolume_never_shrinks_across_generations(self):
        res = emoppo_tml(tiny_scn(), W, tiny_algo(generations=2), master_seed=2)
        hv = [r.hypervolume for r in res.generation_rows]
        assert all(b >= a - 1e-15 for a, b in zip(hv, hv[1:]))

    def test_on_generation_callback(self):
        seen = []
        emoppo_tml(tiny_scn(), W, tiny_algo(), master_seed=0,
                   on_generation=lambda g, arc: seen.append((g, len(arc))))
        assert [g for g, _ in seen] == [0, 1]
