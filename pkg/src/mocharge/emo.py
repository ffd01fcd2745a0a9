"""Evolutionary multi-objective outer loop over weighted learning tasks.

Maintains a Pareto archive of trained policies in objective space
(episode-mean survival rate, episode-mean energy efficiency), both in [0, 1]
and maximized. A warm-up stage trains one task per evenly spaced simplex
weight; each later generation then

1. rebuilds the task population from angular performance buffers (tpu),
2. fits one small regressor per surviving lineage predicting the objective
   increment a weight produces (fit_increment_models),
3. greedily selects the next round of (task, weight) pairs by scoring
   predicted archive hypervolume and a decaying diversity term against a
   virtual archive (tppe inside pits),
4. trains the selections (lstm_mppo) and folds them into the archive.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import seeding
from .env import MochargeError, ScenarioConfig
from .momdp import RewardWeights
from .nn import Adam, Dense
from .ppo import GaeConfig, LearningTask, TrainSetup, lstm_mppo, make_task


class BadReference(MochargeError):
    """A front point fails to dominate the hypervolume reference point."""


class EmptyArchive(MochargeError):
    """Scoring attempted against an empty (virtual) archive."""


class EmptyPopulation(MochargeError):
    """Task selection attempted on an empty population."""


def dominates(x, y) -> bool:
    """Maximization Pareto dominance: x >= y everywhere, > somewhere."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise ValueError(f"dimension mismatch: {x.shape} vs {y.shape}")
    return bool(np.all(x >= y) and np.any(x > y))


def non_dominated_mask(points: np.ndarray) -> np.ndarray:
    """Boolean mask of points not dominated by any other point.

    Exact duplicates do not dominate each other, so all copies survive.
    """
    pts = np.asarray(points, dtype=np.float64)
    k = pts.shape[0]
    mask = np.ones(k, dtype=bool)
    for i in range(k):
        if not mask[i]:
            continue
        ge = np.all(pts >= pts[i], axis=1)
        gt = np.any(pts > pts[i], axis=1)
        if np.any(ge & gt):
            mask[i] = False
    return mask


def pareto_filter_unique(points: list[np.ndarray]) -> list[np.ndarray]:
    """Non-dominated subset, deduplicating exact vectors (earlier kept)."""
    out: list[np.ndarray] = []
    for p in points:
        p = np.asarray(p, dtype=np.float64)
        if any(np.array_equal(q, p) or dominates(q, p) for q in out):
            continue
        out = [q for q in out if not dominates(p, q)]
        out.append(p)
    return out


def hypervolume2(points, ref=(0.0, 0.0)) -> float:
    """Exact dominated area of a 2-objective front relative to ref.

    Every point must dominate ref (componentwise >= with one strict), else
    BadReference. Dominated and duplicate points contribute nothing.
    """
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise ValueError(f"expected (k, 2) points, got {pts.shape}")
    ref = np.asarray(ref, dtype=np.float64)
    for p in pts:
        if not dominates(p, ref):
            raise BadReference(f"point {p} does not dominate reference {ref}")
    front = pareto_filter_unique(list(pts))
    order = sorted(range(len(front)), key=lambda i: -front[i][0])
    area = 0.0
    for rank, i in enumerate(order):
        f1, f2 = front[i]
        next_f1 = front[order[rank + 1]][0] if rank + 1 < len(order) else ref[0]
        area += (f1 - next_f1) * (f2 - ref[1])
    return float(area)


@dataclass(slots=True)
class ArchiveEntry:
    """One archived policy with provenance."""

    objectives: np.ndarray  # (2,) evaluated F
    policy: object  # frozen actor clone
    policy_meta: dict
    weight: np.ndarray
    generation: int
    task_uid: int
    order: int = -1  # insertion counter, set by the archive


class ParetoArchive:
    """Unbounded archive of mutually non-dominated entries (maximization)."""

    def __init__(self, reference=(0.0, 0.0)):
        self.reference = np.asarray(reference, dtype=np.float64)
        self.entries: list[ArchiveEntry] = []
        self._counter = 0

    def __len__(self) -> int:
        return len(self.entries)

    def points(self) -> np.ndarray:
        if not self.entries:
            return np.zeros((0, 2))
        return np.stack([e.objectives for e in self.entries])

    def update(self, candidates: list[ArchiveEntry]) -> int:
        """Insert candidates in order; returns how many were accepted.

        Result is exactly the non-dominated subset of old entries plus
        candidates; exact-duplicate objective vectors keep the earlier entry.
        """
        accepted = 0
        for cand in candidates:
            f = np.asarray(cand.objectives, dtype=np.float64)
            if any(
                np.array_equal(e.objectives, f) or dominates(e.objectives, f)
                for e in self.entries
            ):
                continue
            self.entries = [e for e in self.entries if not dominates(f, e.objectives)]
            cand.objectives = f
            cand.order = self._counter
            self._counter += 1
            self.entries.append(cand)
            accepted += 1
        return accepted

    def hypervolume(self) -> float:
        if not self.entries:
            return 0.0
        pts = [e.objectives for e in self.entries if dominates(e.objectives, self.reference)]
        if not pts:
            return 0.0
        return hypervolume2(np.stack(pts), self.reference)

    def check_invariants(self) -> None:
        pts = self.points()
        for i in range(len(pts)):
            for j in range(len(pts)):
                if i != j and dominates(pts[i], pts[j]):
                    raise AssertionError(f"entry {i} dominates entry {j}")


def archive_update(archive: ParetoArchive, candidates: list[ArchiveEntry]) -> ParetoArchive:
    """Functional alias for ParetoArchive.update."""
    archive.update(candidates)
    return archive


def buffer_index(objectives, b_num: int) -> int:
    """Angular bucket of F in the first quadrant, clamped to [0, b_num - 1]."""
    f = np.asarray(objectives, dtype=np.float64)
    ang = math.atan2(f[1], f[0])
    # epsilon snaps exact bucket boundaries (e.g. the diagonal) upward, where
    # real-arithmetic floor would put them; the quotient can land a few ulps low
    idx = int(ang / ((math.pi / 2.0) / b_num) + 1e-9)
    return min(max(idx, 0), b_num - 1)


def tpu(population: list[LearningTask], offspring: list[LearningTask],
        b_num: int, b_size: int) -> list[LearningTask]:
    """Task-population update via angular performance buffers.

    Pools population and offspring, buckets tasks by the angle of their
    objective vector, keeps the top b_size per bucket by Euclidean norm of F
    (descending, stable), and returns the buckets concatenated in angular
    order.
    """
    pool = list(population) + list(offspring)
    for t in pool:
        if t.objectives is None:
            raise ValueError(f"task {t.uid} has no evaluated objectives")
    buffers: dict[int, list[LearningTask]] = {}
    for t in pool:
        buffers.setdefault(buffer_index(t.objectives, b_num), []).append(t)
    new_pop: list[LearningTask] = []
    for idx in sorted(buffers):
        ranked = sorted(
            buffers[idx],
            key=lambda t: -float(np.linalg.norm(np.asarray(t.objectives))),
        )
        new_pop.extend(ranked[:b_size])
    return new_pop


class IncrementModel:
    """Small regressor: simplex weight -> predicted objective increment.

    Cold (no observations) models predict exactly zero.
    """

    def __init__(self, n_objectives: int = 2, hidden_size: int = 32,
                 epochs: int = 2000, learning_rate: float = 0.01):
        self.n_objectives = n_objectives
        self.hidden_size = hidden_size
        self.epochs = epochs
        self.learning_rate = learning_rate
        self.fc: Dense | None = None
        self.out: Dense | None = None

    @property
    def trained(self) -> bool:
        return self.fc is not None

    def fit(self, history: list, rng: np.random.Generator) -> None:
        """Full-batch mean-squared-error fit on (w, delta_F) observations."""
        if not history:
            self.fc = None
            self.out = None
            return
        x = np.stack([np.asarray(w, dtype=np.float64) for w, _ in history])
        y = np.stack([np.asarray(d, dtype=np.float64) for _, d in history])
        self.fc = Dense(x.shape[1], self.hidden_size, "tanh", rng)
        self.out = Dense(self.hidden_size, self.n_objectives, "identity", rng)
        params = {
            "fc.w": self.fc.w, "fc.b": self.fc.b,
            "out.w": self.out.w, "out.b": self.out.b,
        }
        opt = Adam(params, lr=self.learning_rate)
        inv = 1.0 / x.shape[0]
        for _ in range(self.epochs):
            h, c1 = self.fc.forward(x)
            pred, c2 = self.out.forward(h)
            dpred = (pred - y) * (2.0 * inv / self.n_objectives)
            dh, g2 = self.out.backward(c2, dpred)
            _, g1 = self.fc.backward(c1, dh)
            opt.step(params, {
                "fc.w": g1["w"], "fc.b": g1["b"],
                "out.w": g2["w"], "out.b": g2["b"],
            })

    def predict(self, w) -> np.ndarray:
        w = np.asarray(w, dtype=np.float64).reshape(1, -1)
        if not self.trained:
            return np.zeros(self.n_objectives)
        h, _ = self.fc.forward(w, need_cache=False)
        pred, _ = self.out.forward(h, need_cache=False)
        return pred[0]


def fit_increment_models(population: list[LearningTask], master_seed: int,
                         generation: int, hidden_size: int = 32,
                         epochs: int = 2000, learning_rate: float = 0.01) -> dict:
    """Refit one increment model per surviving lineage; returns {uid: model}."""
    models = {}
    for task in population:
        model = IncrementModel(2, hidden_size, epochs, learning_rate)
        rng = seeding.generator(master_seed, seeding.TAG_MODEL, generation, task.uid)
        model.fit(task.history, rng)
        models[task.uid] = model
    return models


@dataclass(frozen=True, slots=True)
class TppeConfig:
    """Schedules and knobs for time-varying Pareto policy evaluation."""

    g_max: int
    mode: str = "text"  # "text": alpha*H + (1-alpha)*D; "algorithm": H - alpha*D
    eps: float = 1e-6
    alpha_fn: object = None  # optional callable t -> alpha
    lambda_fn: object = None  # optional callable t -> lambda_t

    def __post_init__(self):
        if self.mode not in ("text", "algorithm"):
            raise ValueError(f"unknown tppe mode {self.mode!r}")

    def alpha(self, t: int) -> float:
        if self.alpha_fn is not None:
            return float(self.alpha_fn(t))
        return min(max(t / self.g_max, 0.0), 1.0) if self.g_max > 0 else 1.0

    def lam(self, t: int) -> float:
        if self.lambda_fn is not None:
            return float(self.lambda_fn(t))
        return min(max(1.0 - t / self.g_max, 0.0), 1.0) if self.g_max > 0 else 0.0


@dataclass(slots=True)
class TppeScore:
    score: float
    hypervolume: float
    diversity: float
    predicted_point: np.ndarray | None


def tppe(t: int, archive_points: list, model: IncrementModel | None,
         candidate: tuple | None, cfg: TppeConfig) -> TppeScore:
    """Score a virtual archive, optionally extended by one predicted point.

    candidate is (F, w): the predicted post-training point is F + model(w),
    clamped to [0, 1] per component. H is the exact hypervolume of the
    non-dominated union; D sums, over the f1-sorted front, a decaying blend
    of adjacent gaps and inverse Gaussian-kernel density.
    """
    pts = [np.asarray(p, dtype=np.float64) for p in archive_points]
    predicted = None
    if candidate is not None:
        f_cur, w = candidate
        delta = model.predict(w) if model is not None else np.zeros(2)
        predicted = np.clip(np.asarray(f_cur, dtype=np.float64) + delta, 0.0, 1.0)
        pts = pts + [predicted]
    front = pareto_filter_unique(pts)
    if not front:
        raise EmptyArchive("no points to evaluate")
    ref = np.zeros(2)
    hv_pts = [p for p in front if dominates(p, ref)]
    h = hypervolume2(np.stack(hv_pts), ref) if hv_pts else 0.0
    lam_t = cfg.lam(t)
    alpha_t = cfg.alpha(t)
    d = 0.0
    if len(front) > 1:
        ordered = sorted(front, key=lambda p: float(p[0]))
        arr = np.stack(ordered)
        gaps = np.linalg.norm(arr[1:] - arr[:-1], axis=1)
        bandwidth = float(gaps.mean())
        if bandwidth <= 0.0:
            bandwidth = cfg.eps
        diff = arr[:, None, :] - arr[None, :, :]
        sq = (diff * diff).sum(axis=2)
        density = np.exp(-sq / (2.0 * bandwidth * bandwidth)).sum(axis=1)
        for i in range(len(ordered) - 1):
            d += lam_t * float(gaps[i]) + (1.0 - lam_t) / (float(density[i]) + cfg.eps)
    if cfg.mode == "text":
        score = alpha_t * h + (1.0 - alpha_t) * d
    else:
        score = h - alpha_t * d
    return TppeScore(score=float(score), hypervolume=float(h), diversity=float(d),
                     predicted_point=predicted)


def sample_candidate_weights(w: np.ndarray, k: int, rng: np.random.Generator,
                             concentration: float = 25.0) -> list[np.ndarray]:
    """The task's own weight plus k-1 Dirichlet perturbations around it."""
    out = [np.asarray(w, dtype=np.float64).copy()]
    alpha = np.asarray(w, dtype=np.float64) * concentration + 0.3
    for _ in range(max(k - 1, 0)):
        out.append(rng.dirichlet(alpha))
    return out


def pits(n_select: int, k_candidates: int, t: int, population: list[LearningTask],
         models: dict, archive: ParetoArchive, cfg: TppeConfig,
         rng: np.random.Generator) -> list[LearningTask]:
    """Greedy prospective task selection against a virtual archive.

    Fills n_select slots; each slot scans every (task, candidate weight)
    pair, scores it with tppe, keeps the argmax (ties: higher predicted-H
    contribution, then lowest task index, then lowest weight index), clones
    the winner with the winning weight, and inserts its predicted point into
    the virtual archive.
    """
    if not population:
        raise EmptyPopulation("cannot select from an empty population")
    virtual = [e.objectives.copy() for e in archive.entries]
    selected: list[LearningTask] = []
    for _ in range(n_select):
        best = None
        for j, task in enumerate(population):
            weights = sample_candidate_weights(task.w, k_candidates, rng)
            model = models.get(task.uid)
            for k_idx, w in enumerate(weights):
                sc = tppe(t, virtual, model, (task.objectives, w), cfg)
                key = (sc.score, sc.hypervolume)
                if best is None or key > best[0]:
                    best = (key, j, k_idx, task, w, sc)
        _, _, _, task, w, sc = best
        selected.append(task.clone(new_w=w))
        if sc.predicted_point is not None:
            virtual = pareto_filter_unique(virtual + [sc.predicted_point])
    return selected


@dataclass(frozen=True, slots=True)
class AlgoConfig:
    """Evolutionary-trainer hyperparameters (defaults follow the full-scale setup)."""

    n_tasks: int = 6
    candidate_weights: int = 5
    warmup_iters: int = 400
    update_iters: int = 50
    generations: int = 120
    buffer_count: int = 50
    buffer_size: int = 2
    gamma: float = 0.98
    gae_lambda: float = 0.95
    clip: float = 0.2
    epochs: int = 4
    minibatch_size: int = 1024
    entropy_coef: float = 0.01
    learning_rate: float = 3e-4
    rollout_budget: int = 2048
    hidden_size: int = 256
    init_log_std: float = 0.0
    eval_seed_count: int = 5
    tppe_mode: str = "text"
    tppe_eps: float = 1e-6
    model_hidden: int = 32
    model_epochs: int = 2000
    model_lr: float = 0.01
    jobs: int = 1

    def gae(self) -> GaeConfig:
        return GaeConfig(
            gamma=self.gamma,
            gae_lambda=self.gae_lambda,
            clip=self.clip,
            epochs=self.epochs,
            minibatch_size=self.minibatch_size,
            entropy_coef=self.entropy_coef,
        )


def even_simplex_weights(n: int) -> list[np.ndarray]:
    """Evenly spaced 2-simplex weights: ((i)/(n-1), 1 - i/(n-1))."""
    if n == 1:
        return [np.array([0.5, 0.5])]
    return [np.array([i / (n - 1), 1.0 - i / (n - 1)]) for i in range(n)]


@dataclass(slots=True)
class GenerationRow:
    generation: int
    archive_size: int
    hypervolume: float
    mean_diversity: float
    selected_weights: list


@dataclass(slots=True)
class EvolutionResult:
    archive: ParetoArchive
    generation_rows: list[GenerationRow]
    diagnostics: list[dict]
    eval_seeds: list[int]
    warmup_hypervolume: float
    population: list[LearningTask]


def _snapshot_entries(tasks: list[LearningTask], generation: int) -> list[ArchiveEntry]:
    return [
        ArchiveEntry(
            objectives=np.asarray(t.objectives, dtype=np.float64).copy(),
            policy=t.policy.clone(),
            policy_meta=t.policy.checkpoint_meta(),
            weight=t.w.copy(),
            generation=generation,
            task_uid=t.uid,
        )
        for t in tasks
    ]


def emoppo_tml(
    scenario: ScenarioConfig,
    rewards: RewardWeights,
    algo: AlgoConfig,
    master_seed: int,
    recurrent: bool = True,
    use_kernel: bool | None = None,
    on_generation=None,
    on_failure=None,
) -> EvolutionResult:
    """Full evolutionary run: warm-up, then generations of
    buffer update -> model fit -> prospective selection -> training ->
    archive update. Deterministic for a fixed (configs, master_seed).
    """
    eval_seeds = seeding.derive_ints(master_seed, seeding.TAG_EVAL, algo.eval_seed_count)
    setup = TrainSetup(
        scenario=scenario,
        rewards=rewards,
        gae=algo.gae(),
        rollout_budget=algo.rollout_budget,
        eval_seeds=eval_seeds,
        master_seed=master_seed,
        use_kernel=use_kernel,
        jobs=algo.jobs,
    )
    tppe_cfg = TppeConfig(g_max=algo.generations, mode=algo.tppe_mode, eps=algo.tppe_eps)
    archive = ParetoArchive()
    diagnostics: list[dict] = []
    gen_rows: list[GenerationRow] = []

    def record_row(gen: int, tasks: list[LearningTask]) -> None:
        pts = [e.objectives for e in archive.entries]
        div = tppe(gen, pts, None, None, tppe_cfg).diversity if pts else 0.0
        gen_rows.append(
            GenerationRow(
                generation=gen,
                archive_size=len(archive),
                hypervolume=archive.hypervolume(),
                mean_diversity=div,
                selected_weights=[[float(x) for x in t.w] for t in tasks],
            )
        )

    offspring = [
        make_task(
            uid=i,
            scenario=scenario,
            w=w,
            hidden_size=algo.hidden_size,
            learning_rate=algo.learning_rate,
            init_log_std=algo.init_log_std,
            seed=master_seed,
            recurrent=recurrent,
        )
        for i, w in enumerate(even_simplex_weights(algo.n_tasks))
    ]
    next_uid = algo.n_tasks
    offspring, rows = lstm_mppo(offspring, algo.warmup_iters, setup, phase=0)
    diagnostics.extend(rows)
    archive.update(_snapshot_entries(offspring, generation=0))
    archive.check_invariants()
    record_row(0, offspring)
    warmup_hv = archive.hypervolume()
    if on_generation is not None:
        on_generation(0, archive)

    population: list[LearningTask] = []
    for gen in range(1, algo.generations + 1):
        try:
            population = tpu(population, offspring, algo.buffer_count, algo.buffer_size)
            models = fit_increment_models(
                population, master_seed, gen,
                algo.model_hidden, algo.model_epochs, algo.model_lr,
            )
            pits_rng = seeding.generator(master_seed, seeding.TAG_PITS, gen)
            selected = pits(
                algo.n_tasks, algo.candidate_weights, gen,
                population, models, archive, tppe_cfg, pits_rng,
            )
            for task in selected:
                task.uid = next_uid
                next_uid += 1
            offspring, rows = lstm_mppo(selected, algo.update_iters, setup, phase=gen)
            diagnostics.extend(rows)
            archive.update(_snapshot_entries(offspring, generation=gen))
            archive.check_invariants()
            record_row(gen, offspring)
            if on_generation is not None:
                on_generation(gen, archive)
        except Exception:
            if on_failure is not None:
                on_failure(archive, gen)
            raise
    return EvolutionResult(
        archive=archive,
        generation_rows=gen_rows,
        diagnostics=diagnostics,
        eval_seeds=eval_seeds,
        warmup_hypervolume=warmup_hv,
        population=population if population else offspring,
    )
