"""Timing comparison of the compiled slot kernel vs the pure-numpy path.

Runs the same seeded workload through both backends and prints per-call
times plus the speedup. Also times the discounted-scan kernel used by
advantage estimation. Usage:

    python benchmarks/bench_kernels.py [--sensors N] [--slots T] [--repeats R]
"""

from __future__ import annotations

import argparse
import math
import time

import numpy as np

from mocharge import backend
from mocharge.env import ScenarioConfig, advance_slot, init_state
from mocharge.kernels import discounted_scan


def make_cfg(n_sensors: int, n_slots: int) -> ScenarioConfig:
    return ScenarioConfig(
        n_sensors=n_sensors,
        area=(500.0, 500.0),
        slot_duration=10.0,
        n_slots=n_slots,
        sensor_init_energy=(5.0, 5.0),
        sensor_rate_range=(0.02, 0.1),
        charger_capacity=199_800.0,
        move_cost=50.0,
        charge_radius=30.0,
        wpt_alpha=4.0,
        wpt_beta=1.0,
        transmit_power=5.0,
        pile_position=(250.0, 250.0),
        pile_power=2000.0,
        coupling=0.5,
        quality_factors=(30.0, 30.0),
        alive_threshold=0.2,
        emergency_threshold=19_980.0,
        pile_proximity=30.0,
        charger_start=(0.0, 0.0),
        d_max_step=50.0,
    )


def run_episode(cfg: ScenarioConfig, seed: int, use_kernel: bool) -> float:
    rng = np.random.default_rng(seed)
    state = init_state(cfg, rng)
    thetas = rng.uniform(0.0, 2.0 * math.pi, size=cfg.n_slots)
    dists = rng.uniform(0.0, cfg.d_max_step, size=cfg.n_slots)
    start = time.perf_counter()
    for t in range(cfg.n_slots):
        advance_slot(state, cfg, float(thetas[t]), float(dists[t]), use_kernel=use_kernel)
    return time.perf_counter() - start


def bench_slots(cfg: ScenarioConfig, repeats: int) -> None:
    print(f"slot physics: {cfg.n_sensors} sensors, {cfg.n_slots} slots, {repeats} episodes")
    if backend.NUMBA_ENABLED:
        run_episode(cfg, 0, use_kernel=True)  # compile outside the timed region
        t_jit = min(run_episode(cfg, s, use_kernel=True) for s in range(repeats))
    else:
        t_jit = None
        print("  compiled kernel unavailable (MOCHARGE_NUMBA=0 or numba missing)")
    t_np = min(run_episode(cfg, s, use_kernel=False) for s in range(repeats))
    print(f"  numpy    {t_np * 1e3:9.3f} ms/episode")
    if t_jit is not None:
        print(f"  compiled {t_jit * 1e3:9.3f} ms/episode  ({t_np / t_jit:5.1f}x)")


def bench_scan(repeats: int) -> None:
    t_len, width = 200, 4096
    rng = np.random.default_rng(7)
    x = rng.normal(size=(t_len, width))
    coef = rng.uniform(0.9, 0.99, size=(t_len, width))
    print(f"discounted scan: shape ({t_len}, {width}), {repeats} repeats")

    def run(use_kernel: bool) -> float:
        start = time.perf_counter()
        discounted_scan(x, coef, use_kernel=use_kernel)
        return time.perf_counter() - start

    if backend.NUMBA_ENABLED:
        run(True)
        t_jit = min(run(True) for _ in range(repeats))
    else:
        t_jit = None
    t_np = min(run(False) for _ in range(repeats))
    print(f"  numpy    {t_np * 1e3:9.3f} ms/call")
    if t_jit is not None:
        print(f"  compiled {t_jit * 1e3:9.3f} ms/call  ({t_np / t_jit:5.1f}x)")


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--sensors", type=int, default=100)
    parser.add_argument("--slots", type=int, default=200)
    parser.add_argument("--repeats", type=int, default=5)
    args = parser.parse_args()
    bench_slots(make_cfg(args.sensors, args.slots), args.repeats)
    bench_scan(args.repeats)


if __name__ == "__main__":
    main()
