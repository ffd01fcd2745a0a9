"""Physics of a rechargeable sensor network served by one mobile charger.

The world is a rectangular field of battery-powered sensors that drain a
fixed per-slot amount each. A single mobile charger drives around the field,
beams energy to every alive sensor inside a cutoff radius, and can dock at a
stationary high-power pile to refill itself through resonant coupling. Time
advances in fixed slots; each slot produces a :class:`SlotLedger` accounting
for every joule moved, delivered, or lost, plus the two per-slot quality
metrics: node survival rate and energy usage efficiency.

All arrays are float64. Reductions are sequential (cumsum-based) so the
pure-numpy path matches the compiled kernel bit-for-bit in practice and each
backend is deterministic on its own.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .backend import NUMBA_ENABLED


class MochargeError(Exception):
    """Base class for package errors."""


class BadConfig(MochargeError):
    """Scenario configuration violates a validity constraint."""


class NotAtPile(MochargeError):
    """Dock requested while the charger is outside the pile proximity."""


def _pair(value, name: str) -> tuple[float, float]:
    try:
        a, b = value
    except (TypeError, ValueError) as exc:
        raise BadConfig(f"{name} must be a pair, got {value!r}") from exc
    return float(a), float(b)


@dataclass(frozen=True, slots=True)
class ScenarioConfig:
    """Immutable description of one deployment scenario.

    Energies are joules, distances meters, powers watts, durations seconds.
    ``sensor_init_energy`` and ``sensor_rate_range`` are (low, high) bounds
    of per-sensor uniform draws; initial energy doubles as battery capacity.
    """

    n_sensors: int
    area: tuple[float, float]
    slot_duration: float
    n_slots: int
    sensor_init_energy: tuple[float, float]
    sensor_rate_range: tuple[float, float]
    charger_capacity: float
    move_cost: float
    charge_radius: float
    wpt_alpha: float
    wpt_beta: float
    transmit_power: float
    pile_position: tuple[float, float]
    pile_power: float
    coupling: float
    quality_factors: tuple[float, float]
    alive_threshold: float
    emergency_threshold: float
    pile_proximity: float
    charger_start: tuple[float, float]
    d_max_step: float
    rng_seed: int = 0
    terminate_on_all_dead: bool = False

    def __post_init__(self):
        object.__setattr__(self, "area", _pair(self.area, "area"))
        object.__setattr__(self, "sensor_init_energy", _pair(self.sensor_init_energy, "sensor_init_energy"))
        object.__setattr__(self, "sensor_rate_range", _pair(self.sensor_rate_range, "sensor_rate_range"))
        object.__setattr__(self, "pile_position", _pair(self.pile_position, "pile_position"))
        object.__setattr__(self, "quality_factors", _pair(self.quality_factors, "quality_factors"))
        object.__setattr__(self, "charger_start", _pair(self.charger_start, "charger_start"))
        if self.n_sensors < 1:
            raise BadConfig("n_sensors must be >= 1")
        if self.n_slots < 1:
            raise BadConfig("n_slots must be >= 1")
        if self.area[0] <= 0 or self.area[1] <= 0:
            raise BadConfig("area sides must be positive")
        for name in ("slot_duration", "charger_capacity", "move_cost", "charge_radius", "d_max_step"):
            if getattr(self, name) <= 0:
                raise BadConfig(f"{name} must be positive")
        for name in ("wpt_alpha", "wpt_beta", "transmit_power", "pile_power", "coupling",
                     "alive_threshold", "emergency_threshold", "pile_proximity"):
            if getattr(self, name) < 0:
                raise BadConfig(f"{name} must be nonnegative")
        lo, hi = self.sensor_init_energy
        if lo <= 0 or hi < lo:
            raise BadConfig("sensor_init_energy bounds must satisfy 0 < low <= high")
        lo, hi = self.sensor_rate_range
        if lo < 0 or hi < lo:
            raise BadConfig("sensor_rate_range bounds must satisfy 0 <= low <= high")
        qs, qr = self.quality_factors
        if qs <= 0 or qr <= 0:
            raise BadConfig("quality_factors must be positive")
        for (px, py), name in (
            (self.pile_position, "pile_position"),
            (self.charger_start, "charger_start"),
        ):
            if not (0 <= px <= self.area[0] and 0 <= py <= self.area[1]):
                raise BadConfig(f"{name} must lie inside the area")
        if self.sensor_init_energy[0] <= self.alive_threshold:
            raise BadConfig("initial energy must exceed the alive threshold")


@dataclass(slots=True)
class ChargerState:
    """Mobile charger pose and battery."""

    x: float
    y: float
    energy: float
    docked: bool = False

    @property
    def position(self) -> tuple[float, float]:
        return (self.x, self.y)


@dataclass(slots=True)
class SensorView:
    """Read-only snapshot of one sensor (convenience accessor)."""

    position: tuple[float, float]
    remaining_energy: float
    drain_rate: float
    alive: bool


@dataclass(slots=True)
class NetworkState:
    """Mutable simulation state for one episode."""

    slot: int
    sensor_pos: np.ndarray  # (n, 2)
    sensor_energy: np.ndarray  # (n,)
    sensor_rate: np.ndarray  # (n,)
    sensor_alive: np.ndarray  # (n,) bool
    sensor_capacity: np.ndarray  # (n,)
    charger: ChargerState
    surv_sum: float = 0.0
    eta_sum: float = 0.0

    def sensor(self, i: int) -> SensorView:
        return SensorView(
            position=(float(self.sensor_pos[i, 0]), float(self.sensor_pos[i, 1])),
            remaining_energy=float(self.sensor_energy[i]),
            drain_rate=float(self.sensor_rate[i]),
            alive=bool(self.sensor_alive[i]),
        )

    @property
    def n_alive(self) -> int:
        return int(self.sensor_alive.sum())

    @property
    def mean_survival(self) -> float:
        """Arithmetic mean of per-slot survival rate over elapsed slots."""
        return self.surv_sum / self.slot if self.slot > 0 else 0.0

    @property
    def mean_efficiency(self) -> float:
        """Arithmetic mean of per-slot energy usage efficiency over elapsed slots."""
        return self.eta_sum / self.slot if self.slot > 0 else 0.0

    def copy(self) -> "NetworkState":
        return NetworkState(
            slot=self.slot,
            sensor_pos=self.sensor_pos.copy(),
            sensor_energy=self.sensor_energy.copy(),
            sensor_rate=self.sensor_rate.copy(),
            sensor_alive=self.sensor_alive.copy(),
            sensor_capacity=self.sensor_capacity.copy(),
            charger=ChargerState(self.charger.x, self.charger.y, self.charger.energy, self.charger.docked),
            surv_sum=self.surv_sum,
            eta_sum=self.eta_sum,
        )


@dataclass(slots=True)
class SlotLedger:
    """Per-slot energy accounting and outcome flags.

    Every entry is nonnegative. The slot energy total satisfies
    e_sum == e_move + sum(e_charge) + sum(e_loss).
    """

    slot: int
    e_move: float
    e_charge: np.ndarray  # (n,) delivered to each sensor
    e_loss: np.ndarray  # (n,) transmission loss apportioned per sensor
    e_tx: float  # energy the charger spent transmitting
    pile_transfer_in: float  # energy received while docked
    n_dead: int
    boundary_violation: bool
    docked: bool
    depleted: bool
    r_surv: float
    eta: float

    @property
    def e_charge_total(self) -> float:
        return float(np.cumsum(self.e_charge)[-1]) if self.e_charge.size else 0.0

    @property
    def e_loss_total(self) -> float:
        return float(np.cumsum(self.e_loss)[-1]) if self.e_loss.size else 0.0

    @property
    def e_sum(self) -> float:
        return self.e_move + self.e_charge_total + self.e_loss_total


def wpt_received_power(distance, cfg: ScenarioConfig):
    """Received power at a sensor: alpha/(d+beta)^2 inside the cutoff radius, else 0."""
    d = np.asarray(distance, dtype=np.float64)
    s = d + cfg.wpt_beta
    p = cfg.wpt_alpha / (s * s)
    out = np.where(d <= cfg.charge_radius, p, 0.0)
    return float(out) if out.ndim == 0 else out


def pile_efficiency(coupling: float, q_source: float, q_receiver: float) -> float:
    """Resonant-coupling transfer efficiency, strictly inside (0, 1)."""
    x = coupling * coupling * q_source * q_receiver
    return x / (1.0 + math.sqrt(1.0 + x)) ** 2


def init_state(cfg: ScenarioConfig, rng: np.random.Generator) -> NetworkState:
    """Draw a fresh episode state: sensor layout, batteries, drain rates."""
    n = cfg.n_sensors
    pos = np.empty((n, 2))
    pos[:, 0] = rng.uniform(0.0, cfg.area[0], size=n)
    pos[:, 1] = rng.uniform(0.0, cfg.area[1], size=n)
    lo, hi = cfg.sensor_init_energy
    energy = rng.uniform(lo, hi, size=n) if hi > lo else np.full(n, lo)
    rlo, rhi = cfg.sensor_rate_range
    rate = rng.uniform(rlo, rhi, size=n) if rhi > rlo else np.full(n, rlo)
    return NetworkState(
        slot=0,
        sensor_pos=pos,
        sensor_energy=energy,
        sensor_rate=rate,
        sensor_alive=np.ones(n, dtype=bool),
        sensor_capacity=energy.copy(),
        charger=ChargerState(cfg.charger_start[0], cfg.charger_start[1], cfg.charger_capacity),
    )


@dataclass(slots=True)
class MoveOutcome:
    e_move: float
    traveled: float
    boundary_violation: bool
    depleted: bool


def move_charger(state: NetworkState, cfg: ScenarioConfig, theta: float, dist: float) -> MoveOutcome:
    """Drive the charger along heading theta for dist meters.

    The requested endpoint is clamped into the area box; the move is then
    truncated to whatever distance the remaining charge can pay for. Sets the
    violation flag when the pre-clamp endpoint left the box.
    """
    ch = state.charger
    ex = ch.x + dist * math.cos(theta)
    ey = ch.y + dist * math.sin(theta)
    gx = min(max(ex, 0.0), cfg.area[0])
    gy = min(max(ey, 0.0), cfg.area[1])
    violation = (gx != ex) or (gy != ey)
    ddx = gx - ch.x
    ddy = gy - ch.y
    traveled = math.sqrt(ddx * ddx + ddy * ddy)
    e_move = cfg.move_cost * traveled
    depleted = False
    if e_move > ch.energy:
        depleted = True
        if e_move > 0.0:
            frac = ch.energy / e_move
            gx = ch.x + ddx * frac
            gy = ch.y + ddy * frac
            traveled = traveled * frac
        e_move = ch.energy
        ch.energy = 0.0
    else:
        ch.energy = ch.energy - e_move
    ch.x = gx
    ch.y = gy
    return MoveOutcome(e_move=e_move, traveled=traveled, boundary_violation=violation, depleted=depleted)


@dataclass(slots=True)
class ChargeOutcome:
    e_charge: np.ndarray  # (n,)
    e_loss: np.ndarray  # (n,)
    e_tx: float
    depleted: bool


def _seq_sum(a: np.ndarray) -> float:
    # sequential left-to-right sum, matching the compiled kernel's loop order
    return float(np.cumsum(a)[-1]) if a.size else 0.0


def charge_in_range(state: NetworkState, cfg: ScenarioConfig) -> ChargeOutcome:
    """Transmit to every alive sensor inside the cutoff radius.

    Per-sensor received energy is the radio-model power times the slot
    duration, capped at battery headroom and scaled down if the charger
    cannot supply the full transmit energy. Total delivered energy never
    exceeds the transmitted energy; the difference is the loss, apportioned
    across receiving sensors proportionally to delivered energy (equal split
    when every in-range battery is already full). Caller must not be docked.
    """
    n = cfg.n_sensors
    ch = state.charger
    e_charge = np.zeros(n)
    e_loss = np.zeros(n)
    dx = state.sensor_pos[:, 0] - ch.x
    dy = state.sensor_pos[:, 1] - ch.y
    d = np.sqrt(dx * dx + dy * dy)
    mask = state.sensor_alive & (d <= cfg.charge_radius)
    if not mask.any():
        return ChargeOutcome(e_charge=e_charge, e_loss=e_loss, e_tx=0.0, depleted=False)
    e_tx_full = cfg.transmit_power * cfg.slot_duration
    e_tx = e_tx_full
    depleted = False
    if e_tx > ch.energy:
        depleted = True
        e_tx = ch.energy
    scale = e_tx / e_tx_full if e_tx_full > 0.0 else 0.0
    s = d[mask] + cfg.wpt_beta
    raw = cfg.wpt_alpha / (s * s) * cfg.slot_duration * scale
    head = np.maximum(state.sensor_capacity[mask] - state.sensor_energy[mask], 0.0)
    give = np.minimum(raw, head)
    e_charge[mask] = give
    total = _seq_sum(e_charge)
    if total > e_tx and total > 0.0:
        e_charge = e_charge * (e_tx / total)
        total = _seq_sum(e_charge)
    shortfall = e_tx - total
    if shortfall < 0.0:
        shortfall = 0.0
    if total > 0.0:
        e_loss = e_charge * (shortfall / total)
    else:
        e_loss[mask] = shortfall / int(mask.sum())
    state.sensor_energy += e_charge
    ch.energy = ch.energy - e_tx
    return ChargeOutcome(e_charge=e_charge, e_loss=e_loss, e_tx=e_tx, depleted=depleted)


def dock_and_recharge(state: NetworkState, cfg: ScenarioConfig) -> float:
    """Refill the charger from the pile for one slot; returns energy gained.

    Raises NotAtPile when the charger sits outside the pile proximity.
    """
    ch = state.charger
    dx = ch.x - cfg.pile_position[0]
    dy = ch.y - cfg.pile_position[1]
    if math.sqrt(dx * dx + dy * dy) > cfg.pile_proximity:
        raise NotAtPile(
            f"charger at ({ch.x:.3f}, {ch.y:.3f}) is outside pile proximity {cfg.pile_proximity}"
        )
    zeta = pile_efficiency(cfg.coupling, cfg.quality_factors[0], cfg.quality_factors[1])
    gain = zeta * cfg.pile_power * cfg.slot_duration
    headroom = cfg.charger_capacity - ch.energy
    if gain >= headroom:
        gain = headroom
        ch.energy = cfg.charger_capacity
    else:
        ch.energy += gain
    ch.docked = True
    return gain


def drain_sensors(state: NetworkState, cfg: ScenarioConfig, rates: np.ndarray | None = None) -> int:
    """Apply one slot of consumption to alive sensors; death is permanent.

    rates optionally overrides the per-sensor drain for this slot (used by
    the robustness harness). Returns the resulting total dead count.
    """
    r = state.sensor_rate if rates is None else rates
    alive = state.sensor_alive
    e = state.sensor_energy
    e[alive] = np.maximum(e[alive] - r[alive], 0.0)
    state.sensor_alive = alive & (e > cfg.alive_threshold)
    return int(cfg.n_sensors - state.sensor_alive.sum())


def slot_metrics(state: NetworkState, cfg: ScenarioConfig, ledger_e_charge_total: float, ledger_e_sum: float) -> tuple[float, float]:
    """Post-drain survival rate and energy usage efficiency for the slot.

    Efficiency is delivered/total energy this slot, defined as 0 for an idle
    slot (zero total), so docked or motionless slots never divide by zero.
    """
    r_surv = float(state.sensor_alive.sum()) / cfg.n_sensors
    eta = ledger_e_charge_total / ledger_e_sum if ledger_e_sum > 0.0 else 0.0
    return r_surv, eta


def advance_slot(
    state: NetworkState,
    cfg: ScenarioConfig,
    theta: float,
    dist: float,
    rates: np.ndarray | None = None,
    use_kernel: bool | None = None,
) -> SlotLedger:
    """Advance the world by one slot under a (heading, distance) command.

    Order of effects: emergency docking check, then either a docked refill
    slot or a move-and-charge slot, then sensor drain, then metrics. The
    docking rule triggers when charger energy is below the emergency
    threshold and the charger is already within the pile proximity; the dock
    consumes the whole slot.
    """
    ch = state.charger
    ch.docked = False
    pdx = ch.x - cfg.pile_position[0]
    pdy = ch.y - cfg.pile_position[1]
    near_pile = math.sqrt(pdx * pdx + pdy * pdy) <= cfg.pile_proximity
    n = cfg.n_sensors
    if ch.energy < cfg.emergency_threshold and near_pile:
        gain = dock_and_recharge(state, cfg)
        e_charge = np.zeros(n)
        e_loss = np.zeros(n)
        e_move = 0.0
        e_tx = 0.0
        violation = False
        depleted = False
        n_dead = drain_sensors(state, cfg, rates)
        docked = True
    else:
        gain = 0.0
        docked = False
        use = NUMBA_ENABLED if use_kernel is None else use_kernel
        if use and kernels.slot_step_jit is not None:
            e_charge = np.zeros(n)
            e_loss = np.zeros(n)
            r = state.sensor_rate if rates is None else np.ascontiguousarray(rates, dtype=np.float64)
            cx, cy, ce, e_move, e_tx, violation, depleted, n_dead = kernels.slot_step_jit(
                np.ascontiguousarray(state.sensor_pos[:, 0]),
                np.ascontiguousarray(state.sensor_pos[:, 1]),
                state.sensor_energy,
                r,
                state.sensor_alive,
                state.sensor_capacity,
                ch.x,
                ch.y,
                ch.energy,
                float(theta),
                float(dist),
                cfg.area[0],
                cfg.area[1],
                cfg.move_cost,
                cfg.charge_radius,
                cfg.wpt_alpha,
                cfg.wpt_beta,
                cfg.transmit_power,
                cfg.slot_duration,
                cfg.alive_threshold,
                e_charge,
                e_loss,
            )
            ch.x = float(cx)
            ch.y = float(cy)
            ch.energy = float(ce)
            violation = bool(violation)
            depleted = bool(depleted)
            n_dead = int(n_dead)
        else:
            mv = move_charger(state, cfg, float(theta), float(dist))
            cg = charge_in_range(state, cfg)
            e_move = mv.e_move
            e_charge = cg.e_charge
            e_loss = cg.e_loss
            e_tx = cg.e_tx
            violation = mv.boundary_violation
            depleted = mv.depleted or cg.depleted
            n_dead = drain_sensors(state, cfg, rates)
    e_charge_total = _seq_sum(e_charge)
    e_sum = e_move + e_charge_total + _seq_sum(e_loss)
    r_surv, eta = slot_metrics(state, cfg, e_charge_total, e_sum)
    state.slot += 1
    state.surv_sum += r_surv
    state.eta_sum += eta
    return SlotLedger(
        slot=state.slot,
        e_move=e_move,
        e_charge=e_charge,
        e_loss=e_loss,
        e_tx=e_tx,
        pile_transfer_in=gain,
        n_dead=n_dead,
        boundary_violation=violation,
        docked=docked,
        depleted=depleted,
        r_surv=r_surv,
        eta=eta,
    )


def episode_objectives(slot_metrics_seq) -> tuple[float, float]:
    """Arithmetic means of per-slot (survival, efficiency) pairs.

    Accepts an iterable of (r_surv, eta) pairs or of SlotLedger objects.
    """
    items = list(slot_metrics_seq)
    if items and isinstance(items[0], SlotLedger):
        items = [(led.r_surv, led.eta) for led in items]
    arr = np.asarray(items, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[1] != 2 or arr.shape[0] == 0:
        raise ValueError(f"expected a nonempty (T, 2) metric sequence, got shape {arr.shape}")
    return float(arr[:, 0].mean()), float(arr[:, 1].mean())
