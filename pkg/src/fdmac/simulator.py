"""Slot-level Monte-Carlo simulation of saturated FD-MAC and blind CSMA/CA users.

Slot rules
----------
Each slot the set of transmitting users is fixed.  At the end of the slot:

* non-transmitters sense perfectly: a busy slot resets their DIFS progress
  and freezes their backoff counter; an idle slot advances DIFS progress
  and, once DIFS is complete, decrements the counter.  A user that has
  completed DIFS with a zero counter transmits from the next slot on;
* an FD transmitter alone on the channel raises a false alarm with
  probability ``P_f``; in a two-user collision it detects the other with
  probability ``1 - P_m``; with three or more transmitters it always detects;
* a transmitter that detected (or false-alarmed) stops, moves up one backoff
  stage and redraws its counter; a transmitter that completes ``L`` slots
  without that happening resets to stage 0.

CSMA/CA transmitters are blind: they always send ``L`` slots and learn the
outcome (collided or not) afterwards.

Randomness
----------
Every user owns a PCG64 stream seeded from ``SeedSequence(seed,
spawn_key=(user,))``.  The number of solo slots until the next false alarm is
drawn once per transmission as a geometric variate, which is equivalent to a
Bernoulli(``P_f``) draw per solo slot.  This lets :meth:`Simulation.advance`
jump over idle gaps and solo transmissions in one step while consuming
exactly the same draws as slot-by-slot :meth:`Simulation.step`.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .params import ConfigError, Mode, ProtocolParams, StallError, UndefinedQuantityError, cw_of_stage

STALL_SLOTS = 10**9
_NEVER = np.iinfo(np.int64).max // 4


class Phase(str, Enum):
    WAITING_DIFS = "waiting_difs"
    BACKOFF = "backoff"
    TRANSMITTING = "transmitting"


@dataclass(frozen=True)
class UserState:
    phase: Phase
    difs_progress: int
    backoff_residual: int
    stage: int
    tx_elapsed: int


@dataclass(frozen=True)
class SimConfig:
    params: ProtocolParams
    seed: int = 0
    warmup_attempts: int = 10_000
    measure_attempts: int = 100_000

    def __post_init__(self):
        if not isinstance(self.params, ProtocolParams):
            raise ConfigError("params must be a ProtocolParams")
        if self.warmup_attempts < 0:
            raise ConfigError(f"warmup_attempts must be >= 0, got {self.warmup_attempts}")
        if self.measure_attempts < 1:
            raise ConfigError(f"measure_attempts must be >= 1, got {self.measure_attempts}")
        if not 0 <= self.seed < 2**64:
            raise ConfigError(f"seed must be an unsigned 64-bit integer, got {self.seed}")


@dataclass
class SimMetrics:
    total_slots: int = 0
    idle_slots: int = 0
    single_tx_slots: int = 0
    collision_slots: int = 0
    attempts: int = 0
    perceived_successes: int = 0
    false_alarm_truncations: int = 0
    collision_abort_lengths: Counter = field(default_factory=Counter)
    # idle slots spent completing DIFS (the rest are empty backoff slots)
    difs_slots: int = 0
    # busy periods opened by one transmitter / by several
    solo_starts: int = 0
    collision_starts: int = 0
    # slots of transmissions that started alone, until they ended
    solo_start_slots: int = 0
    # single-transmitter slots that follow a collision (the surviving user)
    survivor_slots: int = 0

    @property
    def throughput_estimate(self) -> float:
        return self.single_tx_slots / self.total_slots if self.total_slots else 0.0

    @property
    def collisions(self) -> int:
        return sum(self.collision_abort_lengths.values())

    def event_fractions(self) -> tuple[float, float, float]:
        """Empirical (empty, single-start, collision-start) fractions of backoff slots."""
        empty = self.idle_slots - self.difs_slots
        n = empty + self.solo_starts + self.collision_starts
        if n == 0:
            return 0.0, 0.0, 0.0
        return empty / n, self.solo_starts / n, self.collision_starts / n

    def mean_success_length(self) -> float:
        if not self.solo_starts:
            raise UndefinedQuantityError("no collision-free transmissions recorded")
        return self.solo_start_slots / self.solo_starts

    def to_dict(self) -> dict:
        return {
            "total_slots": self.total_slots,
            "idle_slots": self.idle_slots,
            "single_tx_slots": self.single_tx_slots,
            "collision_slots": self.collision_slots,
            "attempts": self.attempts,
            "perceived_successes": self.perceived_successes,
            "false_alarm_truncations": self.false_alarm_truncations,
            "collision_abort_lengths": {str(k): v for k, v in sorted(self.collision_abort_lengths.items())},
            "difs_slots": self.difs_slots,
            "solo_starts": self.solo_starts,
            "collision_starts": self.collision_starts,
            "solo_start_slots": self.solo_start_slots,
            "survivor_slots": self.survivor_slots,
            "throughput_estimate": self.throughput_estimate,
        }


@dataclass(frozen=True)
class SlotOutcome:
    slots: int
    transmitters: int

    @property
    def kind(self) -> str:
        if self.transmitters == 0:
            return "idle"
        return "single" if self.transmitters == 1 else "collision"


class Simulation:
    """Mutable simulation state; drive it with :meth:`step` or :meth:`advance`."""

    def __init__(self, config: SimConfig):
        self.config = config
        p = config.params
        self.params = p
        self._fd = p.mode is Mode.FULL_DUPLEX
        M = p.m_users
        self._rngs = [
            np.random.Generator(np.random.PCG64(np.random.SeedSequence(config.seed, spawn_key=(i,))))
            for i in range(M)
        ]
        self.difs = np.zeros(M, dtype=np.int64)
        self.stage = np.zeros(M, dtype=np.int64)
        self.backoff = np.array([self._draw_backoff(i) for i in range(M)], dtype=np.int64)
        self.tx_elapsed = np.zeros(M, dtype=np.int64)
        self.fa_left = np.full(M, _NEVER, dtype=np.int64)
        self.collided = np.zeros(M, dtype=bool)
        self.tx: list[int] = []
        self.metrics = SimMetrics()
        self.slot = 0
        self._span = 0  # length of the collision in progress
        self._solo_busy = False  # current busy period was opened by a lone transmitter
        self._after_collision = False
        self._since_attempt = 0

    # -- inspection -------------------------------------------------------

    def user(self, i: int) -> UserState:
        if i in self.tx:
            phase = Phase.TRANSMITTING
        elif self.difs[i] < self.params.difs:
            phase = Phase.WAITING_DIFS
        else:
            phase = Phase.BACKOFF
        return UserState(
            phase=phase,
            difs_progress=int(self.difs[i]),
            backoff_residual=int(self.backoff[i]),
            stage=int(self.stage[i]),
            tx_elapsed=int(self.tx_elapsed[i]),
        )

    @property
    def users(self) -> list[UserState]:
        return [self.user(i) for i in range(self.params.m_users)]

    def reset_metrics(self) -> None:
        self.metrics = SimMetrics()
        self._since_attempt = 0

    # -- random draws -----------------------------------------------------

    def _draw_backoff(self, i: int) -> int:
        return int(self._rngs[i].integers(cw_of_stage(int(self.stage[i]), self.params)))

    def _draw_false_alarm(self, i: int) -> int:
        pf = self.params.p_false_alarm
        if not self._fd or pf == 0.0:
            return _NEVER
        return int(self._rngs[i].geometric(pf))

    # -- transitions ------------------------------------------------------

    def _leave(self, i: int, success: bool) -> None:
        p = self.params
        if success:
            self.stage[i] = 0
            self.metrics.perceived_successes += 1
        else:
            self.stage[i] = min(int(self.stage[i]) + 1, p.w_max)
        assert 0 <= self.stage[i] <= p.w_max
        self.backoff[i] = self._draw_backoff(i)
        self.difs[i] = 0
        self.tx_elapsed[i] = 0
        self.fa_left[i] = _NEVER
        self.collided[i] = False

    def _start(self, starters: np.ndarray) -> None:
        m = self.metrics
        collided = len(starters) > 1
        for i in starters.tolist():
            self.tx.append(i)
            self.tx_elapsed[i] = 0
            self.fa_left[i] = self._draw_false_alarm(i)
            self.collided[i] = collided
        m.attempts += len(starters)
        if collided:
            m.collision_starts += 1
        else:
            m.solo_starts += 1
        self._solo_busy = not collided
        self._after_collision = False
        self._since_attempt = 0

    def _idle(self, limit: int) -> SlotOutcome:
        D = self.params.difs
        need = (D - self.difs) + self.backoff
        k = min(int(need.min()), limit)
        m = self.metrics
        m.difs_slots += min(k, D - int(self.difs.min()))
        room = np.minimum(k, D - self.difs)
        self.difs += room
        self.backoff -= k - room
        m.idle_slots += k
        m.total_slots += k
        self.slot += k
        self._since_attempt += k
        if self._since_attempt >= STALL_SLOTS:
            raise StallError(f"no transmission attempt for {self._since_attempt} slots")
        starters = np.flatnonzero((self.difs == D) & (self.backoff == 0))
        if len(starters):
            self._start(starters)
        return SlotOutcome(slots=k, transmitters=0)

    def _busy(self, limit: int) -> SlotOutcome:
        p = self.params
        L = p.packet_len
        m = self.metrics
        tx = self.tx
        n = len(tx)
        self.difs[:] = 0
        if n == 1:
            i = tx[0]
            k = min(L - int(self.tx_elapsed[i]), int(self.fa_left[i]), limit)
            self.tx_elapsed[i] += k
            self.fa_left[i] -= k
            m.single_tx_slots += k
            if self._solo_busy:
                m.solo_start_slots += k
            if self._after_collision:
                m.survivor_slots += k
            if self.fa_left[i] == 0:
                m.false_alarm_truncations += 1
                self._end(i, success=False)
            elif self.tx_elapsed[i] == L:
                self._end(i, success=not (not self._fd and self.collided[i]))
        elif not self._fd:
            # blind colliders started together and run the whole packet
            k = min(L - int(self.tx_elapsed[tx[0]]), limit)
            self.tx_elapsed[tx] += k
            m.collision_slots += k
            self._span += k
            if self.tx_elapsed[tx[0]] == L:
                for i in list(tx):
                    self._end(i, success=False)
        else:
            k = 1
            m.collision_slots += 1
            self._span += 1
            self.tx_elapsed[tx] += 1
            if n == 2:
                detected = [self._rngs[i].random() >= p.p_miss for i in tx]
            else:
                detected = [True] * n
            for i, hit in zip(list(tx), detected):
                if hit:
                    self._end(i, success=False)
                elif self.tx_elapsed[i] == L:
                    self._end(i, success=True)
        m.total_slots += k
        self.slot += k
        if self._span and len(self.tx) < 2:
            m.collision_abort_lengths[self._span] += 1
            self._span = 0
            self._after_collision = True
        return SlotOutcome(slots=k, transmitters=n)

    def _end(self, i: int, success: bool) -> None:
        self.tx.remove(i)
        self._leave(i, success)

    # -- driving ----------------------------------------------------------

    def step(self) -> SlotOutcome:
        """Advance exactly one slot."""
        return self._busy(1) if self.tx else self._idle(1)

    def advance(self, limit: int = _NEVER) -> SlotOutcome:
        """Advance to the next event (start, end or collision slot), at most ``limit`` slots."""
        return self._busy(limit) if self.tx else self._idle(limit)


def new_simulation(config: SimConfig) -> Simulation:
    return Simulation(config)


def run(config: SimConfig) -> SimMetrics:
    """Warm up, reset the counters, then measure until ``measure_attempts`` starts.

    Measurement ends on the first idle slot boundary after the target is
    reached, so the window holds whole busy periods only.
    """
    sim = Simulation(config)
    while sim.metrics.attempts < config.warmup_attempts:
        sim.advance()
    while sim.tx:
        sim.advance()
    sim.reset_metrics()
    while sim.metrics.attempts < config.measure_attempts:
        sim.advance()
    while sim.tx:
        sim.advance()
    return sim.metrics


def empirical_collision_length(metrics: SimMetrics) -> float:
    """Mean duration of recorded collisions, in slots."""
    hist = metrics.collision_abort_lengths
    n = sum(hist.values())
    if n == 0:
        raise UndefinedQuantityError("no collisions recorded")
    return sum(length * count for length, count in hist.items()) / n
