"""Minute-resolution ambulance dispatch simulation with a reset/step/render interface."""

import logging
import math
from collections import deque
from typing import List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from .config import SimConfig
from .constants import INCIDENT_LOG_COLUMNS, MINUTES_PER_DAY
from .models import (
    Ambulance,
    AmbulanceStatus,
    Incident,
    Observation,
    Point,
    SimState,
    StepInfo,
    StepResult,
)


class InvalidActionError(ValueError):
    """Raised when an action is not a valid dispatch point index."""


class SimulationError(RuntimeError):
    """Raised when the simulation is driven out of protocol."""


def grid_dispatch_points(world_size_km: float, n_points: int) -> List[Point]:
    """Lay dispatch points on an even square grid with a half-spacing margin."""
    side = math.isqrt(n_points)
    if side * side != n_points:
        raise ValueError(f"Grid layout needs a perfect square, got {n_points}")
    spacing = world_size_km / side
    return [
        Point((i + 0.5) * spacing, (j + 0.5) * spacing)
        for i in range(side)
        for j in range(side)
    ]


def sample_next_incident(rng: np.random.Generator, rate_per_min: float) -> float:
    """Draw an exponential inter-arrival time in minutes."""
    if rate_per_min <= 0:
        raise ValueError("rate_per_min must be positive")
    while True:
        gap = float(rng.exponential(1.0 / rate_per_min))
        if gap > 0.0:
            return gap


def incident_location(rng: np.random.Generator, centre: Point, jitter_km: float,
                      world_size_km: float) -> Point:
    """Jitter an incident centre uniformly on each axis, clamped to the world."""
    if jitter_km == 0:
        return centre
    dx, dy = rng.uniform(-jitter_km, jitter_km, size=2)
    return Point(
        min(max(centre.x + float(dx), 0.0), world_size_km),
        min(max(centre.y + float(dy), 0.0), world_size_km),
    )


def active_epoch(clock_min: float, n_epochs_per_day: int) -> int:
    """Index of the incident pattern active at the given clock time."""
    if clock_min < 0:
        raise ValueError("clock_min cannot be negative")
    epoch = math.floor((clock_min % MINUTES_PER_DAY) * n_epochs_per_day / MINUTES_PER_DAY)
    return min(epoch, n_epochs_per_day - 1)


class AmbulanceEnv:
    """Ambulance location environment.

    The world layout (dispatch points, hospitals, incident centres) is drawn
    once from ``SimConfig.RANDOM_SEED`` and reused by every ``reset``. Each
    ``step`` allocates the awaiting ambulance to a dispatch point and runs the
    simulation minute by minute until another ambulance finishes conveying a
    patient to hospital, or the episode time limit is reached.
    """

    def __init__(self, config: SimConfig):
        """Initialize the environment layout.

        Args:
            config: Simulation configuration
        """
        self.config = config
        self.logger = logging.getLogger(__name__)

        layout_rng = np.random.default_rng(config.RANDOM_SEED)
        world = config.WORLD_SIZE_KM

        if config.DISPATCH_LAYOUT == "grid":
            self.dispatch_points = grid_dispatch_points(world, config.N_DISPATCH_POINTS)
        else:
            self.dispatch_points = self._random_points(layout_rng, config.N_DISPATCH_POINTS)

        if config.N_HOSPITALS == 1:
            self.hospitals = [Point(world / 2, world / 2)]
        else:
            self.hospitals = self._random_points(layout_rng, config.N_HOSPITALS)

        self.incident_centres = [
            self._random_points(layout_rng, config.N_INCIDENT_AREAS)
            for _ in range(config.N_EPOCHS_PER_DAY)
        ]

        self.state: Optional[SimState] = None
        self._allocation_queue: deque = deque()
        self._awaiting_id: Optional[int] = None
        self._last_allocated_id: Optional[int] = None
        self._scripted: Optional[deque] = None
        self._next_call_time = math.inf
        self._incident_seq = 0
        self._total_calls = 0
        self._call_to_arrival: List[float] = []
        self._assign_to_arrival: List[float] = []
        self._reset_count = 0

        self.logger.debug(
            f"[Env] Initialised {config.N_DISPATCH_POINTS} dispatch points, "
            f"{config.N_HOSPITALS} hospital(s), {config.N_EPOCHS_PER_DAY} x "
            f"{config.N_INCIDENT_AREAS} incident centres"
        )

    def _random_points(self, rng: np.random.Generator, n: int) -> List[Point]:
        coords = rng.uniform(0.0, self.config.WORLD_SIZE_KM, size=(n, 2))
        return [Point(float(x), float(y)) for x, y in coords]

    @property
    def n_actions(self) -> int:
        return self.config.N_DISPATCH_POINTS

    @property
    def observation_size(self) -> int:
        return self.config.observation_size

    @property
    def awaiting_ambulance(self) -> Optional[Ambulance]:
        if self.state is None or self._awaiting_id is None:
            return None
        return self.state.ambulances[self._awaiting_id]

    def reset(self, seed: Optional[int] = None,
              scripted_incidents: Optional[Sequence[Tuple[float, float, float]]] = None) -> Observation:
        """Start a new run and return the first observation.

        Args:
            seed: Run seed for ambulance placement and the incident stream.
                A fresh seed is derived from the configuration seed if omitted.
            scripted_incidents: Optional (call_time, x, y) tuples replacing the
                sampled incident stream

        Returns:
            Observation with one ambulance awaiting allocation
        """
        if seed is None:
            seed = int(np.random.SeedSequence(
                [self.config.RANDOM_SEED, self._reset_count]).generate_state(1)[0])
        self._reset_count += 1
        rng = np.random.default_rng(seed)

        ambulances = []
        for ambulance_id in range(self.config.N_AMBULANCES):
            dp = int(rng.integers(self.config.N_DISPATCH_POINTS))
            ambulances.append(Ambulance(
                id=ambulance_id,
                status=AmbulanceStatus.AT_DISPATCH_POINT,
                position=self.dispatch_points[dp],
                assigned_dispatch_point=dp,
            ))

        awaiting = ambulances[int(rng.integers(len(ambulances)))]
        awaiting.status = AmbulanceStatus.AWAITING_ALLOCATION
        awaiting.assigned_dispatch_point = None

        self.state = SimState(
            clock_min=0,
            ambulances=ambulances,
            dispatch_points=self.dispatch_points,
            hospitals=self.hospitals,
            incident_centres=self.incident_centres,
            rng=rng,
        )
        self._allocation_queue = deque()
        self._awaiting_id = awaiting.id
        self._last_allocated_id = awaiting.id
        self._incident_seq = 0
        self._total_calls = 0
        self._call_to_arrival = []
        self._assign_to_arrival = []

        if scripted_incidents is not None:
            self._scripted = deque(self._validate_script(scripted_incidents))
            self._next_call_time = self._scripted[0][0] if self._scripted else math.inf
        else:
            self._scripted = None
            self._next_call_time = sample_next_incident(rng, self.config.incident_rate_per_min)

        self.logger.debug(f"[Env] Reset with seed {seed}")
        return self._observation()

    def _validate_script(self, script) -> List[Tuple[float, Point]]:
        world = self.config.WORLD_SIZE_KM
        events = []
        for call_time, x, y in script:
            if call_time < 0:
                raise ValueError(f"Scripted call time cannot be negative: {call_time}")
            if not (0 <= x <= world and 0 <= y <= world):
                raise ValueError(f"Scripted incident outside world: ({x}, {y})")
            events.append((float(call_time), Point(float(x), float(y))))
        return sorted(events, key=lambda e: e[0])

    def step(self, action: int) -> StepResult:
        """Allocate the awaiting ambulance and advance the simulation.

        Args:
            action: Index of the dispatch point for the awaiting ambulance

        Returns:
            StepResult for the next ambulance needing allocation or the episode end
        """
        if self.awaiting_ambulance is None:
            raise SimulationError("No ambulance is awaiting allocation; call reset() first")

        end = self.config.episode_minutes
        if self.state.clock_min >= end:
            raise SimulationError("Episode has ended; call reset() to start a new run")

        if isinstance(action, (bool, np.bool_)) or not isinstance(action, (int, np.integer)):
            raise InvalidActionError(f"Action must be an integer dispatch point index, got {action!r}")
        if not 0 <= action < self.n_actions:
            raise InvalidActionError(f"Action {action} out of range [0, {self.n_actions})")

        ambulance = self.awaiting_ambulance
        ambulance.assigned_dispatch_point = int(action)
        ambulance.status = AmbulanceStatus.TRAVELLING_TO_DISPATCH_POINT
        ambulance.start_journey(self.dispatch_points[int(action)])
        self._awaiting_id = None
        self._last_allocated_id = ambulance.id

        while self.state.clock_min < end:
            self._tick()
            if self._allocation_queue:
                break

        reward = 0.0
        if self._allocation_queue:
            ambulance_id, incident = self._allocation_queue.popleft()
            self.state.ambulances[ambulance_id].status = AmbulanceStatus.AWAITING_ALLOCATION
            self._awaiting_id = ambulance_id
            reward = -(incident.call_to_arrival ** 2)

        terminal = self.state.clock_min >= end
        return StepResult(
            observation=self._observation(),
            reward=reward,
            terminal=terminal,
            info=self._info(),
            truncated=terminal,
        )

    def _tick(self):
        """Advance one minute: move, complete journeys, new calls, FIFO assignment."""
        state = self.state
        state.clock_min += 1
        now = state.clock_min

        speed = self.config.speed_km_per_min
        arrived = [a for a in state.ambulances if a.is_travelling and a.advance(speed)]
        for ambulance in arrived:
            self._complete_journey(ambulance, now)

        self._generate_incidents(now)
        self._assign_incidents(now)

    def _complete_journey(self, ambulance: Ambulance, now: int):
        state = self.state

        if ambulance.status is AmbulanceStatus.TRAVELLING_TO_DISPATCH_POINT:
            ambulance.status = AmbulanceStatus.AT_DISPATCH_POINT

        elif ambulance.status is AmbulanceStatus.TRAVELLING_TO_INCIDENT:
            incident = state.active_incidents[ambulance.assigned_incident]
            incident.arrival_time_min = float(now)
            self._call_to_arrival.append(incident.call_to_arrival)
            self._assign_to_arrival.append(incident.assign_to_arrival)

            # Pickup is instantaneous; convey to the closest hospital
            ambulance.status = AmbulanceStatus.CONVEYING_TO_HOSPITAL
            ambulance.start_journey(self._closest_hospital(incident.location))

        elif ambulance.status is AmbulanceStatus.CONVEYING_TO_HOSPITAL:
            incident = state.active_incidents.pop(ambulance.assigned_incident)
            incident.hospital_time_min = float(now)
            state.completed_incidents.append(incident)
            ambulance.assigned_incident = None
            ambulance.status = AmbulanceStatus.AT_HOSPITAL
            self._allocation_queue.append((ambulance.id, incident))

    def _closest_hospital(self, location: Point) -> Point:
        return min(self.hospitals, key=location.distance_to)

    def _generate_incidents(self, now: int):
        state = self.state
        while self._next_call_time <= now:
            call_time = self._next_call_time

            if self._scripted is not None:
                _, location = self._scripted.popleft()
                self._next_call_time = self._scripted[0][0] if self._scripted else math.inf
            else:
                centres = self.incident_centres[active_epoch(call_time, self.config.N_EPOCHS_PER_DAY)]
                centre = centres[int(state.rng.integers(len(centres)))]
                location = incident_location(state.rng, centre, self.config.INCIDENT_JITTER_KM,
                                             self.config.WORLD_SIZE_KM)
                self._next_call_time = call_time + sample_next_incident(
                    state.rng, self.config.incident_rate_per_min)

            state.pending_incidents.append(Incident(
                id=self._incident_seq, call_time_min=call_time, location=location))
            self._incident_seq += 1
            self._total_calls += 1

    def _assign_incidents(self, now: int):
        """Give the closest free ambulance to the oldest unassigned incident, repeatedly."""
        state = self.state
        while state.pending_incidents:
            free = [a for a in state.ambulances if self._is_free(a)]
            if not free:
                break

            incident = state.pending_incidents.popleft()
            ambulance = min(free, key=lambda a: (a.position.distance_to(incident.location), a.id))

            ambulance.status = AmbulanceStatus.TRAVELLING_TO_INCIDENT
            ambulance.assigned_dispatch_point = None
            ambulance.assigned_incident = incident.id
            ambulance.start_journey(incident.location)

            incident.assigned_ambulance = ambulance.id
            incident.assign_time_min = float(now)
            state.active_incidents[incident.id] = incident

            self.logger.debug(
                f"[Env] t={now} incident {incident.id} -> ambulance {ambulance.id}"
            )

    def _is_free(self, ambulance: Ambulance) -> bool:
        if ambulance.status is AmbulanceStatus.AT_DISPATCH_POINT:
            return True
        return (self.config.ALLOCATE_WHILE_TRAVELLING
                and ambulance.status is AmbulanceStatus.TRAVELLING_TO_DISPATCH_POINT)

    def _observation(self) -> Observation:
        state = self.state
        counts = np.zeros(self.config.N_DISPATCH_POINTS, dtype=np.float64)
        for ambulance in state.ambulances:
            if ambulance.assigned_dispatch_point is not None:
                counts[ambulance.assigned_dispatch_point] += 1

        reference_id = self._awaiting_id if self._awaiting_id is not None else self._last_allocated_id
        position = state.ambulances[reference_id].position
        time_of_day = (state.clock_min % MINUTES_PER_DAY) / MINUTES_PER_DAY

        features = np.concatenate([counts, [position.x, position.y, time_of_day]])
        return Observation(features)

    def _info(self) -> StepInfo:
        arrivals = len(self._call_to_arrival)
        fraction = arrivals / self._total_calls if self._total_calls else 0.0
        return StepInfo(
            call_to_arrival_times=self._call_to_arrival,
            assignment_to_arrival_times=self._assign_to_arrival,
            total_calls=self._total_calls,
            fraction_demand_met=fraction,
        )

    def render(self) -> str:
        """Textual snapshot of the current simulation state."""
        if self.state is None:
            return "Environment not reset"

        state = self.state
        clock = state.clock_min
        day, minute_of_day = divmod(clock, MINUTES_PER_DAY)
        lines = [
            f"Clock: {clock} min (day {day + 1}, {minute_of_day // 60:02d}:{minute_of_day % 60:02d})",
            f"pending: {len(state.pending_incidents)}",
            f"calls: {self._total_calls} | arrivals: {len(self._call_to_arrival)}",
            "Ambulances:",
        ]
        for ambulance in state.ambulances:
            dp = "-" if ambulance.assigned_dispatch_point is None else ambulance.assigned_dispatch_point
            incident = "-" if ambulance.assigned_incident is None else ambulance.assigned_incident
            lines.append(
                f"  #{ambulance.id:<3} {ambulance.status.value:<30} "
                f"({ambulance.position.x:6.2f}, {ambulance.position.y:6.2f}) "
                f"dp={dp} incident={incident}"
            )
        return "\n".join(lines)

    def incident_log(self) -> pd.DataFrame:
        """One row per incident conveyed to hospital in the current run."""
        completed = self.state.completed_incidents if self.state else []
        rows = [
            {
                "incident_id": i.id,
                "call_time": i.call_time_min,
                "assign_time": i.assign_time_min,
                "arrival_time": i.arrival_time_min,
                "incident_x": i.location.x,
                "incident_y": i.location.y,
                "ambulance_id": i.assigned_ambulance,
            }
            for i in completed
        ]
        return pd.DataFrame(rows, columns=INCIDENT_LOG_COLUMNS)

    def write_incident_log(self, path: str):
        self.incident_log().to_csv(path, index=False)
        self.logger.info(f"[Env] Incident log written: {path}")
