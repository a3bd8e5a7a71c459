"""Data models for the ambulance dispatch simulation and training harness."""

import math
from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from typing import Deque, List, Optional

import numpy as np


@dataclass(frozen=True)
class Point:
    """Location in world coordinates (km)."""

    x: float
    y: float

    def distance_to(self, other: "Point") -> float:
        return math.hypot(self.x - other.x, self.y - other.y)

    def interpolate(self, other: "Point", fraction: float) -> "Point":
        """Point a given fraction of the way along the straight line to other."""
        return Point(self.x + (other.x - self.x) * fraction,
                     self.y + (other.y - self.y) * fraction)


class AmbulanceStatus(Enum):
    AT_DISPATCH_POINT = "at_dispatch_point"
    TRAVELLING_TO_DISPATCH_POINT = "travelling_to_dispatch_point"
    TRAVELLING_TO_INCIDENT = "travelling_to_incident"
    CONVEYING_TO_HOSPITAL = "conveying_to_hospital"
    AT_HOSPITAL = "at_hospital"  # conveyance done, queued behind another allocation
    AWAITING_ALLOCATION = "awaiting_allocation"


@dataclass
class Ambulance:
    """A single ambulance and its current journey."""

    id: int
    status: AmbulanceStatus
    position: Point
    assigned_dispatch_point: Optional[int] = None
    assigned_incident: Optional[int] = None
    origin: Optional[Point] = None
    destination: Optional[Point] = None
    travel_elapsed_min: int = 0

    @property
    def is_travelling(self) -> bool:
        return self.destination is not None

    def start_journey(self, destination: Point):
        """Begin straight-line travel from the current position."""
        self.origin = self.position
        self.destination = destination
        self.travel_elapsed_min = 0

    def advance(self, km_per_min: float) -> bool:
        """Move one minute along the current journey.

        Returns:
            True if the destination was reached during this minute
        """
        if self.destination is None:
            return False

        self.travel_elapsed_min += 1
        distance = self.origin.distance_to(self.destination)
        travelled = self.travel_elapsed_min * km_per_min

        if travelled >= distance - 1e-9:
            self.position = self.destination
            self.origin = None
            self.destination = None
            self.travel_elapsed_min = 0
            return True

        self.position = self.origin.interpolate(self.destination, travelled / distance)
        return False


@dataclass
class Incident:
    """An emergency call and its response times (simulation minutes)."""

    id: int
    call_time_min: float
    location: Point
    assigned_ambulance: Optional[int] = None
    assign_time_min: Optional[float] = None
    arrival_time_min: Optional[float] = None
    hospital_time_min: Optional[float] = None

    def __post_init__(self):
        if self.call_time_min < 0:
            raise ValueError("call_time_min cannot be negative")

    @property
    def call_to_arrival(self) -> Optional[float]:
        if self.arrival_time_min is None:
            return None
        return self.arrival_time_min - self.call_time_min

    @property
    def assign_to_arrival(self) -> Optional[float]:
        if self.arrival_time_min is None or self.assign_time_min is None:
            return None
        return self.arrival_time_min - self.assign_time_min


@dataclass
class Observation:
    """Agent-facing feature vector.

    Layout: ambulances allocated per dispatch point, awaiting ambulance x and y
    (km), time of day as a fraction in [0, 1).
    """

    features: np.ndarray

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        if self.features.ndim != 1 or len(self.features) < 4:
            raise ValueError("Observation features must be a vector of length n_dispatch_points + 3")

    @property
    def n_dispatch_points(self) -> int:
        return len(self.features) - 3

    @property
    def dispatch_counts(self) -> np.ndarray:
        return self.features[:-3]

    @property
    def awaiting_position(self) -> Point:
        return Point(float(self.features[-3]), float(self.features[-2]))

    @property
    def time_of_day(self) -> float:
        return float(self.features[-1])


@dataclass
class StepInfo:
    """Running episode counters returned with every step.

    The time lists are the environment's own lists and keep growing as the
    episode continues; copy them if a snapshot is needed.
    """

    call_to_arrival_times: List[float]
    assignment_to_arrival_times: List[float]
    total_calls: int
    fraction_demand_met: float


@dataclass
class StepResult:
    """Result of one environment step."""

    observation: Observation
    reward: float
    terminal: bool
    info: StepInfo
    truncated: bool = False

    def as_tuple(self):
        """Gym-style (observation, reward, terminal, info) tuple."""
        return self.observation.features, self.reward, self.terminal, self.info


@dataclass
class SimState:
    """Live discrete-event simulation state."""

    clock_min: int
    ambulances: List[Ambulance]
    dispatch_points: List[Point]
    hospitals: List[Point]
    incident_centres: List[List[Point]]
    rng: np.random.Generator
    pending_incidents: Deque[Incident] = field(default_factory=deque)
    completed_incidents: List[Incident] = field(default_factory=list)
    active_incidents: dict = field(default_factory=dict)  # id -> Incident, assigned but not conveyed

    def status_counts(self) -> dict:
        counts = {status: 0 for status in AmbulanceStatus}
        for ambulance in self.ambulances:
            counts[ambulance.status] += 1
        return counts


@dataclass
class Transition:
    """One agent step stored in replay memory."""

    observation: np.ndarray
    action: int
    reward: float
    next_observation: np.ndarray
    terminal: bool
    truncated: bool = False

    @property
    def done(self) -> bool:
        """True only for real terminals; time-limit truncation bootstraps."""
        return self.terminal and not self.truncated


@dataclass
class TransitionBatch:
    """Column-wise batch of transitions sampled from memory."""

    observations: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_observations: np.ndarray
    terminals: np.ndarray
    truncateds: np.ndarray

    def __len__(self) -> int:
        return len(self.actions)

    @property
    def dones(self) -> np.ndarray:
        return self.terminals & ~self.truncateds

    def transitions(self) -> List[Transition]:
        return [
            Transition(self.observations[i], int(self.actions[i]), float(self.rewards[i]),
                       self.next_observations[i], bool(self.terminals[i]),
                       bool(self.truncateds[i]))
            for i in range(len(self))
        ]


@dataclass
class RunRecord:
    """Summary of one training episode or evaluation run."""

    episode: int
    total_reward: float
    mean_call_to_arrival: float
    mean_assign_to_arrival: float
    total_calls: int
    fraction_met: float
    epsilon: float = 1.0
    wall_clock_s: float = 0.0
    mean_agreement: Optional[float] = None

    def __post_init__(self):
        """Validate the record after initialization."""
        if not 0.0 <= self.fraction_met <= 1.0:
            raise ValueError("fraction_met must be in [0, 1]")

        if self.mean_call_to_arrival < 0 or self.mean_assign_to_arrival < 0:
            raise ValueError("mean response times cannot be negative")

    def as_history_row(self) -> dict:
        return {
            "episode": self.episode,
            "total_reward": self.total_reward,
            "mean_call_to_arrival": self.mean_call_to_arrival,
            "mean_assign_to_arrival": self.mean_assign_to_arrival,
            "total_calls": self.total_calls,
            "fraction_met": self.fraction_met,
            "epsilon": self.epsilon,
            "wall_clock_s": self.wall_clock_s,
        }

    def as_eval_row(self) -> dict:
        row = self.as_history_row()
        del row["epsilon"]
        return row


@dataclass
class BoxSummary:
    """Box-plot statistics of a sample."""

    minimum: float
    q1: float
    median: float
    q3: float
    maximum: float
    mean: float

    @classmethod
    def from_values(cls, values) -> "BoxSummary":
        values = np.asarray(values, dtype=np.float64)
        if values.size == 0:
            raise ValueError("Cannot summarise an empty sample")
        q1, median, q3 = np.percentile(values, [25, 50, 75])
        return cls(
            minimum=float(values.min()),
            q1=float(q1),
            median=float(median),
            q3=float(q3),
            maximum=float(values.max()),
            mean=float(values.mean()),
        )

    def as_dict(self) -> dict:
        return {
            "min": self.minimum,
            "q1": self.q1,
            "median": self.median,
            "q3": self.q3,
            "max": self.maximum,
            "mean": self.mean,
        }
