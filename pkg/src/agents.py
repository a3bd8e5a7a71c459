"""Dispatch policies: random assignment and the Deep Q-network family.

Double Q targets are always used. The variant name switches on any of a
dueling head, noisy layers, prioritized replay and a five-member bagging
ensemble (see ``AgentConfig._VARIANT_MAP``).
"""

import json
import logging
import math
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import List, Optional, Union

import numpy as np

from .config import AgentConfig, SimConfig, config_hash
from .constants import CHECKPOINT_FORMAT_VERSION, MANIFEST_FILE
from .models import Observation, TransitionBatch
from .neural import (
    AdamOptimizer,
    NoiseMode,
    QNetwork,
    copy_parameters,
    load_network,
    save_network,
)
from .replay import BootstrapSampler, PrioritizedReplayMemory, ReplayMemory


class CheckpointError(ValueError):
    """Raised when a checkpoint cannot be loaded for the given environment."""


class Mode(Enum):
    TRAIN = "train"
    GREEDY = "greedy"


@dataclass
class ExplorationSchedule:
    """Per-episode exploration schedule.

    Warmup episodes act uniformly at random (reported as epsilon = 1). After
    warmup, epsilon-greedy variants decay epsilon geometrically to a floor;
    noisy and bagging variants explore through their networks (epsilon = 0).
    """

    warmup_episodes: int = 0
    epsilon_start: float = 1.0
    epsilon_decay: float = 0.97
    epsilon_min: float = 0.02
    uses_epsilon: bool = True

    def __post_init__(self):
        if self.warmup_episodes < 0:
            raise ValueError("warmup_episodes cannot be negative")
        if not 0.0 <= self.epsilon_min <= self.epsilon_start <= 1.0:
            raise ValueError("epsilon values must satisfy 0 <= min <= start <= 1")
        if not 0.0 < self.epsilon_decay <= 1.0:
            raise ValueError("epsilon_decay must be in (0, 1]")

    @classmethod
    def from_config(cls, config: AgentConfig, warmup_episodes: int = 0) -> "ExplorationSchedule":
        return cls(
            warmup_episodes=warmup_episodes,
            epsilon_start=config.EPSILON_START,
            epsilon_decay=config.EPSILON_DECAY,
            epsilon_min=config.EPSILON_MIN,
            uses_epsilon=config.uses_epsilon,
        )

    def is_warmup(self, episode: int) -> bool:
        return episode <= self.warmup_episodes

    def epsilon(self, episode: int) -> float:
        """Epsilon for a 1-indexed episode."""
        if self.is_warmup(episode):
            return 1.0
        if not self.uses_epsilon:
            return 0.0
        k = episode - self.warmup_episodes
        return max(self.epsilon_min, self.epsilon_start * self.epsilon_decay ** k)

    def episodes_to_floor(self) -> int:
        """Post-warmup episodes until epsilon reaches its floor."""
        if self.epsilon_start <= self.epsilon_min:
            return 0
        if self.epsilon_min == 0.0 or self.epsilon_decay == 1.0:
            raise ValueError("epsilon never reaches a zero floor or with no decay")
        return math.ceil(math.log(self.epsilon_min / self.epsilon_start) / math.log(self.epsilon_decay))


class ObservationScaler:
    """Counts / n_ambulances, coordinates / world size; time of day unchanged."""

    def __init__(self, n_dispatch_points: int, n_ambulances: int, world_size_km: float):
        self.n_ambulances = n_ambulances
        self.world_size_km = world_size_km
        self.scale = np.concatenate([
            np.full(n_dispatch_points, float(n_ambulances)),
            [float(world_size_km), float(world_size_km), 1.0],
        ])

    def __call__(self, features: np.ndarray) -> np.ndarray:
        return np.asarray(features, dtype=np.float64) / self.scale


def majority_vote(actions) -> int:
    """Modal action; ties go to the lowest action index."""
    return int(np.argmax(np.bincount(np.asarray(actions, dtype=np.int64))))


def _features(observation: Union[Observation, np.ndarray]) -> np.ndarray:
    if isinstance(observation, Observation):
        return observation.features
    return np.asarray(observation, dtype=np.float64)


@dataclass
class LearnDiagnostics:
    loss: float = 0.0
    mean_abs_td_error: float = 0.0
    skipped: bool = False
    updates: int = 0


@dataclass
class EnsembleMember:
    policy: QNetwork
    target: QNetwork
    optimizer: AdamOptimizer
    rng: np.random.Generator
    sampler: Optional[BootstrapSampler] = None


class BaseAgent:
    """Shared bookkeeping: exploration state, best-model tracking, checkpoints."""

    def __init__(self, config: AgentConfig, n_dispatch_points: int, n_ambulances: int,
                 world_size_km: float, seed: int = 0, warmup_episodes: int = 0):
        self.config = config
        self.n_actions = n_dispatch_points
        self.observation_size = n_dispatch_points + 3
        self.n_ambulances = n_ambulances
        self.world_size_km = world_size_km
        self.schedule = ExplorationSchedule.from_config(config, warmup_episodes)
        self.logger = logging.getLogger(__name__)
        self.rng = np.random.default_rng(seed)
        self.memory: Optional[ReplayMemory] = None
        self.members: List[EnsembleMember] = []

        self.epsilon = 1.0
        self.acting_randomly = False
        self.best_total_reward = -math.inf
        self.best_episode: Optional[int] = None
        self.last_agreement: Optional[float] = None
        self.config_hash = config_hash(config.to_flat_dict())

    @property
    def variant(self) -> str:
        return self.config.VARIANT

    def begin_episode(self, episode: int, n_episodes: int):
        """Set exploration state for a 1-indexed training episode."""
        self.acting_randomly = self.schedule.is_warmup(episode)
        self.epsilon = self.schedule.epsilon(episode)

    def reseed(self, seed: int):
        """Reset the action-selection random stream (used per evaluation run)."""
        self.rng = np.random.default_rng(seed)

    def select_action(self, observation, mode: Mode = Mode.TRAIN) -> int:
        raise NotImplementedError

    def learn_step(self) -> LearnDiagnostics:
        return LearnDiagnostics(skipped=True)

    def save_best(self, total_reward: float, path, episode: Optional[int] = None) -> bool:
        """Checkpoint all policy networks iff total_reward beats the best so far.

        Returns:
            True if a checkpoint was written
        """
        if not total_reward > self.best_total_reward:
            return False
        self.best_total_reward = float(total_reward)
        self.best_episode = episode
        self.save_checkpoint(path, episode)
        self.logger.info(
            f"[Agent] New best total reward {total_reward:,.0f} (episode {episode}) saved to {path}"
        )
        return True

    def save_checkpoint(self, path, episode: Optional[int] = None) -> Path:
        path = Path(path)
        path.mkdir(parents=True, exist_ok=True)

        for i, member in enumerate(self.members):
            save_network(member.policy, path / f"member_{i}.npz")

        manifest = {
            "format_version": CHECKPOINT_FORMAT_VERSION,
            "variant": self.variant,
            "agent_config": self.config.to_flat_dict(),
            "config_hash": self.config_hash,
            "best_total_reward": self.best_total_reward,
            "episode": episode,
            "n_members": len(self.members),
            "n_actions": self.n_actions,
            "observation_size": self.observation_size,
            "n_ambulances": self.n_ambulances,
            "world_size_km": self.world_size_km,
        }
        (path / MANIFEST_FILE).write_text(json.dumps(manifest, indent=2), encoding="utf-8")
        return path


class RandomAgent(BaseAgent):
    """Selects dispatch points uniformly at random."""

    def select_action(self, observation, mode: Mode = Mode.TRAIN) -> int:
        return int(self.rng.integers(self.n_actions))

    def begin_episode(self, episode: int, n_episodes: int):
        super().begin_episode(episode, n_episodes)
        self.epsilon = 1.0


class DQNAgent(BaseAgent):
    """Double Deep Q-network agent with optional dueling, noisy, prioritized and bagging features."""

    def __init__(self, config: AgentConfig, n_dispatch_points: int, n_ambulances: int,
                 world_size_km: float, seed: int = 0, warmup_episodes: int = 0):
        seed_seq = np.random.SeedSequence(seed)
        agent_seq, *member_seqs = seed_seq.spawn(1 + config.n_ensemble)
        super().__init__(config, n_dispatch_points, n_ambulances, world_size_km,
                         seed=_int_seed(agent_seq), warmup_episodes=warmup_episodes)

        self.scaler = ObservationScaler(n_dispatch_points, n_ambulances, world_size_km)
        self.beta = config.PRIORITY_BETA_START
        self.learn_steps = 0

        if config.prioritized:
            self.memory = PrioritizedReplayMemory(config.MEMORY_CAPACITY, config.PRIORITY_ALPHA,
                                                  config.PRIORITY_EPSILON)
        else:
            self.memory = ReplayMemory(config.MEMORY_CAPACITY)

        for member_seq in member_seqs:
            policy_seq, target_seq, sample_seq = member_seq.spawn(3)
            policy = self._build_network(_int_seed(policy_seq))
            target = self._build_network(_int_seed(target_seq))
            copy_parameters(policy, target)
            optimizer = AdamOptimizer(
                policy.parameters(),
                learning_rate=config.LEARNING_RATE,
                beta1=config.ADAM_BETA1,
                beta2=config.ADAM_BETA2,
                epsilon=config.ADAM_EPSILON,
                max_grad_norm=config.MAX_GRAD_NORM,
            )
            sample_seed = _int_seed(sample_seq)
            sampler = self.memory.bootstrap_sampler(sample_seed) if config.bagging else None
            self.members.append(EnsembleMember(
                policy=policy,
                target=target,
                optimizer=optimizer,
                rng=np.random.default_rng(sample_seed),
                sampler=sampler,
            ))

        self.logger.debug(
            f"[Agent] Built {config.VARIANT} with {len(self.members)} member(s), "
            f"hidden layers {config.HIDDEN_LAYERS}"
        )

    def _build_network(self, seed: int) -> QNetwork:
        return QNetwork(
            input_dim=self.observation_size,
            n_actions=self.n_actions,
            hidden_layers=self.config.HIDDEN_LAYERS,
            dueling=self.config.dueling,
            noisy=self.config.noisy,
            sigma_init=self.config.NOISY_SIGMA_INIT,
            seed=seed,
        )

    def begin_episode(self, episode: int, n_episodes: int):
        super().begin_episode(episode, n_episodes)
        if self.config.prioritized:
            warmup = self.schedule.warmup_episodes
            span = max(1, n_episodes - warmup - 1)
            fraction = min(max((episode - warmup - 1) / span, 0.0), 1.0)
            self.beta = self.config.PRIORITY_BETA_START + fraction * (
                self.config.PRIORITY_BETA_END - self.config.PRIORITY_BETA_START)

    def q_values(self, observation, noise_mode: NoiseMode = NoiseMode.ZERO) -> np.ndarray:
        """Q vectors of every member, shape (n_members, n_actions)."""
        x = self.scaler(_features(observation))
        return np.stack([m.policy.forward(x, noise_mode) for m in self.members])

    def select_action(self, observation, mode: Mode = Mode.TRAIN) -> int:
        if mode is Mode.TRAIN:
            if self.acting_randomly or (self.schedule.uses_epsilon and self.rng.random() < self.epsilon):
                self.last_agreement = None
                return int(self.rng.integers(self.n_actions))
            noise_mode = NoiseMode.RESAMPLE
        else:
            noise_mode = NoiseMode.ZERO

        votes = np.argmax(self.q_values(observation, noise_mode), axis=1)
        if len(votes) == 1:
            self.last_agreement = None
            return int(votes[0])

        if mode is Mode.TRAIN and self.config.ENSEMBLE_ACTION_MODE == "random_member":
            action = int(votes[self.rng.integers(len(votes))])
        else:
            action = majority_vote(votes)
        self.last_agreement = float(np.mean(votes == action))
        return action

    def compute_td_targets(self, batch: TransitionBatch, member: int = 0) -> np.ndarray:
        """Double-Q targets: the policy net picks the next action, the target net values it."""
        m = self.members[member]
        next_x = self.scaler(batch.next_observations)
        rows = np.arange(len(batch))

        best_actions = np.argmax(m.policy.forward(next_x, NoiseMode.FROZEN), axis=1)
        next_values = m.target.forward(next_x, NoiseMode.FROZEN)[rows, best_actions]

        rewards = batch.rewards / self.config.REWARD_SCALE
        return rewards + self.config.GAMMA * (~batch.dones) * next_values

    def _sample(self, member: EnsembleMember):
        size = self.config.BATCH_SIZE
        if self.config.prioritized:
            return self.memory.sample_prioritized(size, self.config.PRIORITY_ALPHA, self.beta, member.rng)
        if member.sampler is not None:
            return member.sampler.sample(size), None, None
        return self.memory.sample_uniform(size, member.rng), None, None

    def learn_step(self) -> LearnDiagnostics:
        """One optimiser step per ensemble member, then periodic target sync."""
        if len(self.memory) < self.config.BATCH_SIZE:
            return LearnDiagnostics(skipped=True)

        losses, td_magnitudes = [], []
        for index, member in enumerate(self.members):
            if self.config.noisy:
                member.policy.resample_noise()
                member.target.resample_noise()

            batch, ids, weights = self._sample(member)
            targets = self.compute_td_targets(batch, index)
            result = member.policy.backward(
                self.scaler(batch.observations), batch.actions, targets, weights, NoiseMode.FROZEN)
            member.optimizer.step(result.gradients)

            if self.config.prioritized:
                self.memory.update_priorities(ids, result.td_errors)

            losses.append(result.loss)
            td_magnitudes.append(float(np.mean(np.abs(result.td_errors))))

        self.learn_steps += 1
        if self.learn_steps % self.config.TARGET_SYNC_INTERVAL == 0:
            self.sync_target_networks()

        return LearnDiagnostics(
            loss=float(np.mean(losses)),
            mean_abs_td_error=float(np.mean(td_magnitudes)),
            skipped=False,
            updates=len(self.members),
        )

    def sync_target_networks(self):
        for member in self.members:
            copy_parameters(member.policy, member.target)
        self.logger.debug(f"[Agent] Target networks synced at learn step {self.learn_steps}")


def _int_seed(seed_seq: np.random.SeedSequence) -> int:
    return int(seed_seq.generate_state(1)[0])


def build_agent(config: AgentConfig, sim_config: SimConfig, seed: int = 0,
                warmup_episodes: int = 0) -> BaseAgent:
    """Create the agent for a variant sized to the simulation."""
    agent_cls = DQNAgent if config.learns else RandomAgent
    return agent_cls(
        config,
        n_dispatch_points=sim_config.N_DISPATCH_POINTS,
        n_ambulances=sim_config.N_AMBULANCES,
        world_size_km=sim_config.WORLD_SIZE_KM,
        seed=seed,
        warmup_episodes=warmup_episodes,
    )


def read_manifest(checkpoint_dir) -> dict:
    manifest_path = Path(checkpoint_dir) / MANIFEST_FILE
    if not manifest_path.exists():
        raise CheckpointError(f"Checkpoint manifest not found: {manifest_path}")
    try:
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise CheckpointError(f"Unreadable checkpoint manifest {manifest_path}: {e}")
    if manifest.get("format_version") != CHECKPOINT_FORMAT_VERSION:
        raise CheckpointError(f"Unsupported checkpoint version {manifest.get('format_version')}")
    return manifest


def load_agent(checkpoint_dir, sim_config: SimConfig, seed: int = 0) -> BaseAgent:
    """Rebuild an agent from a checkpoint directory for evaluation."""
    checkpoint_dir = Path(checkpoint_dir)
    manifest = read_manifest(checkpoint_dir)

    if manifest["n_actions"] != sim_config.N_DISPATCH_POINTS or \
            manifest["observation_size"] != sim_config.observation_size:
        raise CheckpointError(
            f"Checkpoint expects {manifest['n_actions']} dispatch points, "
            f"environment has {sim_config.N_DISPATCH_POINTS}"
        )

    agent_config = AgentConfig(**{k.upper(): v for k, v in manifest["agent_config"].items()})
    agent = build_agent(agent_config, sim_config, seed=seed)

    if len(agent.members) != manifest["n_members"]:
        raise CheckpointError(
            f"Checkpoint has {manifest['n_members']} networks, variant expects {len(agent.members)}"
        )

    for i, member in enumerate(agent.members):
        try:
            stored = load_network(checkpoint_dir / f"member_{i}.npz")
            copy_parameters(stored, member.policy)
            copy_parameters(stored, member.target)
        except (OSError, ValueError, KeyError) as e:
            raise CheckpointError(f"Cannot load network {i} from {checkpoint_dir}: {e}")

    agent.best_total_reward = manifest["best_total_reward"]
    agent.best_episode = manifest["episode"]
    return agent
