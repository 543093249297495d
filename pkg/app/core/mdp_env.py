"""Environnement épisodique construit sur un WorkflowGraph."""
from dataclasses import dataclass
from enum import Enum
from typing import Dict
import logging

import numpy as np

from app.config import settings
from app.core.workflow_graph import StateId, ActionId, Transition, WorkflowGraph
from app.exceptions import InvalidAction, SteppedTerminal

logger = logging.getLogger(__name__)

BASE_STEP_PENALTY = -0.04
TIME_STEP_PENALTY = -0.1
TERMINAL_REWARD = 2.0
BONUS_REWARD = 4.0


class VariantKind(str, Enum):
    BASELINE = "baseline"
    TERMINAL_BONUS = "terminal-bonus"
    TIME_PENALTY = "time-penalty"


@dataclass(frozen=True)
class RewardVariant:
    """Politique de récompense d'un environnement."""
    kind: VariantKind = VariantKind.BASELINE
    early_step_threshold: int = settings.RL_EARLY_STEP_THRESHOLD

    def __post_init__(self):
        if self.early_step_threshold <= 0:
            raise ValueError("early_step_threshold doit être strictement positif")

    @property
    def step_penalty(self) -> float:
        return TIME_STEP_PENALTY if self.kind == VariantKind.TIME_PENALTY else BASE_STEP_PENALTY

    def terminal_reward(self, steps_in_episode: int) -> float:
        if self.kind == VariantKind.BASELINE:
            return TERMINAL_REWARD
        if self.kind == VariantKind.TIME_PENALTY:
            return BONUS_REWARD
        return BONUS_REWARD if steps_in_episode <= self.early_step_threshold else TERMINAL_REWARD

    def reward(self, edge: Transition, steps_in_episode: int) -> float:
        """Récompense du pas ; steps_in_episode inclut le pas courant."""
        if edge.done:
            return self.terminal_reward(steps_in_episode)
        if self.kind == VariantKind.BASELINE:
            return edge.reward
        return self.step_penalty

    def planning_reward(self, edge: Transition) -> float:
        """Récompense stationnaire utilisée par les solveurs exacts.

        Pour TerminalBonus, l'entrée dans le terminal vaut le bonus tardif (+2).
        """
        if edge.done:
            if self.kind == VariantKind.TERMINAL_BONUS:
                return TERMINAL_REWARD
            return self.terminal_reward(0)
        if self.kind == VariantKind.BASELINE:
            return edge.reward
        return self.step_penalty


ENVIRONMENT_VARIANTS: Dict[str, VariantKind] = {
    "env_new1": VariantKind.BASELINE,
    "env_new2": VariantKind.TERMINAL_BONUS,
    "env_new3": VariantKind.TIME_PENALTY,
}


def environment_name(variant: RewardVariant) -> str:
    for name, kind in ENVIRONMENT_VARIANTS.items():
        if kind == variant.kind:
            return name
    raise KeyError(variant.kind)


def parse_variant(name: str, early_step_threshold: int = settings.RL_EARLY_STEP_THRESHOLD) -> RewardVariant:
    """Accepte 'baseline' / 'terminal-bonus' / 'time-penalty' ou 'env_new1..3'."""
    key = name.strip().lower().replace("_", "-")
    if name in ENVIRONMENT_VARIANTS:
        return RewardVariant(ENVIRONMENT_VARIANTS[name], early_step_threshold)
    try:
        return RewardVariant(VariantKind(key), early_step_threshold)
    except ValueError:
        raise ValueError(f"Variante de récompense inconnue : {name}")


@dataclass(frozen=True)
class StepOutcome:
    next_state: StateId
    reward: float
    done: bool
    sampled_edge_index: int


class Environment:
    """Environnement à pas discrets (reset / step) sur un graphe partagé."""

    def __init__(self, graph: WorkflowGraph, variant: RewardVariant):
        self.graph = graph
        self.variant = variant
        self.current_state: StateId = 0
        self.steps_in_episode = 0

    @property
    def name(self) -> str:
        return environment_name(self.variant)

    @property
    def num_states(self) -> int:
        return self.graph.num_states

    @property
    def num_actions(self) -> int:
        return self.graph.num_actions

    def reset(self) -> StateId:
        self.current_state = 0
        self.steps_in_episode = 0
        return self.current_state

    def step(self, action: ActionId, rng: np.random.Generator) -> StepOutcome:
        """Tire une transition de (état courant, action) par CDF inverse."""
        if self.graph.is_terminal(self.current_state):
            raise SteppedTerminal(f"step() depuis l'état terminal {self.current_state}")
        if not 0 <= action < self.graph.num_actions:
            raise InvalidAction(f"Action {action} hors de [0, {self.graph.num_actions})")

        edges = self.graph.edges(self.current_state, action)
        index = 0
        if len(edges) > 1:
            draw = rng.random()
            cumulative = 0.0
            index = len(edges) - 1
            for i, edge in enumerate(edges):
                cumulative += edge.probability
                if draw < cumulative:
                    index = i
                    break

        edge = edges[index]
        self.steps_in_episode += 1
        reward = self.variant.reward(edge, self.steps_in_episode)
        self.current_state = edge.next_state
        return StepOutcome(
            next_state=edge.next_state,
            reward=reward,
            done=self.graph.is_terminal(edge.next_state),
            sampled_edge_index=index,
        )


def make_env(graph: WorkflowGraph, variant: RewardVariant) -> Environment:
    """Environnement à l'état 0 avec la politique de récompense de la variante."""
    env = Environment(graph, variant)
    env.reset()
    return env
