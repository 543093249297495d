"""Extraction de politiques, précision contre la liste idéale et trajectoires."""
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple
import functools
import json
import logging

import numpy as np
from pydantic import ValidationError as PydanticValidationError

from app.config import settings
from app.core.mdp_env import RewardVariant, VariantKind
from app.core.qlearn import QTable, value_iteration
from app.core.workflow_graph import ActionId, StateId, WorkflowGraph, default_graph
from app.exceptions import LandingMismatch, LengthMismatch, NonFiniteInput, ParseError
from app.schemas import IdealListDocument

logger = logging.getLogger(__name__)

IDEAL_TOLERANCE = 1e-10
DEFAULT_MAX_HOPS = 20
ARGMAX_OF_PROBS = "argmax_of_probs"
SAMPLE = "sample"
DEFAULT_IDEAL_PATH = Path(__file__).resolve().parent.parent / "data" / "ideal_list.json"

PolicyVector = np.ndarray


@dataclass(frozen=True)
class IdealActionList:
    """Action idéale et état d'atterrissage pour chaque état."""
    actions: Tuple[ActionId, ...]
    landing: Tuple[StateId, ...]

    def __post_init__(self):
        if len(self.actions) != len(self.landing):
            raise LengthMismatch(
                f"actions ({len(self.actions)}) et landing ({len(self.landing)}) de longueurs différentes"
            )

    def __len__(self) -> int:
        return len(self.actions)


def greedy_policy(q: QTable) -> PolicyVector:
    """Argmax par état, égalités vers le plus petit indice."""
    return np.argmax(q, axis=1).astype(np.int64)


def stable_softmax(x: Sequence[float]) -> np.ndarray:
    """exp(x - max(x)) / somme ; invariant par translation."""
    values = np.asarray(x, dtype=np.float64)
    if values.size == 0:
        raise ValueError("Vecteur vide")
    if not np.all(np.isfinite(values)):
        raise NonFiniteInput("Entrée non finie dans le softmax")
    exps = np.exp(values - values.max())
    return exps / exps.sum()


def softmax_policy(
    q: QTable,
    mode: str = ARGMAX_OF_PROBS,
    rng: Optional[np.random.Generator] = None,
) -> PolicyVector:
    """
    Politique issue du softmax des lignes de q.

    Args:
        q: Table Q
        mode: "argmax_of_probs" (action la plus probable) ou "sample" (tirage catégoriel)
        rng: Générateur, requis en mode "sample"
    """
    if mode not in (ARGMAX_OF_PROBS, SAMPLE):
        raise ValueError(f"Mode de softmax inconnu : {mode}")
    if mode == SAMPLE and rng is None:
        raise ValueError("Le mode 'sample' nécessite un générateur")

    policy = np.zeros(q.shape[0], dtype=np.int64)
    for state, row in enumerate(q):
        probs = stable_softmax(row)
        if mode == SAMPLE:
            policy[state] = rng.choice(len(probs), p=probs)
        else:
            # Probabilités égales après arrondi : on départage sur q
            policy[state] = np.argmax(np.where(probs == probs.max(), row, -np.inf))
    return policy


def get_acc(ideal: Sequence[int], predicted: Sequence[int]) -> float:
    """Proportion de positions où l'action prédite est l'action idéale."""
    if len(ideal) != len(predicted):
        raise LengthMismatch(f"Longueurs différentes : {len(ideal)} vs {len(predicted)}")
    if len(ideal) == 0:
        raise ValueError("Listes vides")
    matches = sum(int(a) == int(b) for a, b in zip(ideal, predicted))
    return matches / len(ideal)


def format_accuracy(accuracy: float) -> str:
    return f"{accuracy:.5f}"


def landing_state(graph: WorkflowGraph, state: StateId, action: ActionId) -> StateId:
    """État suivant le plus probable ; égalités vers le plus petit indice."""
    if graph.is_terminal(state):
        return state
    mass: Dict[StateId, float] = {}
    for edge in graph.edges(state, action):
        mass[edge.next_state] = mass.get(edge.next_state, 0.0) + edge.probability
    return min(mass, key=lambda s: (-mass[s], s))


def ideal_from_qtable(graph: WorkflowGraph, q: QTable) -> IdealActionList:
    actions = [int(a) for a in greedy_policy(q)]
    landing = [landing_state(graph, s, a) for s, a in enumerate(actions)]
    return IdealActionList(tuple(actions), tuple(landing))


def check_ideal_list(graph: WorkflowGraph, ideal: IdealActionList) -> None:
    """Vérifie longueurs, bornes et atteignabilité de chaque atterrissage."""
    if len(ideal) != graph.num_states:
        raise LengthMismatch(
            f"La liste idéale couvre {len(ideal)} états, le graphe en a {graph.num_states}"
        )
    for state, (action, landing) in enumerate(zip(ideal.actions, ideal.landing)):
        if not 0 <= action < graph.num_actions or not 0 <= landing < graph.num_states:
            raise LandingMismatch(f"État {state} : action {action} ou atterrissage {landing} hors bornes")
        if graph.is_terminal(state):
            continue
        reachable = {e.next_state for e in graph.edges(state, action) if e.probability > 0}
        if landing not in reachable:
            raise LandingMismatch(
                f"État {state} : {landing} n'est pas atteignable avec l'action {action}"
            )


def simulate_trajectory(
    graph: WorkflowGraph,
    ideal: IdealActionList,
    start: StateId = 0,
    max_hops: int = DEFAULT_MAX_HOPS,
) -> List[Tuple[StateId, ActionId]]:
    """
    Suit la liste idéale depuis ``start``.

    La paire (état, action) finale est incluse : au plus max_hops + 1 paires.
    """
    check_ideal_list(graph, ideal)
    trajectory = []
    state = start
    for hop in range(max_hops + 1):
        trajectory.append((state, ideal.actions[state]))
        if graph.is_terminal(state) or hop == max_hops:
            break
        state = ideal.landing[state]
    return trajectory


@functools.lru_cache(maxsize=1)
def default_ideal_list() -> IdealActionList:
    """Liste idéale livrée, lue depuis app/data et vérifiée contre le graphe par défaut."""
    ideal = load_ideal_list(DEFAULT_IDEAL_PATH.read_text(encoding="utf-8"))
    check_ideal_list(default_graph(), ideal)
    return ideal


def compute_ideal_list(graph: WorkflowGraph, gamma: float = settings.RL_GAMMA) -> IdealActionList:
    """Glouton sur Q* (variante Baseline) ; sert à régénérer la liste livrée."""
    q_star = value_iteration(graph, RewardVariant(VariantKind.BASELINE), gamma, IDEAL_TOLERANCE)
    return ideal_from_qtable(graph, q_star)


def load_ideal_list(source: str) -> IdealActionList:
    """Charge un document JSON {actions: [...], landing: [...]}."""
    try:
        raw = json.loads(source)
    except json.JSONDecodeError as e:
        raise ParseError(e.lineno, e.msg) from e
    try:
        document = IdealListDocument.model_validate(raw)
    except PydanticValidationError as e:
        raise ParseError(None, str(e.errors()[0]["msg"])) from e
    return IdealActionList(tuple(document.actions), tuple(document.landing))


def serialize_ideal_list(ideal: IdealActionList) -> str:
    document = IdealListDocument(actions=list(ideal.actions), landing=list(ideal.landing))
    return json.dumps(document.model_dump(), indent=2) + "\n"
