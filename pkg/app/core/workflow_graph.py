"""Graphe de workflow forensique : chargement, validation, export."""
from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Dict, FrozenSet, List, Optional, Set, Tuple
import functools
import hashlib
import json
import logging
import math

from pydantic import ValidationError as PydanticValidationError

from app.exceptions import ParseError, ValidationError
from app.schemas import EdgeDocument, GraphDocument, TransitionDocument

logger = logging.getLogger(__name__)

PROBABILITY_TOLERANCE = 1e-9
DEFAULT_STEP_REWARD = -0.04
DEFAULT_GRAPH_PATH = Path(__file__).resolve().parent.parent / "data" / "default_graph.json"

StateId = int
ActionId = int


@dataclass(frozen=True)
class Transition:
    """Issue possible d'un couple (état, action)."""
    probability: float
    next_state: StateId
    reward: float
    done: bool


class ViolationKind(str, Enum):
    PROBABILITY_SUM = "ProbabilitySum"
    DANGLING_STATE = "DanglingState"
    UNREACHABLE_TERMINAL = "UnreachableTerminal"
    INDEX_OUT_OF_RANGE = "IndexOutOfRange"
    TERMINAL_HAS_EDGES = "TerminalHasEdges"
    DONE_FLAG_MISMATCH = "DoneFlagMismatch"


@dataclass(frozen=True)
class GraphViolation:
    """Violation d'un invariant du graphe, localisée sur un état (et une action)."""
    kind: ViolationKind
    state: StateId
    action: Optional[ActionId] = None
    detail: str = ""

    @property
    def sort_key(self) -> Tuple[int, int, str]:
        return (self.state, -1 if self.action is None else self.action, self.kind.value)

    def __str__(self) -> str:
        where = f"({self.state}" + (f", {self.action})" if self.action is not None else ")")
        return f"{self.kind.value} at {where}: {self.detail}"


@dataclass(frozen=True)
class WorkflowGraph:
    """MDP complet : transitions stochastiques, états terminaux, jalons.

    Les couples (état, action) absents de ``transitions`` sont, pour un état
    non terminal, des boucles sur l'état courant avec la pénalité de pas.
    """
    num_states: int
    num_actions: int
    transitions: Dict[Tuple[StateId, ActionId], Tuple[Transition, ...]]
    terminal_states: FrozenSet[StateId]
    milestones: Dict[StateId, str] = field(default_factory=dict)
    state_labels: Dict[StateId, str] = field(default_factory=dict)
    command_slots: Dict[StateId, int] = field(default_factory=dict)

    def is_terminal(self, state: StateId) -> bool:
        return state in self.terminal_states

    def is_declared(self, state: StateId, action: ActionId) -> bool:
        return (state, action) in self.transitions

    def edges(self, state: StateId, action: ActionId) -> Tuple[Transition, ...]:
        """Transitions de (state, action), boucle implicite si le couple n'est pas déclaré."""
        declared = self.transitions.get((state, action))
        if declared is not None:
            return declared
        return (Transition(1.0, state, DEFAULT_STEP_REWARD, False),)

    def declared_actions(self, state: StateId) -> List[ActionId]:
        return sorted(a for (s, a) in self.transitions if s == state)

    @property
    def populated_pairs(self) -> int:
        """Nombre de couples (état, emplacement d'action) porteurs de commande."""
        return sum(self.command_slots.values())

    def label(self, state: StateId) -> str:
        return self.milestones.get(state) or self.state_labels.get(state, f"state {state}")


def reachable_states(graph: WorkflowGraph, start: StateId = 0) -> Set[StateId]:
    """BFS sur les arêtes de probabilité positive."""
    seen = {start}
    queue = deque([start])
    while queue:
        state = queue.popleft()
        for (s, _a), edges in graph.transitions.items():
            if s != state:
                continue
            for edge in edges:
                nxt = edge.next_state
                if edge.probability > 0 and 0 <= nxt < graph.num_states and nxt not in seen:
                    seen.add(nxt)
                    queue.append(nxt)
    return seen


def validate(graph: WorkflowGraph) -> List[GraphViolation]:
    """Retourne la liste triée des violations (vide si le graphe est valide)."""
    violations: List[GraphViolation] = []
    in_range = lambda s: 0 <= s < graph.num_states  # noqa: E731

    for state in sorted(graph.terminal_states):
        if not in_range(state):
            violations.append(GraphViolation(
                ViolationKind.INDEX_OUT_OF_RANGE, state, None, "état terminal hors bornes"))
    for state in sorted(graph.milestones):
        if not in_range(state):
            violations.append(GraphViolation(
                ViolationKind.INDEX_OUT_OF_RANGE, state, None, "jalon hors bornes"))
    for state, slots in sorted(graph.command_slots.items()):
        if not in_range(state) or not 1 <= slots <= graph.num_actions:
            violations.append(GraphViolation(
                ViolationKind.INDEX_OUT_OF_RANGE, state, None,
                f"command_slots={slots} invalide"))

    for (state, action), edges in sorted(graph.transitions.items()):
        if not in_range(state) or not 0 <= action < graph.num_actions:
            violations.append(GraphViolation(
                ViolationKind.INDEX_OUT_OF_RANGE, state, action, "couple (état, action) hors bornes"))
            continue
        if graph.is_terminal(state):
            violations.append(GraphViolation(
                ViolationKind.TERMINAL_HAS_EDGES, state, action, "un état terminal n'a pas d'arête"))
        total = math.fsum(edge.probability for edge in edges)
        if abs(total - 1.0) > PROBABILITY_TOLERANCE:
            violations.append(GraphViolation(
                ViolationKind.PROBABILITY_SUM, state, action, f"somme des probabilités = {total!r}"))
        for edge in edges:
            if not in_range(edge.next_state):
                violations.append(GraphViolation(
                    ViolationKind.INDEX_OUT_OF_RANGE, state, action,
                    f"état suivant {edge.next_state} hors bornes"))
            elif edge.done != graph.is_terminal(edge.next_state):
                violations.append(GraphViolation(
                    ViolationKind.DONE_FLAG_MISMATCH, state, action,
                    f"done={edge.done} vers l'état {edge.next_state}"))

    declared_states = {s for (s, _a) in graph.transitions}
    for state in range(graph.num_states):
        if not graph.is_terminal(state) and state not in declared_states:
            violations.append(GraphViolation(
                ViolationKind.DANGLING_STATE, state, None, "état non terminal sans arête"))

    reachable = reachable_states(graph, 0)
    if not any(s in reachable for s in graph.terminal_states):
        violations.append(GraphViolation(
            ViolationKind.UNREACHABLE_TERMINAL, 0, None, "aucun état terminal atteignable depuis 0"))

    # Dédoublonnage (ex. : plusieurs arêtes hors bornes sur le même couple)
    unique = {(v.sort_key, v.detail): v for v in violations}
    return [unique[k] for k in sorted(unique)]


def graph_from_document(document: GraphDocument) -> WorkflowGraph:
    """Construit un WorkflowGraph à partir d'un document validé par pydantic."""
    transitions: Dict[Tuple[int, int], Tuple[Transition, ...]] = {}
    for entry in document.transitions:
        key = (entry.state, entry.action)
        if key in transitions:
            raise ParseError(None, f"Couple (état, action) dupliqué : {key}")
        transitions[key] = tuple(
            Transition(edge.p, edge.next, edge.reward, edge.done) for edge in entry.edges
        )
    return WorkflowGraph(
        num_states=document.num_states,
        num_actions=document.num_actions,
        transitions=transitions,
        terminal_states=frozenset(document.terminal_states),
        milestones=dict(document.milestones),
        state_labels=dict(document.state_labels),
        command_slots=dict(document.command_slots),
    )


def graph_to_document(graph: WorkflowGraph) -> GraphDocument:
    return GraphDocument(
        num_states=graph.num_states,
        num_actions=graph.num_actions,
        terminal_states=sorted(graph.terminal_states),
        milestones=dict(sorted(graph.milestones.items())),
        transitions=[
            TransitionDocument(
                state=state,
                action=action,
                edges=[
                    EdgeDocument(p=e.probability, next=e.next_state, reward=e.reward, done=e.done)
                    for e in edges
                ],
            )
            for (state, action), edges in sorted(graph.transitions.items())
        ],
        command_slots=dict(sorted(graph.command_slots.items())),
        state_labels=dict(sorted(graph.state_labels.items())),
    )


def load_graph(source: str) -> WorkflowGraph:
    """Charge et valide un document de graphe (JSON)."""
    try:
        raw = json.loads(source)
    except json.JSONDecodeError as e:
        raise ParseError(e.lineno, e.msg) from e

    try:
        document = GraphDocument.model_validate(raw)
    except PydanticValidationError as e:
        first = e.errors()[0]
        location = ".".join(str(part) for part in first["loc"])
        raise ParseError(None, f"{location}: {first['msg']}") from e

    graph = graph_from_document(document)
    violations = validate(graph)
    if violations:
        logger.error(f"Graphe invalide : {len(violations)} violation(s)")
        raise ValidationError(violations)

    logger.info(
        f"Graphe chargé : {graph.num_states} états, {graph.num_actions} actions, "
        f"{len(graph.transitions)} couples déclarés"
    )
    return graph


def serialize_graph(graph: WorkflowGraph) -> str:
    """Document JSON canonique du graphe."""
    return json.dumps(graph_to_document(graph).model_dump(mode="json"), indent=2) + "\n"


def graph_hash(graph: WorkflowGraph) -> str:
    """SHA-256 du document canonique."""
    return hashlib.sha256(serialize_graph(graph).encode("utf-8")).hexdigest()


@functools.lru_cache(maxsize=1)
def default_graph() -> WorkflowGraph:
    """Graphe unifié livré (67 états, 10 actions, terminal 66), lu depuis app/data."""
    return load_graph(DEFAULT_GRAPH_PATH.read_text(encoding="utf-8"))
