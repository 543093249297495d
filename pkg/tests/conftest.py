"""Configuration des tests."""
import os
import sys
from pathlib import Path
from typing import Dict, Iterable, List, Tuple

import numpy as np
import pytest

# Empêcher le chargement de .env pendant les tests
os.environ["TESTING"] = "true"

# Ajouter le répertoire racine au PYTHONPATH
root_dir = Path(__file__).parent.parent
sys.path.insert(0, str(root_dir))

# Importer app après avoir configuré l'environnement
from app.core.workflow_graph import Transition, WorkflowGraph, default_graph  # noqa: E402

STEP = -0.04


def make_graph(
    num_states: int,
    num_actions: int,
    edges: Dict[Tuple[int, int], Iterable[Tuple[float, int, float]]],
    terminals: Iterable[int],
    **extra,
) -> WorkflowGraph:
    """Graphe de test ; done est déduit des états terminaux."""
    terminal_set = frozenset(terminals)
    transitions = {
        key: tuple(Transition(p, nxt, r, nxt in terminal_set) for p, nxt, r in value)
        for key, value in edges.items()
    }
    return WorkflowGraph(num_states, num_actions, transitions, terminal_set, **extra)


def graph_document(num_states: int, num_actions: int, transitions: List[dict], terminals: List[int], **extra) -> dict:
    document = {
        "num_states": num_states,
        "num_actions": num_actions,
        "terminal_states": terminals,
        "milestones": {},
        "transitions": transitions,
    }
    document.update(extra)
    return document


@pytest.fixture
def two_state_graph():
    """0 --a0--> 1 (terminal, +2)."""
    return make_graph(2, 1, {(0, 0): [(1.0, 1, 2.0)]}, [1])


@pytest.fixture
def chain_graph():
    """0 -> 1 -> 2 (terminal) : -0.04 par pas, +2 à l'arrivée."""
    return make_graph(3, 1, {(0, 0): [(1.0, 1, STEP)], (1, 0): [(1.0, 2, 2.0)]}, [2])


@pytest.fixture
def self_loop_graph():
    """Action 0 boucle sur 0, action 1 termine."""
    return make_graph(2, 2, {(0, 0): [(1.0, 0, STEP)], (0, 1): [(1.0, 1, 2.0)]}, [1])


@pytest.fixture
def risky_graph():
    """Arête stochastique (0, 0) : 0.8 vers 1, 0.2 reste en 0."""
    return make_graph(
        3, 2,
        {
            (0, 0): [(0.8, 1, STEP), (0.2, 0, STEP)],
            (0, 1): [(1.0, 0, STEP)],
            (1, 0): [(1.0, 2, 2.0)],
            (1, 1): [(1.0, 0, STEP)],
        },
        [2],
    )


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def workflow():
    return default_graph()
