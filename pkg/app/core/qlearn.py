"""Q-learning tabulaire (epsilon-greedy) et solveurs exacts utilisés comme oracles."""
from dataclasses import dataclass, field
from pathlib import Path
from typing import FrozenSet, List, Optional, Sequence, Tuple
import logging

import numpy as np
import pandas as pd

from app.core.mdp_env import Environment, RewardVariant
from app.core.workflow_graph import ActionId, StateId, WorkflowGraph
from app.schemas import TrainConfig

logger = logging.getLogger(__name__)

CSV_FLOAT_FORMAT = "%.12g"
EVALUATION_MAX_STEPS = 200

QTable = np.ndarray
QUpdate = Tuple[float, float, int, int]
EpisodeReward = Tuple[float, int, int]


def new_qtable(num_states: int, num_actions: int) -> QTable:
    """Table Q initialisée à zéro."""
    return np.zeros((num_states, num_actions), dtype=np.float64)


def select_action(q: QTable, state: StateId, epsilon: float, rng: np.random.Generator) -> ActionId:
    """Sélection epsilon-greedy ; égalités départagées par le plus petit indice.

    Un tirage uniforme est toujours consommé, même pour epsilon = 0.
    """
    if not 0.0 <= epsilon <= 1.0:
        raise ValueError(f"epsilon hors de [0, 1] : {epsilon}")
    if rng.random() < epsilon:
        return int(rng.integers(q.shape[1]))
    return int(np.argmax(q[state]))


def bellman_update(q_sa: float, reward: float, max_next_q: float, alpha: float, gamma: float) -> float:
    """Q(s,a) + alpha * (r + gamma * max Q(s',.) - Q(s,a))."""
    return q_sa + alpha * (reward + gamma * max_next_q - q_sa)


@dataclass
class TrainTelemetry:
    """Enregistrements de l'entraînement (mises à jour, récompenses, epsilon)."""
    q_updates: List[QUpdate] = field(default_factory=list)
    tracked_updates: List[QUpdate] = field(default_factory=list)
    episode_rewards: List[EpisodeReward] = field(default_factory=list)
    epsilon_trace: List[float] = field(default_factory=list)


@dataclass
class TrainResult:
    q_table: QTable
    telemetry: TrainTelemetry
    episodes_to_convergence: Optional[int] = None
    converged: bool = False

    @property
    def episodes_run(self) -> int:
        return len(self.telemetry.episode_rewards)


class _ConvergenceMonitor:
    """Test d'arrêt sur la taille des mises à jour.

    Mode "paper" : une seule mise à jour non nulle sous le seuil suffit.
    Mode "stable" : il en faut ``window`` consécutives ; une mise à jour nulle
    ou trop grande remet le compteur à zéro.
    """

    def __init__(self, threshold: float, mode: str, window: int):
        self.threshold = threshold
        self.required = 1 if mode == "paper" else window
        self.streak = 0

    def observe(self, old_q: float, new_q: float) -> bool:
        if new_q != old_q and abs(new_q - old_q) < self.threshold:
            self.streak += 1
        else:
            self.streak = 0
        return self.streak >= self.required


def _decay_epsilon(current: float, proposed: float, epsilon_min: float) -> float:
    # Jamais sous epsilon_min, jamais de remontée si on y est déjà
    if proposed >= epsilon_min:
        return proposed
    return min(current, epsilon_min)


def train(
    env: Environment,
    config: TrainConfig,
    watch_pairs: FrozenSet[Tuple[StateId, ActionId]] = frozenset(),
) -> TrainResult:
    """
    Entraîne un agent Q-learning sur l'environnement.

    Args:
        env: Environnement (réinitialisé à chaque épisode)
        config: Hyperparamètres, graine comprise
        watch_pairs: Couples (état, action) dont les mises à jour sont aussi
            copiées dans ``tracked_updates``

    Returns:
        TrainResult avec la table Q, la télémétrie et l'état de convergence
    """
    rng = np.random.default_rng(config.seed)
    q = new_qtable(env.num_states, env.num_actions)
    telemetry = TrainTelemetry()
    monitor = _ConvergenceMonitor(
        config.convergence_threshold, config.convergence_mode, config.convergence_window
    )
    watched = frozenset(tuple(pair) for pair in watch_pairs)
    epsilon = config.epsilon0
    decay_value = config.decay_value
    alpha, gamma = config.alpha, config.gamma

    logger.info(
        f"Entraînement {env.name} : alpha={alpha}, gamma={gamma}, "
        f"{config.episodes} épisodes, graine {config.seed}"
    )

    for episode in range(config.episodes):
        state = env.reset()
        telemetry.epsilon_trace.append(epsilon)
        episodic_return = 0.0
        steps = 0
        converged = False

        for _ in range(config.max_steps_per_episode):
            action = select_action(q, state, epsilon, rng)
            outcome = env.step(action, rng)

            old_q = float(q[state, action])
            max_next_q = 0.0 if outcome.done else float(q[outcome.next_state].max())
            new_q = bellman_update(old_q, outcome.reward, max_next_q, alpha, gamma)
            q[state, action] = new_q

            record = (old_q, new_q, episode, action)
            telemetry.q_updates.append(record)
            if (state, action) in watched:
                telemetry.tracked_updates.append(record)

            episodic_return += outcome.reward
            steps += 1
            if config.step_decay > 0.0:
                epsilon = _decay_epsilon(epsilon, epsilon * (1.0 - config.step_decay), config.epsilon_min)

            if monitor.observe(old_q, new_q):
                converged = True
                break

            state = outcome.next_state
            if outcome.done:
                break

        # L'épisode interrompu par la convergence compte comme exécuté
        telemetry.episode_rewards.append((episodic_return, episode, steps))

        if converged:
            logger.info(f"Convergence de {env.name} à l'épisode {episode + 1}")
            return TrainResult(q, telemetry, episodes_to_convergence=episode + 1, converged=True)

        epsilon = _decay_epsilon(epsilon, epsilon - decay_value * 0.5, config.epsilon_min)

    logger.info(f"{env.name} : pas de convergence en {config.episodes} épisodes")
    return TrainResult(q, telemetry)


# --- Solveurs exacts ------------------------------------------------------------

def transition_tensors(graph: WorkflowGraph, variant: RewardVariant) -> Tuple[np.ndarray, np.ndarray]:
    """Tenseurs denses P[s, a, s'] et R[s, a] (récompense espérée).

    Les lignes des états terminaux sont nulles ; les emplacements non déclarés
    bouclent sur l'état avec la pénalité de pas de la variante.
    """
    n, m = graph.num_states, graph.num_actions
    P = np.zeros((n, m, n), dtype=np.float64)
    R = np.zeros((n, m), dtype=np.float64)
    for state in range(n):
        if graph.is_terminal(state):
            continue
        for action in range(m):
            for edge in graph.edges(state, action):
                P[state, action, edge.next_state] += edge.probability
                R[state, action] += edge.probability * variant.planning_reward(edge)
    return P, R


def value_iteration(
    graph: WorkflowGraph,
    variant: RewardVariant,
    gamma: float,
    tolerance: float,
    max_iterations: int = 1_000_000,
) -> QTable:
    """Q* par balayages synchrones jusqu'à une variation maximale < tolerance."""
    if not 0.0 <= gamma < 1.0:
        raise ValueError(f"gamma hors de [0, 1) : {gamma}")
    if tolerance <= 0.0:
        raise ValueError("tolerance doit être strictement positive")

    P, R = transition_tensors(graph, variant)
    q = np.zeros_like(R)
    for iteration in range(max_iterations):
        v = q.max(axis=1)
        updated = R + gamma * (P @ v)
        delta = float(np.abs(updated - q).max())
        q = updated
        if delta < tolerance:
            logger.debug(f"Itération de la valeur : {iteration + 1} balayages")
            break
    return q


def policy_value(
    graph: WorkflowGraph,
    variant: RewardVariant,
    policy: Sequence[int],
    gamma: float,
    tolerance: float,
    max_iterations: int = 1_000_000,
) -> np.ndarray:
    """V^pi de la politique déterministe ``policy`` (V = 0 sur les terminaux)."""
    if len(policy) != graph.num_states:
        raise ValueError("La politique doit couvrir tous les états")
    P, R = transition_tensors(graph, variant)
    states = np.arange(graph.num_states)
    actions = np.asarray(policy, dtype=np.int64)
    P_pi = P[states, actions]
    R_pi = R[states, actions]

    v = np.zeros(graph.num_states, dtype=np.float64)
    for _ in range(max_iterations):
        updated = R_pi + gamma * (P_pi @ v)
        delta = float(np.abs(updated - v).max())
        v = updated
        if delta < tolerance:
            break
    return v


def evaluate_policy(
    env: Environment,
    q: QTable,
    episodes: int,
    rng: np.random.Generator,
    max_steps: int = EVALUATION_MAX_STEPS,
) -> float:
    """Retour épisodique moyen de la politique gloutonne sur q."""
    if episodes < 1:
        raise ValueError("Il faut au moins un épisode d'évaluation")
    returns = []
    for _ in range(episodes):
        state = env.reset()
        total = 0.0
        for _ in range(max_steps):
            outcome = env.step(int(np.argmax(q[state])), rng)
            total += outcome.reward
            state = outcome.next_state
            if outcome.done:
                break
        returns.append(total)
    return float(np.mean(returns))


# --- Export -----------------------------------------------------------------------

def _write_csv(frame: pd.DataFrame, path: Path, index: bool = False) -> None:
    frame.to_csv(path, index=index, float_format=CSV_FLOAT_FORMAT, lineterminator="\n")


def write_qtable(q: QTable, path: Path) -> None:
    frame = pd.DataFrame(q, columns=[f"a{i}" for i in range(q.shape[1])])
    frame.index.name = "state"
    _write_csv(frame, path, index=True)


def read_qtable(path: Path) -> QTable:
    return pd.read_csv(path, index_col="state").to_numpy(dtype=np.float64)


def write_telemetry(result: TrainResult, out_dir: Path) -> List[Path]:
    """Écrit qtable.csv et les CSV de télémétrie dans ``out_dir``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    update_columns = ["old_q", "new_q", "episode", "action"]
    telemetry = result.telemetry

    files = {
        "q_updates.csv": pd.DataFrame(telemetry.q_updates, columns=update_columns),
        "tracked_updates.csv": pd.DataFrame(telemetry.tracked_updates, columns=update_columns),
        "episode_rewards.csv": pd.DataFrame(telemetry.episode_rewards, columns=["return", "episode", "steps"]),
        "epsilon_trace.csv": pd.DataFrame(
            {"episode": range(len(telemetry.epsilon_trace)), "epsilon": telemetry.epsilon_trace}
        ),
    }
    written = []
    for name, frame in files.items():
        _write_csv(frame, out_dir / name)
        written.append(out_dir / name)

    write_qtable(result.q_table, out_dir / "qtable.csv")
    written.append(out_dir / "qtable.csv")
    return written


def read_episode_rewards(path: Path) -> List[EpisodeReward]:
    frame = pd.read_csv(path)
    return [
        (float(row["return"]), int(row["episode"]), int(row["steps"]))
        for _, row in frame.iterrows()
    ]
