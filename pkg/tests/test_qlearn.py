import numpy as np
import pandas as pd
import pytest
from pydantic import ValidationError as PydanticValidationError

from app.config import Settings
from app.core.mdp_env import RewardVariant, VariantKind, make_env
from app.core.qlearn import (
    _ConvergenceMonitor,
    bellman_update,
    evaluate_policy,
    new_qtable,
    policy_value,
    read_episode_rewards,
    read_qtable,
    select_action,
    train,
    transition_tensors,
    value_iteration,
    write_qtable,
    write_telemetry,
)
from app.schemas import TrainConfig
from conftest import make_graph

BASELINE = RewardVariant(VariantKind.BASELINE)
NEVER = 10 ** 9


def config(**overrides):
    values = dict(alpha=0.5, gamma=0.9, epsilon0=0.0, episodes=3, convergence_window=NEVER)
    values.update(overrides)
    return TrainConfig(**values)


def test_bellman_update():
    assert bellman_update(0.0, 2.0, 0.0, 0.1, 0.99) == pytest.approx(0.2)
    assert bellman_update(1.0, -0.04, 2.0, 0.5, 0.9) == pytest.approx(1.0 + 0.5 * (-0.04 + 1.8 - 1.0))
    # alpha = 1 : remplacement complet
    assert bellman_update(5.0, 1.0, 3.0, 1.0, 0.5) == pytest.approx(2.5)


def test_select_action_greedy_tie_break():
    q = np.array([[0.0, 1.0, 1.0], [0.0, 0.0, 0.0]])
    rng = np.random.default_rng(0)
    assert select_action(q, 0, 0.0, rng) == 1
    assert select_action(q, 1, 0.0, rng) == 0


def test_select_action_always_draws():
    q = new_qtable(2, 3)
    rng = np.random.default_rng(9)
    reference = np.random.default_rng(9)
    select_action(q, 0, 0.0, rng)
    reference.random()
    assert rng.random() == reference.random()


def test_select_action_explores():
    q = np.array([[10.0, 0.0, 0.0, 0.0]])
    rng = np.random.default_rng(1)
    picked = {select_action(q, 0, 1.0, rng) for _ in range(200)}
    assert picked == {0, 1, 2, 3}


def test_select_action_rejects_bad_epsilon():
    with pytest.raises(ValueError):
        select_action(new_qtable(1, 1), 0, 1.5, np.random.default_rng(0))


def test_train_records_updates(two_state_graph):
    result = train(make_env(two_state_graph, BASELINE), config())
    assert result.telemetry.q_updates == [
        (0.0, 1.0, 0, 0),
        (1.0, 1.5, 1, 0),
        (1.5, 1.75, 2, 0),
    ]
    assert result.telemetry.episode_rewards == [(2.0, 0, 1), (2.0, 1, 1), (2.0, 2, 1)]
    assert result.q_table[0, 0] == pytest.approx(1.75)
    assert not result.converged
    assert result.episodes_to_convergence is None
    assert result.episodes_run == 3


def test_train_zero_episodes(two_state_graph):
    result = train(make_env(two_state_graph, BASELINE), config(episodes=0))
    assert result.episodes_run == 0
    assert not result.q_table.any()


def test_paper_convergence(two_state_graph):
    # Variations : 1.0, 0.5, 0.25 -> sous le seuil au 3e épisode
    result = train(
        make_env(two_state_graph, BASELINE),
        config(episodes=10, convergence_threshold=0.3, convergence_mode="paper"),
    )
    assert result.converged
    assert result.episodes_to_convergence == 3
    assert result.episodes_run == 3


def test_stable_convergence_needs_a_window(two_state_graph):
    result = train(
        make_env(two_state_graph, BASELINE),
        config(episodes=10, convergence_threshold=0.3, convergence_mode="stable", convergence_window=2),
    )
    assert result.converged
    assert result.episodes_to_convergence == 4


def test_tiny_threshold_never_converges(self_loop_graph):
    # Seuil minuscule : aucune série ne démarre
    result = train(
        make_env(self_loop_graph, BASELINE),
        config(episodes=5, max_steps_per_episode=5, epsilon0=1.0, epsilon_min=1.0,
               convergence_threshold=1e-12, convergence_mode="stable", convergence_window=2),
    )
    assert not result.converged
    assert result.episodes_run == 5


def test_epsilon_decay_trace(two_state_graph):
    result = train(
        make_env(two_state_graph, BASELINE),
        config(episodes=3, epsilon0=0.9, epsilon_min=0.01),
    )
    trace = result.telemetry.epsilon_trace
    step = (0.9 - 0.01) / 3 * 0.5
    assert trace == pytest.approx([0.9, 0.9 - step, 0.9 - 2 * step])


def test_epsilon_floor(two_state_graph):
    result = train(
        make_env(two_state_graph, BASELINE),
        config(episodes=4, epsilon0=0.5, epsilon_min=0.1, epsilon_decay_value=1.0),
    )
    assert result.telemetry.epsilon_trace == [0.5, 0.1, 0.1, 0.1]


def test_epsilon_never_raised(two_state_graph):
    result = train(
        make_env(two_state_graph, BASELINE),
        config(episodes=3, epsilon0=0.05, epsilon_min=0.1, epsilon_decay_value=0.01),
    )
    assert result.telemetry.epsilon_trace == [0.05, 0.05, 0.05]


def test_watch_pairs(chain_graph):
    result = train(make_env(chain_graph, BASELINE), config(episodes=5), watch_pairs=frozenset({(1, 0)}))
    updates = result.telemetry.q_updates
    assert len(updates) == 10
    assert result.telemetry.tracked_updates == updates[1::2]


def test_same_seed_same_result(workflow):
    cfg = TrainConfig(episodes=20, max_steps_per_episode=50, seed=3, convergence_window=NEVER)
    first = train(make_env(workflow, BASELINE), cfg)
    second = train(make_env(workflow, BASELINE), cfg)
    assert np.array_equal(first.q_table, second.q_table)
    assert first.telemetry.q_updates == second.telemetry.q_updates
    assert first.telemetry.episode_rewards == second.telemetry.episode_rewards


def test_qlearning_matches_value_iteration(chain_graph):
    result = train(make_env(chain_graph, BASELINE), config(episodes=200))
    expected = value_iteration(chain_graph, BASELINE, 0.9, 1e-12)
    assert result.q_table == pytest.approx(expected, abs=1e-6)


def test_value_iteration_chain(chain_graph):
    q = value_iteration(chain_graph, BASELINE, 0.9, 1e-12)
    assert q[0, 0] == pytest.approx(1.76)
    assert q[1, 0] == pytest.approx(2.0)
    assert q[2, 0] == 0.0


def test_value_iteration_variants(self_loop_graph):
    q = value_iteration(self_loop_graph, BASELINE, 0.9, 1e-12)
    assert q[0] == pytest.approx([1.76, 2.0])

    bonus = value_iteration(self_loop_graph, RewardVariant(VariantKind.TERMINAL_BONUS), 0.9, 1e-12)
    assert bonus == pytest.approx(q)

    timed = value_iteration(self_loop_graph, RewardVariant(VariantKind.TIME_PENALTY), 0.9, 1e-12)
    assert timed[0] == pytest.approx([3.5, 4.0])


def test_value_iteration_rejects_bad_parameters(chain_graph):
    with pytest.raises(ValueError):
        value_iteration(chain_graph, BASELINE, 1.0, 1e-6)
    with pytest.raises(ValueError):
        value_iteration(chain_graph, BASELINE, 0.9, 0.0)


def test_policy_value(chain_graph, self_loop_graph):
    v = policy_value(chain_graph, BASELINE, [0, 0, 0], 0.9, 1e-12)
    assert v == pytest.approx([1.76, 2.0, 0.0])

    looping = policy_value(self_loop_graph, BASELINE, [0, 0], 0.9, 1e-12)
    assert looping[0] == pytest.approx(-0.4, abs=1e-6)

    with pytest.raises(ValueError):
        policy_value(chain_graph, BASELINE, [0], 0.9, 1e-12)


def test_transition_tensors(risky_graph):
    P, R = transition_tensors(risky_graph, BASELINE)
    assert P[0, 0, 1] == pytest.approx(0.8)
    assert P[0, 0, 0] == pytest.approx(0.2)
    assert R[0, 0] == pytest.approx(-0.04)
    assert R[1, 0] == pytest.approx(2.0)
    assert not P[2].any()
    assert P[:2].sum(axis=2) == pytest.approx(np.ones((2, 2)))


def test_transition_tensors_implicit_loop():
    graph = make_graph(2, 3, {(0, 0): [(1.0, 1, 2.0)]}, [1])
    P, R = transition_tensors(graph, RewardVariant(VariantKind.TIME_PENALTY))
    assert P[0, 2, 0] == 1.0
    assert R[0, 2] == pytest.approx(-0.1)


def test_evaluate_policy(chain_graph, self_loop_graph, rng):
    q = new_qtable(3, 1)
    assert evaluate_policy(make_env(chain_graph, BASELINE), q, 3, rng) == pytest.approx(1.96)

    looping = np.array([[1.0, 0.0], [0.0, 0.0]])
    value = evaluate_policy(make_env(self_loop_graph, BASELINE), looping, 2, rng, max_steps=10)
    assert value == pytest.approx(-0.4)

    with pytest.raises(ValueError):
        evaluate_policy(make_env(chain_graph, BASELINE), q, 0, rng)


def test_qtable_csv(tmp_path):
    q = np.array([[0.1, -0.25], [1.0 / 3.0, 2.0]])
    write_qtable(q, tmp_path / "qtable.csv")
    header = (tmp_path / "qtable.csv").read_text().splitlines()[0]
    assert header == "state,a0,a1"
    assert read_qtable(tmp_path / "qtable.csv") == pytest.approx(q, rel=1e-11)


def test_write_telemetry(two_state_graph, tmp_path):
    result = train(make_env(two_state_graph, BASELINE), config(), watch_pairs=frozenset({(0, 0)}))
    written = write_telemetry(result, tmp_path / "run")
    names = sorted(p.name for p in written)
    assert names == [
        "episode_rewards.csv",
        "epsilon_trace.csv",
        "q_updates.csv",
        "qtable.csv",
        "tracked_updates.csv",
    ]
    assert read_episode_rewards(tmp_path / "run" / "episode_rewards.csv") == result.telemetry.episode_rewards
    updates = pd.read_csv(tmp_path / "run" / "q_updates.csv")
    assert list(updates.columns) == ["old_q", "new_q", "episode", "action"]
    assert len(updates) == 3


def test_decay_value_default():
    assert TrainConfig(epsilon0=0.9, epsilon_min=0.1, episodes=100).decay_value == pytest.approx(0.008)
    assert TrainConfig(episodes=0).decay_value == 0.0
    assert TrainConfig(epsilon_decay_value=0.2).decay_value == 0.2


def test_convergence_mode_is_validated():
    assert TrainConfig.model_fields["convergence_mode"].validate_default
    with pytest.raises(PydanticValidationError):
        TrainConfig(convergence_mode="turbo")
    with pytest.raises(PydanticValidationError):
        Settings(RL_CONVERGENCE_MODE="turbo")


def test_monitor_streak_resets():
    monitor = _ConvergenceMonitor(0.1, "stable", 3)
    assert not monitor.observe(1.0, 1.05)
    assert not monitor.observe(1.05, 1.1)
    # mise à jour nulle : la série repart de zéro
    assert not monitor.observe(1.1, 1.1)
    assert not monitor.observe(1.1, 1.15)
    assert not monitor.observe(1.15, 1.2)
    assert monitor.observe(1.2, 1.25)


def test_monitor_paper_mode():
    monitor = _ConvergenceMonitor(0.1, "paper", 50)
    assert not monitor.observe(0.0, 0.0)
    assert not monitor.observe(0.0, 1.0)
    assert monitor.observe(1.0, 1.01)


def test_bellman_examples():
    assert bellman_update(1.0, -0.04, 0.5, 0.4, 0.9) == pytest.approx(0.764)
    # Point fixe : q_sa = r + gamma * max_next
    assert bellman_update(2.9, 2.0, 1.0, 0.3, 0.9) == pytest.approx(2.9)


def test_select_action_unique_maximizer():
    q = np.zeros((1, 10))
    q[0, 7] = 1.0
    assert select_action(q, 0, 0.0, np.random.default_rng(0)) == 7


@pytest.mark.parametrize("kind", list(VariantKind))
def test_qtable_stays_bounded(workflow, kind):
    variant = RewardVariant(kind)
    gamma = 0.9
    result = train(
        make_env(workflow, variant),
        config(alpha=0.9, gamma=gamma, epsilon0=1.0, episodes=40, max_steps_per_episode=100),
    )
    # Les récompenses d'une variante ne dépassent jamais 4 en valeur absolue
    bound = 4.0 / (1.0 - gamma)
    assert max(abs(new_q) for _old, new_q, _ep, _a in result.telemetry.q_updates) <= bound
    assert np.all(np.abs(result.q_table) <= bound)


@pytest.mark.parametrize("mode", ["paper", "stable"])
def test_steps_match_recorded_updates(workflow, mode):
    result = train(
        make_env(workflow, BASELINE),
        config(epsilon0=0.9, episodes=30, max_steps_per_episode=80,
               convergence_mode=mode, convergence_threshold=1e-3, convergence_window=20),
    )
    steps = sum(steps for _ret, _ep, steps in result.telemetry.episode_rewards)
    assert steps == len(result.telemetry.q_updates)
    assert len(result.telemetry.episode_rewards) == len(result.telemetry.epsilon_trace)


def test_evaluate_policy_prefers_solved_table(workflow):
    env = make_env(workflow, BASELINE)
    q_star = value_iteration(workflow, BASELINE, 0.99, 1e-10)
    zero = evaluate_policy(env, new_qtable(workflow.num_states, workflow.num_actions), 100, np.random.default_rng(4))
    solved = evaluate_policy(env, q_star, 100, np.random.default_rng(4))
    # Table nulle : l'action 0 boucle sur l'état 2 jusqu'à la limite de pas
    assert zero == pytest.approx(-0.04 * 200)
    assert zero < solved
    assert solved > 0
