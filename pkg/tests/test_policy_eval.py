import numpy as np
import pytest

from app.core.default_workflow import PATH_STATES
from app.core.policy_eval import (
    IdealActionList,
    check_ideal_list,
    compute_ideal_list,
    default_ideal_list,
    format_accuracy,
    get_acc,
    greedy_policy,
    ideal_from_qtable,
    landing_state,
    load_ideal_list,
    serialize_ideal_list,
    simulate_trajectory,
    softmax_policy,
    stable_softmax,
)
from app.exceptions import LandingMismatch, LengthMismatch, NonFiniteInput, ParseError
from conftest import STEP, make_graph


def test_greedy_policy_ties_to_lowest():
    q = np.array([[0.0, 0.0, 0.0], [0.1, 0.3, 0.3], [-1.0, -2.0, -0.5]])
    assert greedy_policy(q).tolist() == [0, 1, 2]


def test_stable_softmax():
    probs = stable_softmax([1.0, 2.0, 3.0])
    assert probs.sum() == pytest.approx(1.0)
    assert probs[2] > probs[1] > probs[0]
    assert stable_softmax([1000.0, 1001.0]) == pytest.approx(stable_softmax([0.0, 1.0]))
    assert stable_softmax([-5.0]) == pytest.approx([1.0])


def test_stable_softmax_rejects_bad_input():
    with pytest.raises(NonFiniteInput):
        stable_softmax([0.0, np.nan])
    with pytest.raises(NonFiniteInput):
        stable_softmax([np.inf, 1.0])
    with pytest.raises(ValueError):
        stable_softmax([])


def test_softmax_policy_argmax_matches_greedy():
    rng = np.random.default_rng(4)
    q = rng.normal(size=(30, 10))
    assert softmax_policy(q).tolist() == greedy_policy(q).tolist()


def test_softmax_policy_breaks_rounded_ties_on_q():
    # Les deux probabilités valent 0.5 après arrondi
    q = np.array([[0.0, 1e-18]])
    assert softmax_policy(q).tolist() == [1]


def test_softmax_policy_sample_mode():
    q = np.array([[0.0, 50.0], [50.0, 0.0]])
    policy = softmax_policy(q, mode="sample", rng=np.random.default_rng(1))
    assert policy.tolist() == [1, 0]
    with pytest.raises(ValueError):
        softmax_policy(q, mode="sample")
    with pytest.raises(ValueError):
        softmax_policy(q, mode="boltzmann")


def test_get_acc():
    assert get_acc([1, 2, 3], [1, 0, 3]) == pytest.approx(2 / 3)
    assert get_acc([4, 4], [4, 4]) == 1.0
    assert get_acc(np.array([0, 1]), np.array([1, 0])) == 0.0
    with pytest.raises(LengthMismatch):
        get_acc([1, 2], [1])
    with pytest.raises(ValueError):
        get_acc([], [])


def test_format_accuracy():
    assert format_accuracy(2 / 3) == "0.66667"
    assert format_accuracy(1.0) == "1.00000"


def test_landing_state(risky_graph):
    assert landing_state(risky_graph, 0, 0) == 1
    assert landing_state(risky_graph, 2, 0) == 2
    tie = make_graph(3, 1, {(0, 0): [(0.5, 2, 2.0), (0.5, 1, STEP)], (1, 0): [(1.0, 2, 2.0)]}, [2])
    assert landing_state(tie, 0, 0) == 1


def test_ideal_from_qtable(chain_graph):
    ideal = ideal_from_qtable(chain_graph, np.zeros((3, 1)))
    assert ideal.actions == (0, 0, 0)
    assert ideal.landing == (1, 2, 2)


def test_ideal_list_length_mismatch():
    with pytest.raises(LengthMismatch):
        IdealActionList((0, 1), (1,))


def test_check_ideal_list(chain_graph):
    with pytest.raises(LengthMismatch):
        check_ideal_list(chain_graph, IdealActionList((0, 0), (1, 2)))
    with pytest.raises(LandingMismatch):
        check_ideal_list(chain_graph, IdealActionList((0, 0, 0), (2, 2, 2)))
    with pytest.raises(LandingMismatch):
        check_ideal_list(chain_graph, IdealActionList((0, 3, 0), (1, 2, 2)))


def test_simulate_trajectory_reaches_terminal(chain_graph):
    ideal = IdealActionList((0, 0, 0), (1, 2, 2))
    assert simulate_trajectory(chain_graph, ideal) == [(0, 0), (1, 0), (2, 0)]


def test_simulate_trajectory_hop_limit(self_loop_graph):
    ideal = IdealActionList((0, 0), (0, 1))
    trajectory = simulate_trajectory(self_loop_graph, ideal, max_hops=3)
    assert trajectory == [(0, 0)] * 4


def test_simulate_trajectory_validates_first(chain_graph):
    with pytest.raises(LandingMismatch):
        simulate_trajectory(chain_graph, IdealActionList((0, 0, 0), (0, 2, 2)))


def test_default_ideal_list_follows_main_path(workflow):
    ideal = default_ideal_list()
    assert len(ideal) == 67
    check_ideal_list(workflow, ideal)
    trajectory = simulate_trajectory(workflow, ideal)
    assert [state for state, _ in trajectory] == list(PATH_STATES)
    assert trajectory[-1][0] == 66


def test_default_ideal_list_matches_value_iteration(workflow):
    assert default_ideal_list() == compute_ideal_list(workflow)


def test_untrained_table_misses_the_ideal_list(workflow):
    # Les états transitoires ne reviennent pas tous par l'action 0
    zero = greedy_policy(np.zeros((workflow.num_states, workflow.num_actions)))
    assert get_acc(default_ideal_list().actions, zero) < 0.6


def test_ideal_list_documents():
    ideal = IdealActionList((0, 1, 0), (1, 2, 2))
    assert load_ideal_list(serialize_ideal_list(ideal)) == ideal

    with pytest.raises(ParseError):
        load_ideal_list('{"actions": [0, 1], "landing": [1]}')
    with pytest.raises(ParseError):
        load_ideal_list('{"actions": [0], ')


def test_softmax_examples():
    assert stable_softmax([0.0, 0.0]) == pytest.approx([0.5, 0.5])
    assert stable_softmax([0.0, np.log(3.0)]) == pytest.approx([0.25, 0.75], abs=1e-12)
    assert stable_softmax([1000.0, 1001.0]) == pytest.approx([0.26894142, 0.73105858], abs=1e-8)
