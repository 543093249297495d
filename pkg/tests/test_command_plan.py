import json

import pytest
from pydantic import ValidationError as PydanticValidationError

from app.core.command_plan import (
    ACTION_OUT_OF_LIST,
    TRANSITIONAL_STATE,
    CommandContext,
    CommandMenu,
    DryRunRunner,
    RunOutcome,
    ShellRunner,
    create_command,
    default_menu,
    execute_plan,
    load_menu,
    load_plan_jsonl,
    plan_to_jsonl,
    render_plan,
    serialize_menu,
    timing_records,
)
from app.core.hash_lookup import HashVerdict
from app.core.policy_eval import default_ideal_list, simulate_trajectory
from app.exceptions import ParseError, RunnerFailure, UnboundPlaceholder
from app.schemas import PLACEHOLDERS


class ScriptedRunner:
    """Runner de test : statuts et durées fixés à l'avance."""

    def __init__(self, statuses=None, seconds=1.5):
        self.statuses = list(statuses or [])
        self.seconds = seconds
        self.commands = []

    def run(self, command):
        self.commands.append(command)
        status = self.statuses.pop(0) if self.statuses else 0
        return RunOutcome(status, self.seconds, "")


class FixedHashClient:
    def __init__(self):
        self.digests = []

    def lookup(self, digest):
        self.digests.append(digest)
        return HashVerdict(digest=digest, malicious=True, source="test")


@pytest.fixture
def ctx():
    return CommandContext(pid=340, image="memdump.raw", profile="Win10x64_19041", outdir="output")


@pytest.fixture
def small_menu():
    return CommandMenu({0: ("echo {image}", "ls {outdir}"), 2: ("echo {pid}",)})


def test_default_menu_counts(workflow):
    menu = default_menu()
    assert menu.template_count == 109
    assert all(3 <= len(templates) <= 10 for templates in menu.entries.values())
    assert {s: len(t) for s, t in menu.entries.items()} == workflow.command_slots
    assert menu.placeholders() <= set(PLACEHOLDERS)


def test_create_command(ctx):
    menu = default_menu()
    command = create_command(menu, 25, 2, ctx)
    assert command.text == "python3 vol.py -f memdump.raw windows.cmdline --pid 340"
    assert not command.is_sentinel


def test_create_command_sentinels(ctx):
    menu = default_menu()
    assert create_command(menu, 1, 0, ctx).text == "transitional state"
    assert create_command(menu, 0, 9, ctx).text == "action out of list size"
    assert create_command(menu, 0, -1, ctx).text == ACTION_OUT_OF_LIST
    assert create_command(menu, 3, 0, ctx).is_sentinel


def test_create_command_unbound_placeholder():
    menu = CommandMenu({0: ("vol.py --profile={profile}",)})
    with pytest.raises(UnboundPlaceholder):
        create_command(menu, 0, 0, CommandContext(profile=None))


def test_context_rejects_bad_pid():
    with pytest.raises(PydanticValidationError):
        CommandContext(pid=0)


def test_render_plan_from_ideal_list(workflow, ctx):
    trajectory = simulate_trajectory(workflow, default_ideal_list())
    plan = render_plan(trajectory, default_menu(), ctx, provenance="ideal")
    assert len(plan) == len(trajectory)
    assert plan.sentinel_count == 0
    assert plan.steps[0].command.text == "git clone https://github.com/Velocidex/WinPmem.git output/WinPmem"
    assert plan.steps[-2].command.text == "vt-lookup output/pid.340.exe"


def test_render_plan_keeps_sentinels(small_menu, ctx):
    plan = render_plan([(0, 1), (1, 0), (2, 5)], small_menu, ctx)
    assert [s.command.text for s in plan.steps] == ["ls output", TRANSITIONAL_STATE, ACTION_OUT_OF_LIST]
    assert plan.sentinel_count == 2


def test_plan_jsonl(small_menu, ctx):
    plan = render_plan([(0, 0), (1, 0), (2, 0)], small_menu, ctx)
    text = plan_to_jsonl(plan)
    lines = text.splitlines()
    assert len(lines) == 3
    assert json.loads(lines[1]) == {"state": 1, "action": 0, "command": TRANSITIONAL_STATE, "sentinel": True}
    assert load_plan_jsonl(text).steps == plan.steps


def test_plan_jsonl_reports_line():
    with pytest.raises(ParseError) as exc:
        load_plan_jsonl('{"state": 0, "action": 0, "command": "ls", "sentinel": false}\n{"state": 1}\n')
    assert exc.value.line == 2


def test_menu_documents(small_menu):
    assert load_menu(serialize_menu(small_menu)).entries == small_menu.entries
    assert load_menu(serialize_menu(default_menu())).template_count == 109


def test_load_menu_errors():
    with pytest.raises(ParseError):
        load_menu('{"0": []}')
    with pytest.raises(ParseError):
        load_menu('{"0": ["echo {hostname}"]}')
    with pytest.raises(ParseError):
        load_menu('{"0": ')


def test_dry_run_runner():
    runner = DryRunRunner()
    assert runner.run("ls output") == RunOutcome(0, 0.0, "ls output")
    outcome = runner.run("vt-lookup output/pid.340.exe")
    assert outcome.status == 0
    assert outcome.output == "output/pid.340.exe unknown"


def test_shell_runner():
    runner = ShellRunner(hash_client=FixedHashClient(), timeout=10)
    ok = runner.run("echo bonjour")
    assert ok.status == 0
    assert ok.output.strip() == "bonjour"
    assert ok.seconds >= 0.0
    assert runner.run("exit 3").status == 3


def test_shell_runner_timeout():
    runner = ShellRunner(hash_client=FixedHashClient(), timeout=0.2)
    assert runner.run("sleep 5").status == 124


def test_shell_runner_hash_lookup(tmp_path):
    client = FixedHashClient()
    runner = ShellRunner(hash_client=client)
    digest = "A" * 64
    assert runner.run(f"vt-lookup {digest}").output == f"{'a' * 64} malicious"

    missing = runner.run(f"vt-lookup {tmp_path / 'absent.exe'}")
    assert missing.status == 1
    assert client.digests == ["a" * 64]


def test_execute_plan_skips_sentinels(small_menu, ctx):
    plan = render_plan([(0, 0), (1, 0), (2, 0)], small_menu, ctx)
    runner = ScriptedRunner()
    log = execute_plan(plan, runner)
    assert [entry.step_index for entry in log] == [0, 2]
    assert runner.commands == ["echo memdump.raw", "echo 340"]

    everything = execute_plan(plan, ScriptedRunner(), skip_sentinels=False)
    assert len(everything) == 3


def test_execute_plan_failures(small_menu, ctx):
    plan = render_plan([(0, 0), (0, 1), (2, 0)], small_menu, ctx)
    log = execute_plan(plan, ScriptedRunner(statuses=[0, 2, 0]))
    assert [entry.status for entry in log] == [0, 2, 0]

    with pytest.raises(RunnerFailure) as exc:
        execute_plan(plan, ScriptedRunner(statuses=[0, 2, 0]), fail_fast=True)
    assert (exc.value.step, exc.value.status) == (1, 2)


def test_execute_plan_defaults_to_dry_run(small_menu, ctx):
    plan = render_plan([(0, 0)], small_menu, ctx)
    (entry,) = execute_plan(plan)
    assert entry.output == "echo memdump.raw"
    assert entry.seconds == 0.0


def test_timing_records_sum_repeats(small_menu, ctx):
    plan = render_plan([(0, 0), (2, 0), (0, 0)], small_menu, ctx)
    log = execute_plan(plan, ScriptedRunner(seconds=1.5))
    records = timing_records(plan, log, family="WannaCry")
    assert [(r.command, r.seconds) for r in records] == [("echo memdump.raw", 3.0), ("echo 340", 1.5)]
    assert all(r.executor == "RL Agent" and r.family == "WannaCry" for r in records)


def test_dlllist_template(ctx):
    assert create_command(default_menu(), 30, 0, ctx).text == "python3 vol.py -f memdump.raw windows.dlllist --pid 340"
