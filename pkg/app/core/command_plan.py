"""Menus de commandes forensiques, rendu des plans et exécution."""
from dataclasses import dataclass
from typing import Dict, List, Mapping, Optional, Protocol, Sequence, Tuple
import functools
import json
import logging
import re
import subprocess
import time

from pydantic import BaseModel, ConfigDict, Field
from pydantic import ValidationError as PydanticValidationError

from app.config import settings
from app.core.hash_lookup import (
    DryRunHashClient,
    HashLookupClient,
    is_lookup_command,
    lookup_target,
    resolve_digest,
)
from app.exceptions import HashLookupError, ParseError, RunnerFailure, UnboundPlaceholder
from app.schemas import PLACEHOLDERS, MenuDocument, PlanStepDocument, TimingRecord

logger = logging.getLogger(__name__)

TRANSITIONAL_STATE = "transitional state"
ACTION_OUT_OF_LIST = "action out of list size"
SENTINELS = (TRANSITIONAL_STATE, ACTION_OUT_OF_LIST)
PLACEHOLDER_PATTERN = re.compile(r"\{([a-z_]+)\}")
RL_AGENT = "RL Agent"


@dataclass(frozen=True)
class CommandMenu:
    """Gabarits de commandes par état ; l'indice d'action sélectionne le gabarit."""
    entries: Mapping[int, Tuple[str, ...]]

    def __post_init__(self):
        for state, templates in self.entries.items():
            if not templates or any(not t.strip() for t in templates):
                raise ValueError(f"Menu invalide pour l'état {state}")

    @property
    def template_count(self) -> int:
        return sum(len(t) for t in self.entries.values())

    def placeholders(self) -> set:
        return {
            name
            for templates in self.entries.values()
            for template in templates
            for name in PLACEHOLDER_PATTERN.findall(template)
        }


class CommandContext(BaseModel):
    """Paramètres substitués dans les gabarits."""
    model_config = ConfigDict(frozen=True, extra="forbid")

    pid: int = Field(default=settings.COMMAND_PID, gt=0)
    image: str = settings.COMMAND_IMAGE
    profile: Optional[str] = settings.COMMAND_PROFILE
    outdir: str = settings.COMMAND_OUTDIR

    def as_mapping(self) -> Dict[str, str]:
        return {k: str(v) for k, v in self.model_dump().items() if v is not None}


@dataclass(frozen=True)
class RenderedCommand:
    text: str

    @property
    def is_sentinel(self) -> bool:
        return self.text in SENTINELS


@dataclass(frozen=True)
class PlanStep:
    state: int
    action: int
    command: RenderedCommand


@dataclass(frozen=True)
class CommandPlan:
    steps: Tuple[PlanStep, ...]
    provenance: str = ""

    def __len__(self) -> int:
        return len(self.steps)

    @property
    def sentinel_count(self) -> int:
        return sum(step.command.is_sentinel for step in self.steps)


def create_command(menu: CommandMenu, state: int, action: int, ctx: CommandContext) -> RenderedCommand:
    """Commande de (state, action) ou l'une des deux sentinelles."""
    templates = menu.entries.get(state)
    if templates is None:
        return RenderedCommand(TRANSITIONAL_STATE)
    if not 0 <= action < len(templates):
        return RenderedCommand(ACTION_OUT_OF_LIST)

    values = ctx.as_mapping()

    def substitute(match: re.Match) -> str:
        name = match.group(1)
        if name not in values:
            raise UnboundPlaceholder(f"Paramètre {{{name}}} absent du contexte (état {state}, action {action})")
        return values[name]

    return RenderedCommand(PLACEHOLDER_PATTERN.sub(substitute, templates[action]))


@functools.lru_cache(maxsize=1)
def default_menu() -> CommandMenu:
    """Menu livré : 109 gabarits sur les états du chemin principal et le terminal."""
    from app.core.default_workflow import default_menu_entries

    return CommandMenu({state: tuple(t) for state, t in default_menu_entries().items()})


def load_menu(source: str) -> CommandMenu:
    """Charge un menu JSON {état: [gabarit, ...]}."""
    try:
        raw = json.loads(source)
    except json.JSONDecodeError as e:
        raise ParseError(e.lineno, e.msg) from e
    try:
        document = MenuDocument.model_validate(raw)
    except PydanticValidationError as e:
        raise ParseError(None, str(e.errors()[0]["msg"])) from e

    menu = CommandMenu({int(s): tuple(t) for s, t in sorted(document.root.items())})
    unknown = menu.placeholders() - set(PLACEHOLDERS)
    if unknown:
        raise ParseError(None, f"Paramètres inconnus dans le menu : {sorted(unknown)}")
    return menu


def serialize_menu(menu: CommandMenu) -> str:
    return json.dumps({str(s): list(t) for s, t in sorted(menu.entries.items())}, indent=2) + "\n"


def render_plan(
    trajectory: Sequence[Tuple[int, int]],
    menu: CommandMenu,
    ctx: CommandContext,
    provenance: str = "",
) -> CommandPlan:
    """Applique create_command à chaque pas de la trajectoire, dans l'ordre."""
    steps = tuple(
        PlanStep(state, action, create_command(menu, state, action, ctx))
        for state, action in trajectory
    )
    plan = CommandPlan(steps, provenance)
    if plan.sentinel_count:
        logger.warning(f"Plan avec {plan.sentinel_count} étape(s) sentinelle")
    return plan


def plan_to_jsonl(plan: CommandPlan) -> str:
    lines = [
        PlanStepDocument(
            state=step.state,
            action=step.action,
            command=step.command.text,
            sentinel=step.command.is_sentinel,
        ).model_dump_json()
        for step in plan.steps
    ]
    return "".join(line + "\n" for line in lines)


def load_plan_jsonl(source: str, provenance: str = "") -> CommandPlan:
    steps = []
    for number, line in enumerate(source.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            document = PlanStepDocument.model_validate_json(line)
        except PydanticValidationError as e:
            raise ParseError(number, str(e.errors()[0]["msg"])) from e
        steps.append(PlanStep(document.state, document.action, RenderedCommand(document.command)))
    return CommandPlan(tuple(steps), provenance)


# --- Exécution -------------------------------------------------------------------

@dataclass(frozen=True)
class RunOutcome:
    status: int
    seconds: float
    output: str


class CommandRunner(Protocol):
    def run(self, command: str) -> RunOutcome:
        ...


class DryRunRunner:
    """N'exécute rien : renvoie la commande, statut 0, 0.0 s."""

    def __init__(self, hash_client: Optional[HashLookupClient] = None):
        self.hash_client = hash_client or DryRunHashClient()

    def run(self, command: str) -> RunOutcome:
        if is_lookup_command(command):
            verdict = self.hash_client.lookup(lookup_target(command))
            return RunOutcome(0, 0.0, f"{verdict.digest} {verdict.verdict}")
        return RunOutcome(0, 0.0, command)


class ShellRunner:
    def __init__(self, hash_client: HashLookupClient, timeout: Optional[float] = None):
        """
        Exécute les commandes dans un shell.

        Args:
            hash_client: Client utilisé pour les étapes de soumission de condensat
            timeout: Timeout par commande en secondes
        """
        self.hash_client = hash_client
        self.timeout = timeout

    def run(self, command: str) -> RunOutcome:
        start = time.perf_counter()
        if is_lookup_command(command):
            try:
                verdict = self.hash_client.lookup(resolve_digest(lookup_target(command)))
            except HashLookupError as e:
                return RunOutcome(1, time.perf_counter() - start, str(e))
            return RunOutcome(0, time.perf_counter() - start, f"{verdict.digest} {verdict.verdict}")

        try:
            completed = subprocess.run(
                command, shell=True, capture_output=True, text=True, timeout=self.timeout
            )
        except subprocess.TimeoutExpired:
            return RunOutcome(124, time.perf_counter() - start, "timeout")
        return RunOutcome(completed.returncode, time.perf_counter() - start, completed.stdout + completed.stderr)


@dataclass(frozen=True)
class ExecutionEntry:
    step_index: int
    status: int
    seconds: float
    output: str


def execute_plan(
    plan: CommandPlan,
    runner: Optional[CommandRunner] = None,
    skip_sentinels: bool = True,
    fail_fast: bool = False,
) -> List[ExecutionEntry]:
    """
    Exécute le plan dans l'ordre.

    Les statuts non nuls sont consignés dans le journal ; avec fail_fast,
    le premier lève RunnerFailure.
    """
    runner = runner or DryRunRunner()
    log = []
    for index, step in enumerate(plan.steps):
        if skip_sentinels and step.command.is_sentinel:
            continue
        outcome = runner.run(step.command.text)
        log.append(ExecutionEntry(index, outcome.status, outcome.seconds, outcome.output))
        if outcome.status != 0:
            logger.warning(f"Étape {index} (état {step.state}) : statut {outcome.status}")
            if fail_fast:
                raise RunnerFailure(index, outcome.status)
    logger.info(f"Plan exécuté : {len(log)} étape(s)")
    return log


def timing_records(
    plan: CommandPlan,
    log: Sequence[ExecutionEntry],
    family: str,
    executor: str = RL_AGENT,
) -> List[TimingRecord]:
    """Journal d'exécution au format du jeu de timings ; une commande répétée cumule ses durées."""
    totals: Dict[str, float] = {}
    for entry in log:
        command = plan.steps[entry.step_index].command.text
        totals[command] = totals.get(command, 0.0) + entry.seconds
    return [
        TimingRecord(family=family, executor=executor, command=command, seconds=seconds)
        for command, seconds in totals.items()
    ]
