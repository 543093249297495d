"""Interface en ligne de commande : validate-graph, train, sweep, eval, plan, run-plan, report."""
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, FrozenSet, List, Optional, Sequence, Tuple
import argparse
import json
import logging
import sys

import numpy as np
import pandas as pd
from pydantic import ValidationError as PydanticValidationError

from app.config import configure_logging, settings
from app.core.command_plan import (
    CommandContext,
    CommandPlan,
    DryRunRunner,
    ShellRunner,
    default_menu,
    execute_plan,
    load_menu,
    load_plan_jsonl,
    plan_to_jsonl,
    render_plan,
    timing_records,
)
from app.core.hash_lookup import DryRunHashClient, VirusTotalClient
from app.core.mdp_env import RewardVariant, VariantKind, make_env, parse_variant
from app.core.policy_eval import (
    ARGMAX_OF_PROBS,
    SAMPLE,
    IdealActionList,
    check_ideal_list,
    compute_ideal_list,
    default_ideal_list,
    format_accuracy,
    get_acc,
    greedy_policy,
    load_ideal_list,
    simulate_trajectory,
    softmax_policy,
)
from app.core.qlearn import train
from app.core.reporting import (
    FIXTURE_TIMINGS,
    AccuracyRow,
    TimingDataset,
    accuracy_frame,
    accuracy_series,
    command_timing_series,
    compare_totals,
    convergence_plot_data,
    emit_report,
    grand_totals,
    load_accuracy,
    load_convergence_table,
    load_timings,
    reward_dynamics_series,
    serialize_timings,
    totals_frame,
    totals_series,
    write_frame,
)
from app.core.sweep import (
    convergence_frame,
    convergence_table,
    discover_runs,
    reward_dynamics_frame,
    reward_dynamics_from_dir,
    run_sweep,
    write_run,
    write_sweep,
)
from app.core.workflow_graph import (
    WorkflowGraph,
    default_graph,
    graph_hash,
    load_graph,
    serialize_graph,
    validate,
)
from app.exceptions import (
    ConfigurationError,
    DuplicateRecord,
    ForensicRLError,
    LengthMismatch,
    MissingLearningRate,
    ParseError,
    ValidationError,
)
from app.schemas import CliConfig, SweepConfig, TrainConfig

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_VIOLATION = 1
EXIT_USAGE = 2

# option CLI -> champ de TrainConfig
TRAIN_OPTIONS = {
    "alpha": "alpha",
    "gamma": "gamma",
    "epsilon0": "epsilon0",
    "epsilon_min": "epsilon_min",
    "epsilon_decay": "epsilon_decay_value",
    "step_decay": "step_decay",
    "episodes": "episodes",
    "max_steps": "max_steps_per_episode",
    "threshold": "convergence_threshold",
    "convergence_mode": "convergence_mode",
    "convergence_window": "convergence_window",
}


def first_set(*values: Any) -> Any:
    for value in values:
        if value is not None:
            return value
    return None


def parse_pair(text: str) -> Tuple[int, int]:
    """'s:a' -> (s, a)."""
    try:
        left, right = text.split(":")
        return int(left), int(right)
    except ValueError:
        raise argparse.ArgumentTypeError(f"Couple attendu sous la forme s:a, reçu '{text}'")


def parse_float_list(text: str) -> List[float]:
    try:
        return [float(part) for part in text.split(",") if part.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"Liste de réels invalide : '{text}'")


def load_cli_config(path: Optional[Path]) -> CliConfig:
    if path is None:
        return CliConfig()
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise ParseError(e.lineno, f"{path}: {e.msg}") from e
    try:
        config = CliConfig.model_validate(raw)
    except PydanticValidationError as e:
        first = e.errors()[0]
        raise ParseError(None, f"{path}: {'.'.join(str(p) for p in first['loc'])}: {first['msg']}") from e
    missing = [str(p) for p in config.referenced_paths() if not p.exists()]
    if missing:
        raise ConfigurationError(f"Chemins introuvables : {', '.join(missing)}")
    return config


@dataclass
class Invocation:
    """Arguments + fichier de configuration ; les options priment sur le fichier."""
    args: argparse.Namespace
    config: CliConfig

    @property
    def seed(self) -> int:
        return first_set(self.args.seed, self.config.seed, settings.RL_SEED)

    def out_dir(self, default_name: str) -> Path:
        return Path(first_set(self.args.out, self.config.out_dir, settings.OUTPUT_DIR / default_name))

    def graph(self) -> WorkflowGraph:
        path = first_set(self.args.graph, self.config.graph_path)
        if path is None:
            return default_graph()
        return load_graph(Path(path).read_text(encoding="utf-8"))

    def variant(self) -> RewardVariant:
        name = first_set(getattr(self.args, "variant", None), self.config.variant, VariantKind.BASELINE.value)
        try:
            return parse_variant(name)
        except ValueError as e:
            raise ConfigurationError(str(e)) from e

    def train_config(self) -> TrainConfig:
        values: Dict[str, Any] = dict(self.config.train)
        for option, field_name in TRAIN_OPTIONS.items():
            flag = getattr(self.args, option, None)
            if flag is not None:
                values[field_name] = flag
        values["seed"] = self.seed
        return TrainConfig.model_validate(values)

    def sweep_config(self) -> SweepConfig:
        values: Dict[str, Any] = {k: v for k, v in self.config.sweep.items() if k != "base"}
        if self.args.lrs is not None:
            values["learning_rates"] = self.args.lrs
        if self.args.envs is not None:
            values["environment_names"] = self.args.envs
        if self.args.seeds_per_cell is not None:
            values["seeds_per_cell"] = self.args.seeds_per_cell
        values["base"] = self.train_config()
        return SweepConfig.model_validate(values)

    def ideal_list(self, graph: WorkflowGraph) -> IdealActionList:
        path = first_set(getattr(self.args, "ideal", None), self.config.ideal_path)
        if path is not None:
            ideal = load_ideal_list(Path(path).read_text(encoding="utf-8"))
        elif self.args.graph is None and self.config.graph_path is None:
            ideal = default_ideal_list()
        else:
            ideal = compute_ideal_list(graph)
        if len(ideal) != graph.num_states:
            raise LengthMismatch(f"La liste idéale couvre {len(ideal)} états, le graphe en a {graph.num_states}")
        return ideal

    def watch_pairs(self, graph: WorkflowGraph) -> FrozenSet[Tuple[int, int]]:
        if self.args.watch:
            return frozenset(self.args.watch)
        return frozenset((s, 0) for s in graph.milestones if not graph.is_terminal(s))


# --- Sous-commandes -----------------------------------------------------------------

def cmd_validate_graph(inv: Invocation) -> int:
    try:
        graph = inv.graph()
        violations = validate(graph)
    except ValidationError as e:
        violations = e.violations
    if violations:
        for violation in violations:
            print(violation)
        return EXIT_VIOLATION

    if inv.args.describe:
        for state in range(graph.num_states):
            print(f"{state}\t{graph.label(state)}")
    if inv.args.export:
        Path(inv.args.export).write_text(serialize_graph(graph), encoding="utf-8")
    print(
        f"OK: {graph.num_states} états, {graph.num_actions} actions, "
        f"{graph.populated_pairs} emplacements de commande"
    )
    return EXIT_OK


def cmd_train(inv: Invocation) -> int:
    graph = inv.graph()
    variant = inv.variant()
    config = inv.train_config()
    watch = inv.watch_pairs(graph)

    env = make_env(graph, variant)
    result = train(env, config, watch)
    out_dir = inv.out_dir("train")
    write_run(out_dir, result, env.name, config, graph_hash(graph), watch)

    print(
        f"{env.name} alpha={config.alpha:g} converged={result.converged} "
        f"episodes_to_convergence={result.episodes_to_convergence} episodes_run={result.episodes_run}"
    )
    return EXIT_OK


def cmd_sweep(inv: Invocation) -> int:
    graph = inv.graph()
    config = inv.sweep_config()
    watch = inv.watch_pairs(graph)

    result = run_sweep(graph, config, jobs=inv.args.jobs, watch_pairs=watch)
    write_sweep(result, graph, inv.out_dir("sweep"), watch)
    table = convergence_frame(convergence_table(result))
    print(table.to_csv(index=False, float_format="%.12g", lineterminator="\n"), end="")
    return EXIT_OK


def cmd_eval(inv: Invocation) -> int:
    graph = inv.graph()
    ideal = inv.ideal_list(graph)
    runs_dir = Path(first_set(inv.args.runs, settings.OUTPUT_DIR / "sweep"))
    runs = discover_runs(runs_dir) if runs_dir.is_dir() else []
    if not runs:
        raise ConfigurationError(f"Aucun entraînement trouvé sous {runs_dir}")

    rng = np.random.default_rng(inv.seed)
    scores: Dict[Tuple[str, float], List[float]] = {}
    for run in runs:
        if run.q_table.shape != (graph.num_states, graph.num_actions):
            raise LengthMismatch(f"{run.path}: table Q de forme {run.q_table.shape}")
        if inv.args.softmax is None:
            policy = greedy_policy(run.q_table)
        else:
            mode = SAMPLE if inv.args.softmax == "sample" else ARGMAX_OF_PROBS
            policy = softmax_policy(run.q_table, mode, rng)
        accuracy = get_acc(ideal.actions, policy)
        scores.setdefault((run.environment_name, run.learning_rate), []).append(accuracy)

    rows = [AccuracyRow(env, lr, float(np.mean(values))) for (env, lr), values in sorted(scores.items())]
    out_dir = Path(first_set(inv.args.out, inv.config.out_dir, runs_dir))
    write_frame(accuracy_frame(rows), out_dir / "accuracy.csv")

    for row in rows:
        print(f"{row.environment_name}\t{row.learning_rate:g}\t{format_accuracy(row.accuracy)}")
    best: Dict[str, AccuracyRow] = {}
    for row in rows:
        # Égalité : le plus petit learning rate est conservé
        if row.environment_name not in best or row.accuracy > best[row.environment_name].accuracy:
            best[row.environment_name] = row
    for env, row in best.items():
        print(f"best {env}: lr={row.learning_rate:g} ({format_accuracy(row.accuracy)})")
    return EXIT_OK


def build_plan(inv: Invocation) -> CommandPlan:
    graph = inv.graph()
    ideal = inv.ideal_list(graph)
    check_ideal_list(graph, ideal)
    menu_path = first_set(inv.args.menu, inv.config.menu_path)
    menu = load_menu(Path(menu_path).read_text(encoding="utf-8")) if menu_path else default_menu()

    ctx_values = {
        "pid": inv.args.pid,
        "image": inv.args.image,
        "profile": inv.args.profile,
        "outdir": inv.args.case_dir,
    }
    ctx = CommandContext(**{k: v for k, v in ctx_values.items() if v is not None})

    trajectory = simulate_trajectory(graph, ideal, start=inv.args.start, max_hops=inv.args.max_hops)
    return render_plan(trajectory, menu, ctx, provenance=f"ideal-from-{inv.args.start}:{graph_hash(graph)}")


def cmd_plan(inv: Invocation) -> int:
    plan = build_plan(inv)
    if inv.args.strict and len(plan) and plan.sentinel_count == len(plan):
        print("Plan composé uniquement de sentinelles", file=sys.stderr)
        return EXIT_USAGE

    out_dir = inv.out_dir("plan")
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "plan.jsonl").write_text(plan_to_jsonl(plan), encoding="utf-8")
    for step in plan.steps:
        print(f"{step.state}\t{step.action}\t{step.command.text}")
    return EXIT_OK


def cmd_run_plan(inv: Invocation) -> int:
    args = inv.args
    if args.plan:
        plan = load_plan_jsonl(Path(args.plan).read_text(encoding="utf-8"), provenance=str(args.plan))
    else:
        plan = build_plan(inv)

    if args.runner == "shell":
        if not args.i_understand_this_executes_commands:
            raise ConfigurationError(
                "--runner shell exige --i-understand-this-executes-commands"
            )
        hash_client = VirusTotalClient() if settings.VT_API_KEY else DryRunHashClient()
        runner = ShellRunner(hash_client)
        logger.warning("Exécution réelle des commandes du plan")
    else:
        runner = DryRunRunner()

    log = execute_plan(plan, runner, skip_sentinels=not args.keep_sentinels, fail_fast=args.fail_fast)

    out_dir = inv.out_dir("run")
    frame = pd.DataFrame(
        [
            (e.step_index, plan.steps[e.step_index].state, plan.steps[e.step_index].action, e.status, e.seconds)
            for e in log
        ],
        columns=["step_index", "state", "action", "status", "seconds"],
    )
    write_frame(frame, out_dir / "execution_log.csv")
    dataset = TimingDataset(tuple(timing_records(plan, log, args.family)))
    (out_dir / "timings.csv").write_text(serialize_timings(dataset), encoding="utf-8")

    failures = [e for e in log if e.status != 0]
    print(f"{len(log)} étape(s) exécutée(s), {len(failures)} en échec")
    return EXIT_VIOLATION if failures else EXIT_OK


def cmd_report(inv: Invocation) -> int:
    args = inv.args
    out_dir = inv.out_dir("report")
    timings_path = Path(first_set(args.timings, inv.config.timing_path, FIXTURE_TIMINGS))
    dataset = load_timings(timings_path.read_text(encoding="utf-8"))

    totals = compare_totals(dataset)
    write_frame(totals_frame(totals), out_dir / "totals.csv")
    table_series = totals_series(totals)

    if args.sweep:
        sweep_dir = Path(args.sweep)
        rows = load_convergence_table(sweep_dir / "convergence_table.csv")
        write_frame(convergence_frame(rows), out_dir / "convergence.csv")
        table_series += convergence_plot_data(rows)

        first, last = args.window
        dynamics = reward_dynamics_from_dir(sweep_dir, args.lr, (first, last))
        write_frame(reward_dynamics_frame(dynamics, args.lr), out_dir / "reward_dynamics.csv")
        table_series += reward_dynamics_series(dynamics, args.lr)

    if args.accuracy:
        accuracy_rows = load_accuracy(Path(args.accuracy))
        write_frame(accuracy_frame(accuracy_rows), out_dir / "accuracy.csv")
        table_series += accuracy_series(accuracy_rows)

    if args.svg:
        emit_report(table_series, "svg", out_dir)
    if args.series:
        per_command = command_timing_series(dataset)
        emit_report(table_series + per_command, "csv", out_dir / "series")
        if args.svg:
            emit_report(per_command, "svg", out_dir / "series")

    for executor, total in grand_totals(totals):
        print(f"{executor}\t{total:.12g}")
    return EXIT_OK


# --- Parseur ----------------------------------------------------------------------

def _add_train_options(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--alpha", type=float, help="Learning rate")
    parser.add_argument("--gamma", type=float, help="Facteur d'actualisation")
    parser.add_argument("--epsilon0", type=float)
    parser.add_argument("--epsilon-min", dest="epsilon_min", type=float)
    parser.add_argument("--epsilon-decay", dest="epsilon_decay", type=float,
                        help="Décroissance d'epsilon par épisode (x0.5)")
    parser.add_argument("--step-decay", dest="step_decay", type=float)
    parser.add_argument("--episodes", type=int)
    parser.add_argument("--max-steps", dest="max_steps", type=int)
    parser.add_argument("--threshold", type=float, help="Seuil de convergence")
    parser.add_argument("--convergence-mode", dest="convergence_mode", choices=["paper", "stable"])
    parser.add_argument("--convergence-window", dest="convergence_window", type=int)
    parser.add_argument("--watch", type=parse_pair, action="append", help="Couple suivi s:a (répétable)")


def _add_plan_options(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--ideal", type=Path, help="Liste idéale JSON")
    parser.add_argument("--menu", type=Path, help="Menu de commandes JSON")
    parser.add_argument("--pid", type=int)
    parser.add_argument("--image")
    parser.add_argument("--profile")
    parser.add_argument("--case-dir", dest="case_dir", help="Valeur de {outdir} dans les gabarits")
    parser.add_argument("--start", type=int, default=0)
    parser.add_argument("--max-hops", dest="max_hops", type=int, default=20)


def _window(text: str) -> Tuple[int, int]:
    first, last = parse_pair(text)
    if first > last:
        raise argparse.ArgumentTypeError("Fenêtre vide")
    return first, last


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="Fichier de configuration JSON")
    common.add_argument("--out", type=Path, help="Répertoire de sortie")
    common.add_argument("--seed", type=int, help="Graine (entier 64 bits)")
    common.add_argument("--graph", type=Path, help="Document de graphe JSON (défaut : graphe livré)")
    common.add_argument("--log-level", dest="log_level", default=None)

    parser = argparse.ArgumentParser("forensic-rl", description="Q-learning pour l'investigation forensique")
    subparsers = parser.add_subparsers(dest="command", required=True)

    p = subparsers.add_parser("validate-graph", parents=[common], help="Valider un graphe")
    p.add_argument("--describe", action="store_true", help="Lister les libellés d'états")
    p.add_argument("--export", type=Path, help="Écrire le document canonique du graphe")
    p.set_defaults(handler=cmd_validate_graph)

    p = subparsers.add_parser("train", parents=[common], help="Entraîner un agent")
    p.add_argument("--variant", help="baseline | terminal-bonus | time-penalty (ou env_new1..3)")
    _add_train_options(p)
    p.set_defaults(handler=cmd_train)

    p = subparsers.add_parser("sweep", parents=[common], help="Balayer les learning rates")
    p.add_argument("--lrs", type=parse_float_list, help="Learning rates séparés par des virgules")
    p.add_argument("--envs", type=lambda s: [x for x in s.split(",") if x], help="Environnements")
    p.add_argument("--seeds-per-cell", dest="seeds_per_cell", type=int)
    p.add_argument("--jobs", type=int, default=1)
    _add_train_options(p)
    p.set_defaults(handler=cmd_sweep)

    p = subparsers.add_parser("eval", parents=[common], help="Précision des politiques apprises")
    p.add_argument("--runs", type=Path, help="Répertoire de sweep ou d'entraînement")
    p.add_argument("--ideal", type=Path, help="Liste idéale JSON")
    p.add_argument("--softmax", nargs="?", const="argmax", choices=["argmax", "sample"])
    p.set_defaults(handler=cmd_eval)

    p = subparsers.add_parser("plan", parents=[common], help="Rendre le plan de commandes")
    _add_plan_options(p)
    p.add_argument("--strict", action="store_true")
    p.set_defaults(handler=cmd_plan)

    p = subparsers.add_parser("run-plan", parents=[common], help="Exécuter un plan")
    _add_plan_options(p)
    p.add_argument("--plan", type=Path, help="Plan JSON lines (défaut : plan idéal)")
    p.add_argument("--runner", choices=["dry-run", "shell"], default="dry-run")
    p.add_argument("--i-understand-this-executes-commands", action="store_true")
    p.add_argument("--family", default="case", help="Famille inscrite dans le journal de timings")
    p.add_argument("--fail-fast", dest="fail_fast", action="store_true")
    p.add_argument("--keep-sentinels", dest="keep_sentinels", action="store_true")
    p.set_defaults(handler=cmd_run_plan)

    p = subparsers.add_parser("report", parents=[common], help="Tables et figures")
    p.add_argument("--timings", type=Path, help="CSV de timings (défaut : jeu livré)")
    p.add_argument("--sweep", type=Path, help="Répertoire de sweep")
    p.add_argument("--accuracy", type=Path, help="accuracy.csv produit par eval")
    p.add_argument("--lr", type=float, default=0.4, help="Learning rate des courbes de récompense")
    p.add_argument("--window", type=_window, default=(3, 100), help="Fenêtre d'épisodes first:last")
    p.add_argument("--svg", action="store_true")
    p.add_argument("--series", action="store_true", help="Un CSV par série")
    p.set_defaults(handler=cmd_report)

    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)

    configure_logging(args.log_level)
    try:
        inv = Invocation(args, load_cli_config(args.config))
        return args.handler(inv)
    except ValidationError as e:
        for violation in e.violations:
            print(violation)
        return EXIT_VIOLATION
    except (
        ParseError, ConfigurationError, DuplicateRecord, LengthMismatch, MissingLearningRate, PydanticValidationError
    ) as e:
        print(f"erreur : {e}", file=sys.stderr)
        return EXIT_USAGE
    except FileNotFoundError as e:
        print(f"erreur : {e}", file=sys.stderr)
        return EXIT_USAGE
    except ForensicRLError as e:
        logger.error(f"Échec de {args.command} : {str(e)}", exc_info=True)
        print(f"erreur : {e}", file=sys.stderr)
        return EXIT_VIOLATION
