"""Balayage learning rates x environnements et tables de convergence."""
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, FrozenSet, List, Optional, Tuple
import json
import logging
import math

import numpy as np
import pandas as pd

from app.core.mdp_env import make_env, parse_variant
from app.core.qlearn import CSV_FLOAT_FORMAT, TrainResult, read_qtable, train, write_telemetry
from app.core.workflow_graph import WorkflowGraph, graph_hash
from app.exceptions import MissingLearningRate
from app.schemas import RunManifest, SweepConfig, SweepManifest, TrainConfig

logger = logging.getLogger(__name__)

DEFAULT_REWARD_WINDOW = (3, 100)

CellKey = Tuple[str, float, int]


def format_lr(lr: float) -> str:
    """Forme courte du learning rate ; repr quand la forme courte perd des chiffres."""
    short = f"{lr:g}"
    return short if float(short) == lr else repr(lr)


def cell_name(key: CellKey) -> str:
    env_name, lr, seed_index = key
    return f"{env_name}_{format_lr(lr)}_{seed_index}"


def derive_cell_seed(base_seed: int, env_index: int, lr_index: int, seed_index: int) -> int:
    """Graine 64 bits d'une cellule, fonction de sa seule position dans la grille."""
    sequence = np.random.SeedSequence(base_seed, spawn_key=(env_index, lr_index, seed_index))
    return int(sequence.generate_state(1, dtype=np.uint64)[0])


@dataclass(frozen=True)
class CellSpec:
    key: CellKey
    config: TrainConfig


@dataclass
class SweepResult:
    config: SweepConfig
    cells: Dict[CellKey, TrainResult] = field(default_factory=dict)
    cell_configs: Dict[CellKey, TrainConfig] = field(default_factory=dict)


@dataclass(frozen=True)
class ConvergenceRow:
    environment_name: str
    learning_rate: float
    median_episodes: float
    converged_fraction: float


def plan_cells(config: SweepConfig) -> List[CellSpec]:
    """Cellules de la grille dans l'ordre (env, lr, graine)."""
    specs = []
    for env_index, env_name in enumerate(config.environment_names):
        for lr_index, lr in enumerate(config.learning_rates):
            for seed_index in range(config.seeds_per_cell):
                seed = derive_cell_seed(config.base.seed, env_index, lr_index, seed_index)
                cell_config = config.base.model_copy(update={"alpha": lr, "seed": seed})
                specs.append(CellSpec((env_name, lr, seed_index), cell_config))
    return specs


def run_cell(
    graph: WorkflowGraph,
    spec: CellSpec,
    watch_pairs: FrozenSet[Tuple[int, int]] = frozenset(),
) -> TrainResult:
    env_name = spec.key[0]
    variant = parse_variant(env_name)
    return train(make_env(graph, variant), spec.config, watch_pairs)


def _run_cell_args(args) -> TrainResult:
    return run_cell(*args)


def run_sweep(
    graph: WorkflowGraph,
    config: SweepConfig,
    jobs: int = 1,
    watch_pairs: FrozenSet[Tuple[int, int]] = frozenset(),
) -> SweepResult:
    """
    Entraîne chaque cellule (environnement, learning rate, graine).

    Args:
        graph: Graphe de workflow partagé
        config: Grille et configuration de base
        jobs: Nombre de processus ; 1 exécute tout dans le processus courant

    Returns:
        SweepResult indexé par (environnement, learning rate, indice de graine)
    """
    specs = plan_cells(config)
    logger.info(f"Sweep : {len(specs)} cellules, {jobs} worker(s)")

    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as executor:
            results = list(executor.map(_run_cell_args, [(graph, spec, watch_pairs) for spec in specs]))
    else:
        results = [run_cell(graph, spec, watch_pairs) for spec in specs]

    sweep = SweepResult(config=config)
    for spec, result in zip(specs, results):
        sweep.cells[spec.key] = result
        sweep.cell_configs[spec.key] = spec.config
    return sweep


def convergence_table(result: SweepResult) -> List[ConvergenceRow]:
    """Médiane des épisodes jusqu'à convergence par (env, lr).

    Une cellule non convergée compte pour le budget d'épisodes.
    """
    grouped: Dict[Tuple[str, float], List[TrainResult]] = {}
    for (env_name, lr, _seed), cell in result.cells.items():
        grouped.setdefault((env_name, lr), []).append(cell)

    budget = result.config.base.episodes
    rows = []
    for (env_name, lr), cells in sorted(grouped.items()):
        episodes = [
            cell.episodes_to_convergence if cell.converged else budget
            for cell in cells
        ]
        rows.append(ConvergenceRow(
            environment_name=env_name,
            learning_rate=lr,
            median_episodes=float(np.median(episodes)),
            converged_fraction=sum(cell.converged for cell in cells) / len(cells),
        ))
    return rows


def _find_lr(config: SweepConfig, lr: float) -> float:
    for candidate in config.learning_rates:
        if math.isclose(candidate, lr, rel_tol=1e-12, abs_tol=1e-15):
            return candidate
    raise MissingLearningRate(f"Learning rate {lr} absent du sweep")


def reward_dynamics(
    result: SweepResult,
    lr: float,
    window: Tuple[int, int] = DEFAULT_REWARD_WINDOW,
    seed_index: int = 0,
) -> Dict[str, List[Tuple[int, float]]]:
    """Récompense moyenne par pas, par environnement, sur les épisodes de la fenêtre (bornes incluses)."""
    lr = _find_lr(result.config, lr)
    first, last = window
    series: Dict[str, List[Tuple[int, float]]] = {}
    for env_name in result.config.environment_names:
        cell = result.cells[(env_name, lr, seed_index)]
        series[env_name] = [
            (episode, episodic_return / steps)
            for episodic_return, episode, steps in cell.telemetry.episode_rewards
            if first <= episode <= last and steps > 0
        ]
    return series


def convergence_frame(rows: List[ConvergenceRow]) -> pd.DataFrame:
    return pd.DataFrame(
        [(r.environment_name, r.learning_rate, r.median_episodes, r.converged_fraction) for r in rows],
        columns=["env", "lr", "median_episodes", "converged_fraction"],
    )


def write_run(
    out_dir: Path,
    result: TrainResult,
    env_name: str,
    config: TrainConfig,
    graph_digest: str,
    watch_pairs: FrozenSet[Tuple[int, int]] = frozenset(),
) -> None:
    """Télémétrie + manifest.json d'un entraînement."""
    write_telemetry(result, out_dir)
    manifest = RunManifest(
        variant=env_name,
        config=config,
        graph_hash=graph_digest,
        watch_pairs=[list(pair) for pair in sorted(watch_pairs)],
        converged=result.converged,
        episodes_to_convergence=result.episodes_to_convergence,
        episodes_run=result.episodes_run,
    )
    (Path(out_dir) / "manifest.json").write_text(manifest.model_dump_json(indent=2) + "\n", encoding="utf-8")


def write_sweep(
    result: SweepResult,
    graph: WorkflowGraph,
    out_dir: Path,
    watch_pairs: FrozenSet[Tuple[int, int]] = frozenset(),
) -> Path:
    """Écrit sweep.json, un répertoire par cellule et convergence_table.csv."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    digest = graph_hash(graph)

    names = []
    for key, cell in result.cells.items():
        name = cell_name(key)
        names.append(name)
        write_run(out_dir / name, cell, key[0], result.cell_configs[key], digest, watch_pairs)

    manifest = SweepManifest(config=result.config, graph_hash=digest, cells=names)
    (out_dir / "sweep.json").write_text(manifest.model_dump_json(indent=2) + "\n", encoding="utf-8")

    table_path = out_dir / "convergence_table.csv"
    convergence_frame(convergence_table(result)).to_csv(
        table_path, index=False, float_format=CSV_FLOAT_FORMAT, lineterminator="\n"
    )
    logger.info(f"Sweep écrit dans {out_dir}")
    return table_path


@dataclass(frozen=True)
class StoredRun:
    """Entraînement relu depuis le disque (sweep ou train)."""
    path: Path
    environment_name: str
    learning_rate: float
    seed_index: Optional[int]
    q_table: np.ndarray


def discover_runs(root: Path) -> List[StoredRun]:
    """Trouve les répertoires d'entraînement (manifest.json + qtable.csv) sous ``root``."""
    root = Path(root)
    candidates = [root] if (root / "manifest.json").exists() else sorted(
        p for p in root.iterdir() if p.is_dir() and (p / "manifest.json").exists()
    )
    runs = []
    for path in candidates:
        manifest = RunManifest.model_validate(json.loads((path / "manifest.json").read_text(encoding="utf-8")))
        suffix = path.name.rsplit("_", 1)[-1]
        runs.append(StoredRun(
            path=path,
            environment_name=manifest.variant,
            learning_rate=manifest.config.alpha,
            seed_index=int(suffix) if suffix.isdigit() and path != root else None,
            q_table=read_qtable(path / "qtable.csv"),
        ))
    return sorted(runs, key=lambda r: (r.environment_name, r.learning_rate, r.seed_index or 0))


def reward_dynamics_from_dir(
    sweep_dir: Path,
    lr: float,
    window: Tuple[int, int] = DEFAULT_REWARD_WINDOW,
    seed_index: int = 0,
) -> Dict[str, List[Tuple[int, float]]]:
    """Comme reward_dynamics, à partir d'un répertoire de sweep écrit sur disque."""
    sweep_dir = Path(sweep_dir)
    manifest = SweepManifest.model_validate(json.loads((sweep_dir / "sweep.json").read_text(encoding="utf-8")))
    lr = _find_lr(manifest.config, lr)
    first, last = window
    series: Dict[str, List[Tuple[int, float]]] = {}
    for env_name in manifest.config.environment_names:
        frame = pd.read_csv(sweep_dir / cell_name((env_name, lr, seed_index)) / "episode_rewards.csv")
        window_rows = frame[(frame["episode"] >= first) & (frame["episode"] <= last) & (frame["steps"] > 0)]
        series[env_name] = [
            (int(row["episode"]), float(row["return"]) / int(row["steps"]))
            for _, row in window_rows.iterrows()
        ]
    return series


def reward_dynamics_frame(dynamics: Dict[str, List[Tuple[int, float]]], lr: float) -> pd.DataFrame:
    return pd.DataFrame(
        [(env, lr, episode, value) for env, points in dynamics.items() for episode, value in points],
        columns=["env", "lr", "episode", "avg_reward"],
    )
