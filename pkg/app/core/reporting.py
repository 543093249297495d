"""Jeux de timings, tables de comparaison et séries de figures (CSV / SVG)."""
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple
import io
import logging
import re

import matplotlib
import matplotlib.pyplot as plt
import pandas as pd
from pydantic import ValidationError as PydanticValidationError

from app.core.policy_eval import format_accuracy
from app.core.qlearn import CSV_FLOAT_FORMAT
from app.core.sweep import ConvergenceRow
from app.exceptions import DuplicateRecord, ParseError
from app.schemas import TimingRecord

logger = logging.getLogger(__name__)

plt.switch_backend("Agg")

FIXTURE_TIMINGS = Path(__file__).resolve().parent.parent / "data" / "timings_fixture.csv"
TIMING_COLUMNS = ["family", "executor", "command", "seconds"]
GRAND_TOTAL = "ALL"
SCATTER, LINE, BAR = "scatter", "line", "bar"

# SVG reproductibles : identifiants sans aléa, pas de date
matplotlib.rcParams["svg.hashsalt"] = "forensic-rl"


@dataclass(frozen=True)
class TimingDataset:
    records: Tuple[TimingRecord, ...] = ()

    def __post_init__(self):
        seen = set()
        for record in self.records:
            key = (record.family, record.executor, record.command)
            if key in seen:
                raise DuplicateRecord(f"Enregistrement dupliqué : {key}")
            seen.add(key)

    def __len__(self) -> int:
        return len(self.records)


@dataclass(frozen=True)
class TotalRow:
    executor: str
    family: str
    total_seconds: float


@dataclass(frozen=True)
class AccuracyRow:
    environment_name: str
    learning_rate: float
    accuracy: float


@dataclass(frozen=True)
class PlotSeries:
    name: str
    points: Tuple[Tuple[float, float], ...]
    kind: str = LINE
    group: Optional[str] = None
    x_label: str = "x"
    y_label: str = "y"

    def __post_init__(self):
        if self.kind not in (SCATTER, LINE, BAR):
            raise ValueError(f"Type de série inconnu : {self.kind}")


# --- Timings ------------------------------------------------------------------

def load_timings(source: str) -> TimingDataset:
    """Charge un CSV family,executor,command,seconds."""
    try:
        frame = pd.read_csv(io.StringIO(source), dtype=str, keep_default_na=False)
    except (pd.errors.EmptyDataError, pd.errors.ParserError) as e:
        raise ParseError(None, f"CSV de timings illisible : {e}") from e

    if list(frame.columns) != TIMING_COLUMNS:
        raise ParseError(1, f"En-tête attendu {','.join(TIMING_COLUMNS)}, reçu {','.join(frame.columns)}")

    records = []
    for position, row in enumerate(frame.to_dict(orient="records")):
        try:
            records.append(TimingRecord.model_validate(row))
        except PydanticValidationError as e:
            first = e.errors()[0]
            field = ".".join(str(p) for p in first["loc"])
            raise ParseError(position + 2, f"{field}: {first['msg']}") from e
    return TimingDataset(tuple(records))


def serialize_timings(dataset: TimingDataset) -> str:
    frame = pd.DataFrame([r.model_dump() for r in dataset.records], columns=TIMING_COLUMNS)
    return frame.to_csv(index=False, lineterminator="\n")


def compare_totals(dataset: TimingDataset) -> List[TotalRow]:
    """
    Totaux par (exécuteur, famille) puis total général par exécuteur.

    Les sommes suivent l'ordre des enregistrements.
    """
    per_family: Dict[Tuple[str, str], float] = {}
    per_executor: Dict[str, float] = {}
    for record in dataset.records:
        key = (record.executor, record.family)
        per_family[key] = per_family.get(key, 0.0) + record.seconds
        per_executor[record.executor] = per_executor.get(record.executor, 0.0) + record.seconds

    rows = []
    for executor in sorted(per_executor):
        for (ex, family), total in sorted(per_family.items()):
            if ex == executor:
                rows.append(TotalRow(executor, family, total))
        rows.append(TotalRow(executor, GRAND_TOTAL, per_executor[executor]))
    return rows


def grand_totals(rows: Iterable[TotalRow]) -> List[Tuple[str, float]]:
    """Exécuteurs triés par total général croissant."""
    totals = [(r.executor, r.total_seconds) for r in rows if r.family == GRAND_TOTAL]
    return sorted(totals, key=lambda item: (item[1], item[0]))


def totals_frame(rows: Sequence[TotalRow]) -> pd.DataFrame:
    return pd.DataFrame(
        [(r.executor, r.family, r.total_seconds) for r in rows],
        columns=["executor", "family", "total_seconds"],
    )


def accuracy_frame(rows: Sequence[AccuracyRow]) -> pd.DataFrame:
    return pd.DataFrame(
        [(r.environment_name, r.learning_rate, format_accuracy(r.accuracy)) for r in rows],
        columns=["env", "lr", "accuracy"],
    )


def load_accuracy(path: Path) -> List[AccuracyRow]:
    frame = pd.read_csv(path)
    return [AccuracyRow(str(r["env"]), float(r["lr"]), float(r["accuracy"])) for _, r in frame.iterrows()]


def load_convergence_table(path: Path) -> List[ConvergenceRow]:
    frame = pd.read_csv(path)
    return [
        ConvergenceRow(str(r["env"]), float(r["lr"]), float(r["median_episodes"]), float(r["converged_fraction"]))
        for _, r in frame.iterrows()
    ]


def write_frame(frame: pd.DataFrame, path: Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False, float_format=CSV_FLOAT_FORMAT, lineterminator="\n")
    return path


# --- Séries -------------------------------------------------------------------

def convergence_plot_data(rows: Iterable[ConvergenceRow]) -> List[PlotSeries]:
    """Un nuage (lr, épisodes médians) par environnement présent."""
    points: Dict[str, List[Tuple[float, float]]] = {}
    for row in rows:
        points.setdefault(row.environment_name, []).append((row.learning_rate, row.median_episodes))
    return [
        PlotSeries(env, tuple(pts), SCATTER, "convergence", "learning rate", "episodes to convergence")
        for env, pts in sorted(points.items())
    ]


def reward_dynamics_series(dynamics: Dict[str, List[Tuple[int, float]]], lr: float) -> List[PlotSeries]:
    return [
        PlotSeries(
            f"{env}_lr{lr:g}",
            tuple((float(e), r) for e, r in pts),
            LINE,
            "reward_dynamics",
            "episode",
            "average reward per step",
        )
        for env, pts in dynamics.items()
        if pts
    ]


def accuracy_series(rows: Iterable[AccuracyRow]) -> List[PlotSeries]:
    """Précision en fonction du learning rate, une courbe par environnement."""
    points: Dict[str, List[Tuple[float, float]]] = {}
    for row in rows:
        points.setdefault(row.environment_name, []).append((row.learning_rate, row.accuracy))
    return [
        PlotSeries(env, tuple(sorted(pts)), LINE, "accuracy", "learning rate", "accuracy")
        for env, pts in sorted(points.items())
    ]


def command_timing_series(dataset: TimingDataset) -> List[PlotSeries]:
    """Durée de chaque commande (rang dans le jeu) par (famille, exécuteur)."""
    points: Dict[Tuple[str, str], List[float]] = {}
    for record in dataset.records:
        points.setdefault((record.family, record.executor), []).append(record.seconds)
    return [
        PlotSeries(
            f"{family}_{executor}",
            tuple((float(i + 1), s) for i, s in enumerate(seconds)),
            BAR,
            f"timings_{family}",
            "command",
            "seconds",
        )
        for (family, executor), seconds in points.items()
    ]


def totals_series(rows: Iterable[TotalRow]) -> List[PlotSeries]:
    totals = [(executor, total) for executor, total in grand_totals(rows)]
    if not totals:
        return []
    return [
        PlotSeries(
            executor,
            ((float(i), total),),
            BAR,
            "totals",
            "executor",
            "total seconds",
        )
        for i, (executor, total) in enumerate(totals)
    ]


# --- Émission -----------------------------------------------------------------

def slug(name: str) -> str:
    return re.sub(r"[^A-Za-z0-9._-]+", "_", name).strip("_") or "series"


def _series_frame(series: PlotSeries) -> pd.DataFrame:
    return pd.DataFrame(list(series.points), columns=["x", "y"])


def render_svg(series: Sequence[PlotSeries], path: Path, title: str) -> Path:
    """Graphique statique, sans date ni identifiant aléatoire."""
    fig, ax = plt.subplots(figsize=(8, 5))
    try:
        bar_count = sum(s.kind == BAR for s in series)
        bar_index = 0
        for s in series:
            xs = [x for x, _ in s.points]
            ys = [y for _, y in s.points]
            if s.kind == SCATTER:
                ax.scatter(xs, ys, label=s.name)
            elif s.kind == BAR:
                width = 0.8 / max(bar_count, 1)
                offset = (bar_index - (bar_count - 1) / 2) * width
                ax.bar([x + offset for x in xs], ys, width=width, label=s.name)
                bar_index += 1
            else:
                ax.plot(xs, ys, label=s.name)
        if series:
            ax.set_xlabel(series[0].x_label)
            ax.set_ylabel(series[0].y_label)
            ax.legend()
        ax.set_title(title)
        fig.savefig(path, format="svg", metadata={"Date": None})
    finally:
        plt.close(fig)
    return path


def emit_report(series: Sequence[PlotSeries], fmt: str, out_dir: Path) -> List[Path]:
    """
    Écrit les séries.

    csv : un fichier par série (en-tête x,y) ; svg : un graphique par groupe.
    """
    if fmt not in ("csv", "svg"):
        raise ValueError(f"Format inconnu : {fmt}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    written = []
    if fmt == "csv":
        for s in series:
            if not s.points:
                continue
            written.append(write_frame(_series_frame(s), out_dir / f"{slug(s.name)}.csv"))
        return written

    groups: Dict[str, List[PlotSeries]] = {}
    for s in series:
        if s.points:
            groups.setdefault(s.group or s.name, []).append(s)
    for group, members in groups.items():
        written.append(render_svg(members, out_dir / f"{slug(group)}.svg", group))
    logger.info(f"{len(written)} fichier(s) {fmt} écrit(s) dans {out_dir}")
    return written
