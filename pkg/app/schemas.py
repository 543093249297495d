from pydantic import BaseModel, ConfigDict, Field, RootModel, field_validator, model_validator
from typing import List, Dict, Any, Optional, Literal
from pathlib import Path

from app.config import settings

DEFAULT_LEARNING_RATES = [0.001, 0.01, 0.05, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9]
ENVIRONMENT_NAMES = ["env_new1", "env_new2", "env_new3"]
PLACEHOLDERS = ("pid", "image", "profile", "outdir")


class StrictModel(BaseModel):
    """Base des documents : les champs inconnus sont rejetés."""
    model_config = ConfigDict(extra="forbid")


# --- Documents du graphe -------------------------------------------------

class EdgeDocument(StrictModel):
    """Une transition (p, état suivant, récompense, fin d'épisode)."""
    p: float = Field(..., ge=0.0, le=1.0)
    next: int
    reward: float
    done: bool


class TransitionDocument(StrictModel):
    """Liste des transitions d'un couple (état, action)."""
    state: int
    action: int
    edges: List[EdgeDocument] = Field(..., min_length=1)


class GraphDocument(StrictModel):
    """Document JSON décrivant un graphe de workflow."""
    num_states: int = Field(..., gt=0)
    num_actions: int = Field(..., gt=0)
    terminal_states: List[int]
    milestones: Dict[int, str] = Field(default_factory=dict)
    transitions: List[TransitionDocument]
    command_slots: Dict[int, int] = Field(default_factory=dict)
    state_labels: Dict[int, str] = Field(default_factory=dict)


class IdealListDocument(StrictModel):
    """Liste idéale : action et état d'atterrissage par état."""
    actions: List[int]
    landing: List[int]

    @model_validator(mode="after")
    def check_lengths(self):
        if len(self.actions) != len(self.landing):
            raise ValueError("actions et landing doivent avoir la même longueur")
        return self


class MenuDocument(RootModel[Dict[int, List[str]]]):
    """Menu de commandes : état -> gabarits."""

    @field_validator("root")
    @classmethod
    def check_templates(cls, value: Dict[int, List[str]]) -> Dict[int, List[str]]:
        for state, templates in value.items():
            if not templates:
                raise ValueError(f"L'état {state} n'a aucun gabarit")
            if any(not t.strip() for t in templates):
                raise ValueError(f"Gabarit vide pour l'état {state}")
        return value


# --- Timings ---------------------------------------------------------------

class TimingRecord(StrictModel):
    """Durée d'une commande pour une famille de malware et un exécuteur."""
    model_config = ConfigDict(extra="forbid", frozen=True)

    family: str = Field(..., min_length=1)
    executor: str = Field(..., min_length=1)
    command: str = Field(..., min_length=1)
    seconds: float = Field(..., ge=0.0)


# --- Configurations ---------------------------------------------------------

class TrainConfig(StrictModel):
    """Hyperparamètres de l'apprentissage Q-learning."""
    model_config = ConfigDict(extra="forbid", frozen=True)

    alpha: float = Field(default=settings.RL_ALPHA, gt=0.0, le=1.0)
    gamma: float = Field(default=settings.RL_GAMMA, ge=0.0, lt=1.0)
    epsilon0: float = Field(default=settings.RL_EPSILON0, ge=0.0, le=1.0)
    epsilon_decay_value: Optional[float] = Field(default=None, gt=0.0)
    epsilon_min: float = Field(default=settings.RL_EPSILON_MIN, ge=0.0, le=1.0)
    step_decay: float = Field(default=0.0, ge=0.0, lt=1.0)
    episodes: int = Field(default=settings.RL_EPISODES, ge=0)
    max_steps_per_episode: int = Field(default=settings.RL_MAX_STEPS, gt=0)
    convergence_threshold: float = Field(default=settings.RL_CONVERGENCE_THRESHOLD, gt=0.0)
    convergence_mode: Literal["paper", "stable"] = Field(default=settings.RL_CONVERGENCE_MODE, validate_default=True)
    convergence_window: int = Field(default=settings.RL_CONVERGENCE_WINDOW, ge=1)
    seed: int = Field(default=settings.RL_SEED, ge=0, lt=2 ** 64)

    @property
    def decay_value(self) -> float:
        """Valeur de décroissance par épisode (défaut : (eps0 - eps_min) / épisodes)."""
        if self.epsilon_decay_value is not None:
            return self.epsilon_decay_value
        if self.episodes == 0:
            return 0.0
        return max(self.epsilon0 - self.epsilon_min, 0.0) / self.episodes


class SweepConfig(StrictModel):
    """Grille learning rates x environnements."""
    model_config = ConfigDict(extra="forbid", frozen=True)

    learning_rates: List[float] = Field(default_factory=lambda: list(DEFAULT_LEARNING_RATES))
    environment_names: List[str] = Field(default_factory=lambda: list(ENVIRONMENT_NAMES))
    base: TrainConfig = Field(default_factory=TrainConfig)
    seeds_per_cell: int = Field(default=1, ge=1)

    @field_validator("learning_rates")
    @classmethod
    def check_learning_rates(cls, value: List[float]) -> List[float]:
        if not value:
            raise ValueError("La grille de learning rates est vide")
        if any(not 0.0 < lr <= 1.0 for lr in value):
            raise ValueError("Chaque learning rate doit être dans (0, 1]")
        if any(b <= a for a, b in zip(value, value[1:])):
            raise ValueError("Les learning rates doivent être strictement croissants")
        return value

    @field_validator("environment_names")
    @classmethod
    def check_environment_names(cls, value: List[str]) -> List[str]:
        unknown = [name for name in value if name not in ENVIRONMENT_NAMES]
        if unknown or not value:
            raise ValueError(f"Environnements inconnus : {unknown}")
        if len(set(value)) != len(value):
            raise ValueError("Environnements dupliqués")
        return value


class CliConfig(StrictModel):
    """Fichier de configuration JSON de la CLI (--config)."""
    graph_path: Optional[Path] = None
    variant: Optional[str] = None
    train: Dict[str, Any] = Field(default_factory=dict)
    sweep: Dict[str, Any] = Field(default_factory=dict)
    out_dir: Optional[Path] = None
    seed: Optional[int] = Field(default=None, ge=0, lt=2 ** 64)
    ideal_path: Optional[Path] = None
    menu_path: Optional[Path] = None
    timing_path: Optional[Path] = None

    def referenced_paths(self) -> List[Path]:
        """Chemins d'entrée qui doivent exister avant de commencer."""
        return [
            p for p in (self.graph_path, self.ideal_path, self.menu_path, self.timing_path)
            if p is not None
        ]


# --- Manifestes ----------------------------------------------------------------

class RunManifest(StrictModel):
    """Manifeste d'un entraînement (écho de la config + hash du graphe)."""
    variant: str
    config: TrainConfig
    graph_hash: str
    watch_pairs: List[List[int]]
    converged: bool
    episodes_to_convergence: Optional[int] = None
    episodes_run: int


class SweepManifest(StrictModel):
    """Écho de la configuration d'un sweep (sweep.json)."""
    config: SweepConfig
    graph_hash: str
    cells: List[str]


class PlanStepDocument(StrictModel):
    """Une ligne du plan exporté (JSON lines)."""
    state: int
    action: int
    command: str
    sentinel: bool
