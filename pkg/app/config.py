"""Configuration de l'application."""
from pydantic import BaseModel, ConfigDict
from typing import Literal, Optional
import os
from pathlib import Path
from dotenv import load_dotenv
import logging

# Charger les variables d'environnement seulement si on n'est pas en test
if os.getenv("TESTING") != "true":
    env_path = Path(__file__).parent.parent / '.env'
    load_dotenv(dotenv_path=env_path, override=False)

LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'

logger = logging.getLogger(__name__)


class Settings(BaseModel):
    """Configuration de l'application (valeurs issues de l'environnement validées au chargement)."""
    model_config = ConfigDict(validate_default=True)

    # Logging
    LOG_LEVEL: str = os.getenv("LOG_LEVEL", "INFO")
    LOG_FILE: str = os.getenv("LOG_FILE", "")

    # Apprentissage
    RL_SEED: int = int(os.getenv("RL_SEED", "7"))
    RL_GAMMA: float = float(os.getenv("RL_GAMMA", "0.99"))
    RL_ALPHA: float = float(os.getenv("RL_ALPHA", "0.1"))
    RL_EPISODES: int = int(os.getenv("RL_EPISODES", "1000"))
    RL_MAX_STEPS: int = int(os.getenv("RL_MAX_STEPS", "200"))
    RL_EPSILON0: float = float(os.getenv("RL_EPSILON0", "0.9"))
    RL_EPSILON_MIN: float = float(os.getenv("RL_EPSILON_MIN", "0.01"))
    RL_CONVERGENCE_THRESHOLD: float = float(os.getenv("RL_CONVERGENCE_THRESHOLD", "1e-4"))
    RL_CONVERGENCE_MODE: Literal["paper", "stable"] = os.getenv("RL_CONVERGENCE_MODE", "stable")
    RL_CONVERGENCE_WINDOW: int = int(os.getenv("RL_CONVERGENCE_WINDOW", "50"))
    RL_EARLY_STEP_THRESHOLD: int = int(os.getenv("RL_EARLY_STEP_THRESHOLD", "15"))

    # Contexte des commandes forensiques
    COMMAND_PID: int = int(os.getenv("COMMAND_PID", "340"))
    COMMAND_IMAGE: str = os.getenv("COMMAND_IMAGE", "memdump.raw")
    COMMAND_PROFILE: str = os.getenv("COMMAND_PROFILE", "Win10x64_19041")
    COMMAND_OUTDIR: str = os.getenv("COMMAND_OUTDIR", "output")

    # Paths
    OUTPUT_DIR: Path = Path(os.getenv("OUTPUT_DIR", "runs"))

    # VirusTotal (utilisé uniquement par le runner shell)
    VT_API_KEY: str = os.getenv("VT_API_KEY", "")
    VT_BASE_URL: str = os.getenv("VT_BASE_URL", "https://www.virustotal.com/api/v3")
    VT_TIMEOUT: float = float(os.getenv("VT_TIMEOUT", "30"))


def configure_logging(level: Optional[str] = None) -> None:
    """Configure le logging (stderr + fichier optionnel)."""
    handlers = [logging.StreamHandler()]
    if settings.LOG_FILE:
        log_path = Path(settings.LOG_FILE)
        log_path.parent.mkdir(parents=True, exist_ok=True)
        handlers.append(logging.FileHandler(log_path))

    logging.basicConfig(
        level=(level or settings.LOG_LEVEL).upper(),
        format=LOG_FORMAT,
        handlers=handlers,
        force=True
    )


# Instance singleton des paramètres
settings = Settings()
