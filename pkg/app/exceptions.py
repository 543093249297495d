"""Exceptions du domaine."""
from typing import List, Optional


class ForensicRLError(Exception):
    """Classe de base des erreurs de l'application."""


class ParseError(ForensicRLError):
    """Document mal formé (graphe, liste idéale, menu, timings, config)."""

    def __init__(self, line: Optional[int], message: str):
        self.line = line
        self.message = message
        where = f"ligne {line}: " if line is not None else ""
        super().__init__(f"{where}{message}")


class ValidationError(ForensicRLError):
    """Graphe sémantiquement invalide ; porte la liste des violations."""

    def __init__(self, violations: List["GraphViolation"]):  # noqa: F821
        self.violations = list(violations)
        details = "; ".join(str(v) for v in self.violations)
        super().__init__(f"{len(self.violations)} violation(s): {details}")


class SteppedTerminal(ForensicRLError):
    """step() appelé depuis un état terminal."""


class InvalidAction(ForensicRLError):
    """Action hors de [0, num_actions)."""


class MissingLearningRate(ForensicRLError):
    """Taux d'apprentissage absent du sweep."""


class NonFiniteInput(ForensicRLError):
    """Entrée non finie (NaN / inf)."""


class LengthMismatch(ForensicRLError):
    """Listes de longueurs différentes."""


class LandingMismatch(ForensicRLError):
    """landing[s] n'est pas atteignable depuis s avec l'action idéale."""


class UnboundPlaceholder(ForensicRLError):
    """Un gabarit de commande référence un paramètre absent du contexte."""


class RunnerFailure(ForensicRLError):
    """Une commande du plan a retourné un statut non nul."""

    def __init__(self, step: int, status: int):
        self.step = step
        self.status = status
        super().__init__(f"Étape {step} en échec (statut {status})")


class DuplicateRecord(ForensicRLError):
    """Triplet (famille, exécuteur, commande) dupliqué."""


class HashLookupError(ForensicRLError):
    """Échec de la consultation d'un condensat."""


class ConfigurationError(ForensicRLError):
    """Arguments ou fichier de configuration invalides."""
