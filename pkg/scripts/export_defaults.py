"""Régénère le graphe, la liste idéale et le menu livrés dans un répertoire.

Le graphe vient du générateur de app/core/default_workflow.py et la liste idéale
de l'itération sur les valeurs ; `python scripts/export_defaults.py app/data`
rafraîchit les ressources du paquet.
"""
from pathlib import Path
import logging
import sys

sys.path.insert(0, str(Path(__file__).resolve().parent.parent))

from app.core.command_plan import default_menu, serialize_menu  # noqa: E402
from app.core.default_workflow import build_default_graph  # noqa: E402
from app.core.policy_eval import compute_ideal_list, serialize_ideal_list  # noqa: E402
from app.core.workflow_graph import serialize_graph, validate  # noqa: E402

logging.basicConfig(level=logging.INFO)
logger = logging.getLogger(__name__)


def export_defaults(out_dir: Path) -> bool:
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        graph = build_default_graph()

        violations = validate(graph)
        if violations:
            logger.error(f"Graphe livré invalide : {violations}")
            return False

        (out_dir / "default_graph.json").write_text(serialize_graph(graph), encoding="utf-8")
        (out_dir / "ideal_list.json").write_text(serialize_ideal_list(compute_ideal_list(graph)), encoding="utf-8")
        (out_dir / "menu.json").write_text(serialize_menu(default_menu()), encoding="utf-8")

        logger.info(f"Documents par défaut écrits dans {out_dir}")
        return True

    except Exception as e:
        logger.error(f"Erreur lors de l'export : {str(e)}")
        return False


if __name__ == "__main__":
    target = Path(sys.argv[1]) if len(sys.argv) > 1 else Path("defaults")
    success = export_defaults(target)
    sys.exit(0 if success else 1)
