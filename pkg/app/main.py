"""Point d'entrée de l'application (python -m app.main <sous-commande>)."""
import sys

from app.cli import main

if __name__ == "__main__":
    sys.exit(main())
