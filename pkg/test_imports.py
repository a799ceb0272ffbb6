"""
Import diagnostics for FX-DARTS.
Run this when `python src/main.py` fails with an ImportError.
"""

import importlib
import sys
from typing import List, Tuple

# (pip package, module FX-DARTS imports from it)
REQUIRED_PACKAGES: List[Tuple[str, str]] = [
    ("python-dotenv", "dotenv"),
    ("numpy", "numpy"),
    ("pandas", "pandas"),
    ("scikit-learn", "sklearn.datasets"),
    ("matplotlib", "matplotlib.pyplot"),
    ("graphviz", "graphviz"),
    ("colorlog", "colorlog"),
    ("pytest", "pytest"),
]

# Lowest layer first so the first failure points at the root cause
PROJECT_MODULES = (
    "src.autodiff.tensor",
    "src.search_space.supernet",
    "src.search.ess_controller",
    "src.database.run_store",
    "src.main",
)


def missing_packages() -> List[str]:
    """Try every third-party import; return the pip names that failed."""
    missing = []
    for package, module in REQUIRED_PACKAGES:
        try:
            importlib.import_module(module)
            print(f"  ok      {package}")
        except ImportError as e:
            print(f"  MISSING {package}: {e}")
            missing.append(package)
    return missing


def broken_module() -> str:
    """Import the project's own modules; return the first one that fails, or ''."""
    sys.path.insert(0, ".")
    for module in PROJECT_MODULES:
        try:
            importlib.import_module(module)
        except ImportError as e:
            print(f"  {module}: {e}")
            return module
    return ""


def main() -> int:
    print(f"Interpreter: {sys.executable} ({sys.version.split()[0]})")
    print()
    print("Third-party packages:")
    missing = missing_packages()
    if missing:
        print()
        print(f"Install the missing packages with: pip install {' '.join(missing)}")
        return 1

    print()
    print("Project modules:")
    if broken_module():
        return 1
    print("  all modules import")
    print()
    print("Try: python src/main.py search --seed 0 --out runs/demo")
    return 0


if __name__ == "__main__":
    sys.exit(main())
