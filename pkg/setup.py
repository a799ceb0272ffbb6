"""
First-run setup for FX-DARTS.
Creates config/.env and the working directories, then checks the packages.
Run it once after `pip install -r requirements.txt`.
"""

import shutil
from pathlib import Path

PROJECT_ROOT = Path(__file__).parent
WORK_DIRS = ('data', 'runs')


def ensure_env_file(root: Path) -> bool:
    """Copy config/.env.example to config/.env unless one exists. Returns True if created."""
    env_file = root / 'config' / '.env'
    if env_file.exists():
        return False
    shutil.copy(root / 'config' / '.env.example', env_file)
    return True


def ensure_work_dirs(root: Path):
    # Default locations of Config.DATA_DIR and Config.OUTPUT_ROOT; the CLI itself never creates them
    for name in WORK_DIRS:
        (root / name).mkdir(exist_ok=True)


def check_packages() -> list:
    """Return the names of required modules that fail to import."""
    missing = []
    for module in ('colorlog', 'dotenv', 'graphviz', 'matplotlib', 'numpy', 'pandas', 'sklearn'):
        try:
            __import__(module)
        except ImportError:
            missing.append(module)
    return missing


def main():
    print("FX-DARTS setup")
    print("-" * 40)

    if ensure_env_file(PROJECT_ROOT):
        print("config/.env        created from config/.env.example (defaults work as they are)")
    else:
        print("config/.env        already present, left unchanged")

    ensure_work_dirs(PROJECT_ROOT)
    print(f"directories        {', '.join(d + '/' for d in WORK_DIRS)}")

    missing = check_packages()
    if missing:
        print(f"packages           missing {', '.join(missing)}; run pip install -r requirements.txt")
    else:
        print("packages           all present")

    # Only rendering .dot files to images needs the binaries
    if shutil.which('dot') is None:
        print("graphviz binaries  not found (genotype .dot files are still written)")

    print("-" * 40)
    print("Next:")
    print("  python src/main.py search --seed 0 --out runs/demo")
    print("  python src/main.py report runs/demo")
    print("  pytest -m \"not slow\"")
    print("See README.md for every command.")


if __name__ == "__main__":
    main()
