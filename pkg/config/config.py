"""
Configuration module for FX-DARTS.
This file loads environment variables and provides process-level settings.
Run-level settings (search hyper-parameters, dataset, network dims) live in
config/run_config.py.
"""

import os
from pathlib import Path
from dotenv import load_dotenv

# Get the project root directory (parent of config folder)
PROJECT_ROOT = Path(__file__).parent.parent

# Load environment variables from .env file
load_dotenv(PROJECT_ROOT / 'config' / '.env')

VALID_LOG_LEVELS = ('DEBUG', 'INFO', 'WARNING', 'ERROR', 'CRITICAL')


class Config:
    """
    Configuration class that stores all application settings.
    Settings are loaded from environment variables.
    """

    # ==================== Output Settings ====================
    # Root under which run directories are created when --out is not given;
    # nothing is created here until such a run starts
    OUTPUT_ROOT = Path(os.getenv('FXDARTS_OUTPUT_ROOT') or PROJECT_ROOT / 'runs')
    DATABASE_NAME = os.getenv('FXDARTS_DATABASE_NAME') or 'run.db'

    # ==================== Data Directory ====================
    DATA_DIR = Path(os.getenv('FXDARTS_DATA_DIR') or PROJECT_ROOT / 'data')

    # ==================== Logging Settings ====================
    # The log file is written inside each run directory
    LOG_LEVEL = os.getenv('LOG_LEVEL') or 'INFO'

    # ==================== Reporting Settings ====================
    # Maximum points per cell in the downsampled entropy series of `report`
    REPORT_MAX_POINTS = int(os.getenv('FXDARTS_REPORT_MAX_POINTS') or 200)

    @classmethod
    def validate(cls):
        """
        Validates the configuration values.
        Raises ValueError naming every bad setting.
        """
        problems = []

        if cls.LOG_LEVEL.upper() not in VALID_LOG_LEVELS:
            problems.append(f"LOG_LEVEL={cls.LOG_LEVEL} (use one of {', '.join(VALID_LOG_LEVELS)})")

        if not cls.DATABASE_NAME or Path(cls.DATABASE_NAME).name != cls.DATABASE_NAME:
            problems.append(f"FXDARTS_DATABASE_NAME={cls.DATABASE_NAME} (must be a bare file name)")

        if cls.REPORT_MAX_POINTS < 2:
            problems.append(f"FXDARTS_REPORT_MAX_POINTS={cls.REPORT_MAX_POINTS} (must be at least 2)")

        if problems:
            raise ValueError(
                f"Invalid configuration: {'; '.join(problems)}\n"
                f"Please check config/.env (see config/.env.example)."
            )
