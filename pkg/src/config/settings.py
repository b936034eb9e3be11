"""
Configuration Settings

Central configuration management for the trajfactors application.
"""

import os
from pathlib import Path

from dotenv import load_dotenv

load_dotenv()  # TRAJFACTORS_* variables may come from a .env file


class Settings:
    """Application configuration settings"""

    # Project paths
    PROJECT_ROOT = Path(__file__).parent.parent.parent
    SRC_DIR = PROJECT_ROOT / "src"
    DATA_DIR = PROJECT_ROOT / "data"
    INPUT_DIR = DATA_DIR / "input"
    OUTPUT_DIR = DATA_DIR / "output"

    # Ingestion defaults
    SUPPORTED_RECORD_FORMATS = {'.csv', '.tsv', '.txt'}
    DEFAULT_GAP_SECONDS: float = 3600.0
    DEFAULT_MIN_LEN: int = 3
    DEFAULT_ORDER: int = 2
    DEFAULT_BIN_HOURS: int = 2
    DEFAULT_TZ_OFFSET: float = 0.0
    DEFAULT_DELIMITER: str = ","

    # Model and sampler defaults
    DEFAULT_K: int = 40
    DEFAULT_PRIOR: float = 0.01
    ALPHA_NUMERATOR: float = 50.0
    DEFAULT_COMPONENTS = ("sequence", "object", "time")
    DEFAULT_ITERATIONS: int = 100
    DEFAULT_AVERAGE_LAST: int = 1
    DEFAULT_FOLD_IN_ITERATIONS: int = 20
    RNG_ALGORITHM = "numpy.random.PCG64"

    # Evaluation defaults
    DEFAULT_FOLDS: int = 10
    DEFAULT_TOPN = (1, 5)
    DEFAULT_Q: int = 10
    DEFAULT_PMI_EPSILON: float = 1.0
    DEFAULT_AGGREGATION: str = "max"

    # Simulation defaults
    DEFAULT_SIM_SEQUENCES: int = 200
    DEFAULT_SIM_OBJECTS: int = 20
    DEFAULT_SIM_BINS: int = 24
    DEFAULT_SIM_TRAJECTORIES: int = 2000
    DEFAULT_SIM_UNITS: int = 10

    # Runtime
    ENV_PREFIX = "TRAJFACTORS_"
    DEFAULT_JOBS: int = 1
    DEFAULT_MODEL_ENCODING: str = "binary"

    # Artifact formats
    FORMAT_VERSION: int = 1
    CORPUS_MAGIC = "TRAJFACTORS-CORPUS"
    MODEL_MAGIC = "TRAJFACTORS-MODEL"
    REPORT_MAGIC = "TRAJFACTORS-REPORT"
    MANIFEST_MAGIC = "TRAJFACTORS-MANIFEST"
    MANIFEST_FILE = "manifest.cfg"

    # Logging Configuration
    LOG_LEVEL = os.getenv("TRAJFACTORS_LOG_LEVEL", "INFO")
    LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"

    @classmethod
    def ensure_directories(cls) -> None:
        """Ensure all required directories exist"""
        directories = [cls.DATA_DIR, cls.INPUT_DIR, cls.OUTPUT_DIR]

        for directory in directories:
            directory.mkdir(parents=True, exist_ok=True)

    @classmethod
    def get_output_path(cls, filename: str) -> Path:
        """Get full path for output file"""
        return cls.OUTPUT_DIR / filename

    @classmethod
    def default_alpha(cls, num_factors: int) -> float:
        """Symmetric factor prior used when none is configured"""
        return cls.ALPHA_NUMERATOR / num_factors

    @classmethod
    def get_run_directory(cls, base_dir: Path, param: str, value: str) -> Path:
        """Get the private output directory of one sweep run"""
        safe_name = cls._get_safe_filename(f"{param}_{value}")
        return Path(base_dir) / safe_name

    @classmethod
    def _get_safe_filename(cls, original_name: str) -> str:
        """Convert a name to a safe format for output files"""
        safe_name = "".join(c if c.isalnum() or c in "._-" else "_" for c in original_name)
        return safe_name
