import os
from pathlib import Path
from dotenv import load_dotenv

load_dotenv()

class Settings:
    # Parallelism hint for pointwise assembly
    THREADS: int = max(1, int(os.getenv("PCURVE_THREADS", "1")))

    # Directory Configuration
    BASE_DIR = Path(__file__).parent
    OUTPUT_DIR = Path(os.getenv("PCURVE_OUTPUT_DIR", "outputs"))

    # Logging
    LOG_LEVEL: str = os.getenv("PCURVE_LOG_LEVEL", "INFO").upper()

    # Operator library limits
    MAX_DIMENSION: int = 10
    GRID_DIMENSIONS = (2, 3)

    # Linear solver: sparse LU up to this many unknowns, ILU-preconditioned GMRES above
    DIRECT_SOLVE_MAX_UNKNOWNS: int = int(os.getenv("PCURVE_DIRECT_SOLVE_MAX_UNKNOWNS", "150000"))
    DIRECT_SOLVE_MAX_UNKNOWNS_3D: int = int(os.getenv("PCURVE_DIRECT_SOLVE_MAX_UNKNOWNS_3D", "10000"))

    # Verification suites
    NEAR_BOUNDARY_FRACTION: float = float(os.getenv("PCURVE_NEAR_BOUNDARY_FRACTION", "0.25"))
    NEAR_BOUNDARY_MARGIN_RANGE = (1e-4, 1e-3)  # relative cone margin, log-uniform

    # Hypothesis sampling of the right-hand side
    HYPOTHESIS_SAMPLES: int = 512
    HYPOTHESIS_SEED: int = 20240601

    # Default suite names, in the order `verify --suite all` runs them
    SUITES = ["dinew", "key1", "lem4", "growth", "gradients", "concavity", "ellipticity"]

    @classmethod
    def ensure_directories_exist(cls, output_dir: Path = None):
        """Ensure the artifact directory exists"""
        target = Path(output_dir) if output_dir else cls.OUTPUT_DIR
        target.mkdir(exist_ok=True, parents=True)
        return target

# Create settings instance
settings = Settings()
