import csv
import json
import logging
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence

import numpy as np
from pydantic import BaseModel

from app.exceptions import ArtifactError
from app.models import ConvergenceRow, ProblemConfig
from config import settings

logger = logging.getLogger(__name__)


def _plain(value: Any) -> Any:
    """numpy scalars and arrays as plain JSON values."""
    if isinstance(value, BaseModel):
        return value.model_dump(mode="json", by_alias=True)
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, np.generic):
        return value.item()
    raise TypeError(f"{type(value).__name__} is not JSON serializable")


class FileHandler:
    def __init__(self, output_dir: Optional[str] = None):
        self.output_dir = settings.ensure_directories_exist(Path(output_dir) if output_dir else None)

    def resolve(self, filename: str) -> Path:
        """Relative names land in the output directory; absolute paths are kept."""
        path = Path(filename)
        return path if path.is_absolute() else self.output_dir / path

    def load_config(self, config_path: str) -> ProblemConfig:
        """Read and validate a JSON problem configuration"""
        try:
            text = Path(config_path).read_text(encoding="utf-8")
        except OSError as e:
            raise ArtifactError(f"Failed to read config {config_path}: {e}") from e
        return ProblemConfig.model_validate_json(text)

    def write_json(self, data: Dict, filename: str) -> str:
        path = self.resolve(filename)
        try:
            with open(path, "w", encoding="utf-8") as f:
                json.dump(data, f, indent=2, sort_keys=False, default=_plain)
                f.write("\n")
        except OSError as e:
            raise ArtifactError(f"Failed to write JSON {path}: {e}") from e
        logger.info("wrote %s", path)
        return str(path)

    def write_csv(self, header: Sequence[str], rows: Iterable[Sequence[Any]], filename: str) -> str:
        path = self.resolve(filename)
        try:
            with open(path, "w", encoding="utf-8", newline="") as f:
                writer = csv.writer(f)
                writer.writerow(header)
                for row in rows:
                    writer.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])
        except OSError as e:
            raise ArtifactError(f"Failed to write CSV {path}: {e}") from e
        logger.info("wrote %s", path)
        return str(path)

    def write_solution(self, grid, u: np.ndarray, filename: str) -> str:
        """Node field as rows i1..in, x1..xn, u."""
        n = grid.n
        header = [f"i{k + 1}" for k in range(n)] + [f"x{k + 1}" for k in range(n)] + ["u"]
        return self.write_csv(header, grid.field_rows(u), filename)

    def write_radial_profile(self, table: List[List[float]], filename: str) -> str:
        return self.write_csv(["rho", "u"], table, filename)

    def write_convergence(self, rows: List[ConvergenceRow], filename: str) -> str:
        return self.write_csv(
            ["h", "nodes", "linf_error", "order"],
            ([row.h, row.nodes, row.linf_error, "" if row.order is None else row.order] for row in rows),
            filename,
        )
