from enum import Enum, IntEnum
from typing import Any, Dict, List, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator


class ExitStatus(IntEnum):
    SUCCESS = 0
    USAGE = 1
    SOLVER_FAILURE = 2
    VERIFICATION_FAILURE = 3


class DomainType(str, Enum):
    BALL = "ball"
    ELLIPSOID = "ellipsoid"
    LEVELSET = "levelset"


class StrictModel(BaseModel):
    """Configuration blocks reject unknown keys."""
    model_config = ConfigDict(extra="forbid")


class BallParams(StrictModel):
    radius: float = Field(gt=0)


class EllipsoidParams(StrictModel):
    semi_axes: List[float]

    @field_validator("semi_axes")
    @classmethod
    def positive_axes(cls, value: List[float]) -> List[float]:
        if not value or any(a <= 0 for a in value):
            raise ValueError("semi_axes must be a non-empty list of positive numbers")
        return value


class LevelSetParams(StrictModel):
    phi: str
    box: float = Field(gt=0)


_PARAMS_BY_TYPE = {
    DomainType.BALL: BallParams,
    DomainType.ELLIPSOID: EllipsoidParams,
    DomainType.LEVELSET: LevelSetParams,
}


class DomainConfig(StrictModel):
    type: DomainType
    params: Dict[str, Any]

    @model_validator(mode="after")
    def check_params(self) -> "DomainConfig":
        # validates (and rejects unknown keys) against the per-type schema
        _PARAMS_BY_TYPE[self.type].model_validate(self.params)
        return self

    def typed_params(self):
        return _PARAMS_BY_TYPE[self.type].model_validate(self.params)


class GridConfig(StrictModel):
    h: float = Field(gt=0)


class SolverConfig(StrictModel):
    tol_residual: float = Field(default=1e-9, gt=0)
    eps_adm: float = Field(default=1e-8, gt=0)
    max_newton: int = Field(default=50, gt=0)
    homotopy_steps: int = Field(default=8, gt=0)
    max_step_halvings: int = Field(default=10, gt=0)
    armijo: float = Field(default=1e-4, gt=0, lt=1)
    linear_tol: float = Field(default=1e-10, gt=0)  # relative 2-norm residual, row-equilibrated system
    beta_diag: float = Field(default=2.0, gt=0)


class OutputConfig(StrictModel):
    solution_csv: str = "solution.csv"
    report_json: str = "report.json"


class ProblemConfig(StrictModel):
    """JSON problem configuration consumed by `cli.py solve` and `converge`"""
    n: int
    p: int
    domain: DomainConfig
    f: str
    grid: GridConfig
    solver: SolverConfig = Field(default_factory=SolverConfig)
    output: OutputConfig = Field(default_factory=OutputConfig)
    subsolution: Optional[str] = None

    @model_validator(mode="after")
    def check_dimensions(self) -> "ProblemConfig":
        if self.n not in (2, 3):
            raise ValueError(f"n must be 2 or 3 for the PDE grid, got {self.n}")
        if not 1 <= self.p <= self.n:
            raise ValueError(f"p must satisfy 1 <= p <= n, got p={self.p}, n={self.n}")
        if self.domain.type == DomainType.ELLIPSOID:
            axes = self.domain.typed_params().semi_axes
            if len(axes) != self.n:
                raise ValueError(f"ellipsoid needs {self.n} semi-axes, got {len(axes)}")
        return self


class HypothesisReport(BaseModel):
    passed: bool
    min_f: float
    min_fz: float
    depends_on_nu: bool
    samples: int
    violations: List[str] = []
    warnings: List[str] = []


class SubsolutionReport(BaseModel):
    ok: bool
    admissible: bool
    worst_margin: float
    worst_node: int


class SolveReport(BaseModel):
    converged: bool
    newton_iterations_total: int
    residual_sup: float
    adm_margin_min: float
    sup_grad: float
    sup_kappa: float
    interior_quantity: float
    interior_norm: str = "max_abs_kappa"
    beta: float
    comparison_ok: bool
    subsolution_verified: Optional[bool] = None
    homotopy_trace: List[Tuple[float, float]] = []
    final_t: float
    node_count: int
    h: float
    hypothesis: Optional[HypothesisReport] = None


class SampleSpec(BaseModel):
    n: int = Field(ge=2, le=10)
    p: int = Field(ge=1)
    count: int = Field(gt=0)
    seed: int = Field(default=0, ge=0, lt=2 ** 64)
    near_boundary_fraction: float = Field(default=0.25, ge=0.0, le=1.0)

    @model_validator(mode="after")
    def check_p(self) -> "SampleSpec":
        if self.p > self.n:
            raise ValueError(f"p must not exceed n, got p={self.p}, n={self.n}")
        return self


class CheckResult(BaseModel):
    model_config = ConfigDict(populate_by_name=True)

    name: str
    passed: bool
    worst_slack: float = Field(alias="worstSlack")
    tolerance: float
    worst_sample: List[float] = Field(default=[], alias="worstSample")
    evaluated: int


class SuiteResult(BaseModel):
    model_config = ConfigDict(populate_by_name=True)

    suite: str
    passed: bool
    worst_slack: float = Field(alias="worstSlack")
    tolerance: float = 0.0
    worst_check: Optional[str] = Field(default=None, alias="worstCheck")
    worst_sample: List[float] = Field(default=[], alias="worstSample")
    constants: Dict[str, float] = {}
    seed: int
    count: int
    n: int
    p: int
    checks: List[CheckResult] = []


class ConvergenceRow(BaseModel):
    h: float
    nodes: int
    linf_error: float
    order: Optional[float] = None
