from typing import List, Optional
from pydantic import BaseModel, Field, field_validator, model_validator


STRICT = {"extra": "forbid"}


# ============ Experiment configuration ============

class GridConfig(BaseModel):
    model_config = STRICT

    d: int = Field(default=1, ge=1, le=3)
    extent_z: float = Field(default=8.0, gt=0)
    extent_s: float = Field(default=8.0, gt=0)
    n_z: int = Field(default=32, ge=4, le=256)
    n_s: int = Field(default=32, ge=4, le=512)

    @field_validator("n_z")
    @classmethod
    def power_of_two(cls, v: int) -> int:
        if v & (v - 1):
            raise ValueError("n_z must be a power of two")
        return v


class PacketConfig(BaseModel):
    model_config = STRICT

    center: Optional[List[float]] = None
    widths: List[float] = Field(default=[1.25], min_length=1)
    momentum: List[float] = []

    @field_validator("widths")
    @classmethod
    def positive_widths(cls, v: List[float]) -> List[float]:
        if any(w <= 0 for w in v):
            raise ValueError("packet widths must be positive")
        return v


class PotentialConfig(BaseModel):
    """zero, constant (amplitude) or gaussian amplitude * exp(-|p|^2 / (2 width^2))."""

    model_config = STRICT

    kind: str = Field(default="zero", pattern="^(zero|constant|gaussian)$")
    amplitude: float = 0.0
    width: float = Field(default=1.0, gt=0)


class ChernoffPlan(BaseModel):
    model_config = STRICT

    t: float = Field(default=0.25, gt=0)
    n_list: List[int] = Field(default=[2, 4, 8, 16], min_length=1)
    method: str = Field(default="dense", pattern="^(dense|quadrature|montecarlo)$")
    shear: str = Field(default="dense", pattern="^(dense|interpolated)$")
    order: str = Field(default="SM", pattern="^(SM|MS)$")
    quadrature_points: int = Field(default=8, ge=2, le=16)
    mc_samples: int = Field(default=4096, ge=1000)
    reference_n: int = Field(default=256, ge=1, description="Dense steps for the reference when no Mehler oracle applies")
    dump_fields: bool = True

    @field_validator("n_list")
    @classmethod
    def positive_steps(cls, v: List[int]) -> List[int]:
        if any(n < 1 for n in v):
            raise ValueError("step counts must be >= 1")
        return v


class MonteCarloConfig(BaseModel):
    model_config = STRICT

    t: float = Field(default=0.25, gt=0)
    paths: int = Field(default=100000, ge=100)
    steps: int = Field(default=250, ge=1)
    scheme: str = Field(default="ito", pattern="^(ito|midpoint)$")
    probes: Optional[List[List[float]]] = None
    lambdas: List[float] = [0.5, 1.0, 2.0]


class WalkConfig(BaseModel):
    model_config = STRICT

    t: float = Field(default=1.0, gt=0)
    horizon: float = Field(default=1.0, gt=0)
    n_list: List[int] = Field(default=[4, 16, 64], min_length=1)
    delta_list: List[float] = Field(default=[0.2, 0.1, 0.05], min_length=1)
    eps: float = Field(default=0.5, gt=0)
    paths: int = Field(default=4000, ge=10)
    substeps: int = Field(default=4, ge=1)
    start: Optional[List[float]] = None
    dump_paths: int = Field(default=1, ge=0)

    @field_validator("delta_list")
    @classmethod
    def positive_deltas(cls, v: List[float]) -> List[float]:
        if any(delta <= 0 for delta in v):
            raise ValueError("delta values must be positive")
        return v


class KernelConfig(BaseModel):
    model_config = STRICT

    flavor: str = Field(default="heat", pattern="^(heat|schrodinger)$")
    t: float = Field(default=0.25, gt=0)
    alphas: List[float] = [0.0, 0.5, 1.0, 2.0]
    pairs: List[List[List[float]]] = [
        [[0.0, 0.0], [0.0, 0.0]],
        [[0.5, 0.0], [0.0, 0.5]],
        [[1.0, -0.5], [-0.25, 0.75]],
    ]


class ExperimentConfig(BaseModel):
    model_config = STRICT

    kind: str = Field(..., pattern="^(heat|schrodinger|fk|walk|verify|dump-kernel)$")
    grid: GridConfig = GridConfig()
    initial: PacketConfig = PacketConfig()
    potential: PotentialConfig = PotentialConfig()
    plan: ChernoffPlan = ChernoffPlan()
    mc: MonteCarloConfig = MonteCarloConfig()
    walk: WalkConfig = WalkConfig()
    kernel: KernelConfig = KernelConfig()
    output_dir: Optional[str] = None
    seed: int = Field(default=0, ge=0)

    @model_validator(mode="after")
    def dimensions_agree(self) -> "ExperimentConfig":
        dim = 2 * self.grid.d + 1
        if self.initial.center is not None and len(self.initial.center) != dim:
            raise ValueError(f"initial.center needs {dim} coordinates")
        if self.walk.start is not None and len(self.walk.start) != dim:
            raise ValueError(f"walk.start needs {dim} coordinates")
        for probe in self.mc.probes or []:
            if len(probe) != dim:
                raise ValueError(f"every probe needs {dim} coordinates")
        return self


# ============ Result rows ============

class ConvergenceRow(BaseModel):
    n: int
    method: str
    l2_error_vs_oracle: float
    norm_drift: float
    boundary_mass: float


class FKRow(BaseModel):
    x: float
    y: float
    s: float
    estimate_re: float
    estimate_im: float
    se: float
    oracle_re: float
    oracle_im: float
    abs_diff: float


class TightnessRow(BaseModel):
    n: int
    delta: float
    eps: float
    p_hat: float = Field(..., ge=0, le=1)
    se: float


class VerifyCheck(BaseModel):
    name: str
    passed: bool
    value: float
    tolerance: float


class ManifestEntry(BaseModel):
    file: str
    bytes: int
    sha256: str = Field(..., pattern="^[0-9a-f]{64}$")
