# asmfs_protocol.py
import typing

from pydantic import BaseModel, ConfigDict, Field, model_validator

# Hyperparameter domains searched by nested cross-validation
LAMBDA_GRID = [0.1, 5.0, 20.0, 60.0, 100.0]
MU_GRID = [0.0, 5.0, 10.0, 15.0, 20.0]
K_GRID = [1, 3, 5, 7, 9]
BETA_STEP = 0.1

METHOD_NAMES = (
    "svm",
    "lasso_svm",
    "mksvm",
    "lasso_mksvm",
    "mtfs",
    "fixed_similarity",
    "asmfs",
)


class AsmfsConfig(BaseModel):
    """
    Settings of the alternating solver:
      - lambda: weight of the similarity (graph) term
      - mu: weight of the L2,1 row-sparsity term
      - K: neighbours kept per similarity row
      - gamma_refresh_iters: outer iterations that re-derive each row's gamma_i;
        later similarity updates hold gamma_i fixed
    """
    model_config = ConfigDict(extra="forbid", populate_by_name=True, frozen=True)

    lambda_: float = Field(default=20.0, ge=0.0, alias="lambda")
    mu: float = Field(default=10.0, ge=0.0)
    K: int = Field(default=5, ge=1)
    max_outer_iters: int = Field(default=50, ge=1)
    inner_w_iters: int = Field(default=10, ge=1)
    rel_tol: float = Field(default=1e-5, gt=0.0)
    irls_epsilon: float = Field(default=1e-8, gt=0.0)
    gamma_refresh_iters: int = Field(default=2, ge=1)
    clamp_k: bool = True


class CvPlan(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    folds: int = Field(default=10, ge=2)
    repeats: int = Field(default=10, ge=1)
    inner_folds: int = Field(default=10, ge=2)
    stratified: bool = True
    seed: int = Field(default=0, ge=0)


class SyntheticSpec(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    n: int = Field(default=200, ge=4)
    d: int = Field(default=93, ge=1)
    M: int = Field(default=2, ge=1)
    n_informative: int = Field(default=10, ge=1)
    class_separation: float = Field(default=1.5, ge=0.0)
    noise_sigma: float = Field(default=1.0, ge=0.0)
    correlated_noise: bool = False
    noise_correlation: float = Field(default=0.5, ge=0.0, le=1.0)
    positive_fraction: float = Field(default=0.5, gt=0.0, lt=1.0)
    seed: int = Field(default=0, ge=0)

    @model_validator(mode="after")
    def check_shapes(self):
        if self.n_informative > self.d:
            raise ValueError(f"n_informative={self.n_informative} exceeds d={self.d}")
        positives = round(self.n * self.positive_fraction)
        if positives < 2 or self.n - positives < 2:
            raise ValueError(f"n={self.n} with positive_fraction={self.positive_fraction} leaves a class with fewer than 2 subjects")
        return self


class HyperparameterGrids(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    lambdas: typing.List[float] = Field(default_factory=lambda: list(LAMBDA_GRID), min_length=1)
    mus: typing.List[float] = Field(default_factory=lambda: list(MU_GRID), min_length=1)
    ks: typing.List[int] = Field(default_factory=lambda: list(K_GRID), min_length=1)
    beta_step: float = Field(default=BETA_STEP, gt=0.0, le=1.0)
    # fixed axes of the sensitivity sweep
    sweep_k: int = Field(default=5, ge=1)
    sweep_lambda: float = Field(default=20.0, ge=0.0)

    @model_validator(mode="after")
    def check_domains(self):
        if any(v < 0 for v in self.lambdas + self.mus):
            raise ValueError("lambda and mu grid values must be >= 0")
        if any(k < 1 for k in self.ks):
            raise ValueError("K grid values must be >= 1")
        return self


class RunConfig(BaseModel):
    """Everything a subcommand needs; echoed verbatim into each artifact it writes."""
    model_config = ConfigDict(extra="forbid")

    modality_paths: typing.List[str] = Field(default_factory=list)
    labels_path: typing.Optional[str] = None
    model_path: typing.Optional[str] = None
    output_dir: str = "asmfs_out"
    method: str = "asmfs"
    methods: typing.List[str] = Field(default_factory=lambda: list(METHOD_NAMES))
    asmfs: AsmfsConfig = Field(default_factory=AsmfsConfig)
    plan: CvPlan = Field(default_factory=CvPlan)
    synthetic: SyntheticSpec = Field(default_factory=SyntheticSpec)
    grids: HyperparameterGrids = Field(default_factory=HyperparameterGrids)
    C: float = Field(default=1.0, gt=0.0)
    jobs: int = Field(default=1, ge=1)
    top_t: typing.Optional[int] = Field(default=None, ge=1)
    select_rule: typing.Literal["joint", "per_modality"] = "joint"
    epsilon_select: float = Field(default=1e-6, ge=0.0)
    inner_beta_search: bool = False
    log_level: typing.Optional[typing.Literal["error", "warn", "info", "debug"]] = None

    @model_validator(mode="after")
    def check_methods(self):
        unknown = [m for m in [self.method, *self.methods] if m not in METHOD_NAMES]
        if unknown:
            raise ValueError(f"unknown method(s) {unknown}, expected one of {list(METHOD_NAMES)}")
        if not self.methods:
            raise ValueError("methods must not be empty")
        return self

    def echo(self) -> dict:
        return self.model_dump(mode="json", by_alias=True)
