"""Run configuration: TOML loading, validation, and the shipped priors.

A config file is a flat document with sections ([mesh], [kernel], [prior],
[sampler], [offline], [mcmc], [data], plus per-experiment blocks).  Values
deep-merge over the defaults below; validation collects every violated field
before failing.
"""

import sys
from dataclasses import dataclass, field, fields
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .covariance import KERNEL_NAMES
from .errors import ConfigError
from .mesh import DIAM
from .uq.priors import HyperPrior

EXPERIMENTS = (
    "lin_error", "rb_accuracy", "timings",
    "verify_52", "forward_53", "bayes_pde_54", "bayes_field_55",
    "offline",
)

# Shipped hyperprior presets (one per experiment family); n_sto = 0 means
# "select by variance fraction on the configured mesh".
PRIOR_PRESETS = {
    "verify": dict(ell_min=0.3, sigma_min=1.0, sigma_max=1.0, m_sigma=1.0,
                   var_sigma=0.0, n_sto=200),
    "flowcell": dict(ell_min=0.3, sigma_min=0.1, sigma_max=1.0, m_sigma=0.5,
                     var_sigma=0.1, n_sto=100),
    "bayes_pde": dict(ell_min=0.3, sigma_min=0.5, sigma_max=0.5, m_sigma=0.5,
                      var_sigma=0.0, n_sto=100),
    "bayes_field": dict(ell_min=0.1, sigma_min=0.1, sigma_max=1.0, m_sigma=0.5,
                        var_sigma=0.1, n_sto=800),
}


@dataclass
class MeshConfig:
    field_n_side: int = 32
    fem_n_side: int = 16


@dataclass
class KernelConfig:
    name: str = "linearized"
    nu: float = 0.5
    n_lin: int = 40
    ell: float = 0.5          # fixed-kernel experiments only
    sigma: float = 1.0


@dataclass
class PriorConfig:
    preset: str = ""
    ell_min: float = 0.3
    ell_max: float = DIAM
    sigma_min: float = 1.0
    sigma_max: float = 1.0
    m_sigma: float = 1.0
    var_sigma: float = 0.0
    n_sto: int = 0
    variance_fraction: float = 0.9

    def resolve_preset(self):
        if self.preset:
            if self.preset not in PRIOR_PRESETS:
                raise ConfigError(
                    [f"prior.preset: unknown preset {self.preset!r}; "
                     f"choose from {sorted(PRIOR_PRESETS)}"])
            for key, val in PRIOR_PRESETS[self.preset].items():
                setattr(self, key, val)

    def hyperprior(self) -> HyperPrior:
        return HyperPrior(ell_min=self.ell_min, ell_max=self.ell_max,
                          sigma_min=self.sigma_min, sigma_max=self.sigma_max,
                          m_sigma=self.m_sigma, var_sigma=self.var_sigma)


@dataclass
class SamplerConfig:
    kind: str = "rb"          # "full" | "rb"
    basis_dir: str = ""
    n_samples: int = 10000
    n_repetitions: int = 1
    matrix_free: str = "auto"  # "auto" | "on" | "off"


@dataclass
class OfflineConfig:
    n_snapshots: int = 4
    snap_ell_min: float = 0.0   # 0 -> prior.ell_min
    lambda_min: float = 1e-10
    max_vectors: int = 0        # 0 -> no cap
    n_sto: int = 0              # 0 -> resolved truncation


@dataclass
class McmcConfig:
    n_steps: int = 20000
    n_chains: int = 1
    beta: float = 0.1
    burn_in: int = 0
    init_ell: float = 0.5
    init_sigma: float = 0.0     # 0 -> m_sigma
    step_ell: float = 0.0       # 0 -> default 10% of the 1/ell range
    step_sigma: float = 0.0
    density_variant: str = "span"


@dataclass
class DataConfig:
    truth_ell: float = 0.5
    truth_sigma: float = 0.0    # 0 -> m_sigma
    gamma2: float = 1e-2
    obs_grid: int = 3           # k -> k^2 lattice points (n/(k+1), m/(k+1))
    obs_value: float = 0.1      # constant-data field problem
    synthetic: bool = False     # draw y from a truth field instead
    data_seed: int = 90210


@dataclass
class LinErrorConfig:
    n_lin_max: int = 100
    ell_min_log10_lo: float = -1.5
    ell_min_log10_hi: float = 1.5
    n_ell_min: int = 13
    grid_density: int = 101


@dataclass
class RbAccuracyConfig:
    n_side: int = 50
    n_snapshots: int = 10
    n_sto: int = 100
    n_rb_list: list = field(default_factory=lambda: [2, 4, 8, 16, 32, 64, 128, 256, 512, 1000])
    test_ells: list = field(default_factory=lambda: [0.1, 0.5, 1.4])


@dataclass
class TimingsConfig:
    n_side_list: list = field(default_factory=lambda: [16, 32, 64])   # N = 4^4..4^6
    n_warmup: int = 3
    n_timed: int = 5
    n_rb: int = 256
    n_sto: int = 100


@dataclass
class RunConfig:
    experiment: str = "verify_52"
    seed: int = 0
    threads: int = 1
    out_dir: str = "runs/out"
    emit_gnuplot: bool = True
    dense_limit: int = 8192
    mesh: MeshConfig = field(default_factory=MeshConfig)
    kernel: KernelConfig = field(default_factory=KernelConfig)
    prior: PriorConfig = field(default_factory=PriorConfig)
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    offline: OfflineConfig = field(default_factory=OfflineConfig)
    mcmc: McmcConfig = field(default_factory=McmcConfig)
    data: DataConfig = field(default_factory=DataConfig)
    lin_error: LinErrorConfig = field(default_factory=LinErrorConfig)
    rb_accuracy: RbAccuracyConfig = field(default_factory=RbAccuracyConfig)
    timings: TimingsConfig = field(default_factory=TimingsConfig)

    def validate(self) -> None:
        """Raise ConfigError listing every violated field."""
        errs = []
        if self.experiment not in EXPERIMENTS:
            errs.append(f"experiment: {self.experiment!r} not one of {EXPERIMENTS}")
        if self.seed < 0:
            errs.append(f"seed: must be >= 0, got {self.seed}")
        if self.threads < 1:
            errs.append(f"threads: must be >= 1, got {self.threads}")
        if self.dense_limit < 1:
            errs.append(f"dense_limit: must be >= 1, got {self.dense_limit}")
        if self.mesh.field_n_side < 1:
            errs.append(f"mesh.field_n_side: must be >= 1, got {self.mesh.field_n_side}")
        if self.mesh.fem_n_side < 1:
            errs.append(f"mesh.fem_n_side: must be >= 1, got {self.mesh.fem_n_side}")
        if self.kernel.name not in KERNEL_NAMES:
            errs.append(f"kernel.name: {self.kernel.name!r} not one of {KERNEL_NAMES}")
        if self.kernel.nu <= 0 or self.kernel.nu == round(self.kernel.nu):
            errs.append(f"kernel.nu: must be positive and non-integer, got {self.kernel.nu}")
        if self.kernel.n_lin < 1:
            errs.append(f"kernel.n_lin: must be >= 1, got {self.kernel.n_lin}")
        if self.kernel.ell <= 0:
            errs.append(f"kernel.ell: must be positive, got {self.kernel.ell}")
        if self.kernel.sigma <= 0:
            errs.append(f"kernel.sigma: must be positive, got {self.kernel.sigma}")
        try:
            self.prior.hyperprior()
        except ValueError as exc:
            errs.append(f"prior: {exc}")
        if not 0 < self.prior.variance_fraction <= 1:
            errs.append(f"prior.variance_fraction: must be in (0, 1], got {self.prior.variance_fraction}")
        if self.prior.n_sto < 0:
            errs.append(f"prior.n_sto: must be >= 0, got {self.prior.n_sto}")
        if self.sampler.kind not in ("full", "rb"):
            errs.append(f"sampler.kind: {self.sampler.kind!r} not 'full' or 'rb'")
        if self.sampler.n_samples < 1:
            errs.append(f"sampler.n_samples: must be >= 1, got {self.sampler.n_samples}")
        if self.sampler.n_repetitions < 1:
            errs.append(f"sampler.n_repetitions: must be >= 1, got {self.sampler.n_repetitions}")
        if self.sampler.matrix_free not in ("auto", "on", "off"):
            errs.append(f"sampler.matrix_free: {self.sampler.matrix_free!r} not auto/on/off")
        if self.offline.n_snapshots < 1:
            errs.append(f"offline.n_snapshots: must be >= 1, got {self.offline.n_snapshots}")
        if self.offline.lambda_min < 0:
            errs.append(f"offline.lambda_min: must be >= 0, got {self.offline.lambda_min}")
        if self.mcmc.n_steps < 1:
            errs.append(f"mcmc.n_steps: must be >= 1, got {self.mcmc.n_steps}")
        if self.mcmc.n_chains < 1:
            errs.append(f"mcmc.n_chains: must be >= 1, got {self.mcmc.n_chains}")
        if not 0 < self.mcmc.beta <= 1:
            errs.append(f"mcmc.beta: must be in (0, 1], got {self.mcmc.beta}")
        if not 0 <= self.mcmc.burn_in < self.mcmc.n_steps:
            errs.append(f"mcmc.burn_in: must be in [0, n_steps), got {self.mcmc.burn_in}")
        if self.mcmc.density_variant not in ("span", "fullrank"):
            errs.append(f"mcmc.density_variant: {self.mcmc.density_variant!r} not span/fullrank")
        if self.data.gamma2 <= 0:
            errs.append(f"data.gamma2: must be positive, got {self.data.gamma2}")
        if self.data.obs_grid < 1:
            errs.append(f"data.obs_grid: must be >= 1, got {self.data.obs_grid}")
        if self.experiment in ("verify_52", "forward_53", "bayes_pde_54", "bayes_field_55") \
                and self.sampler.kind == "rb" and not self.sampler.basis_dir:
            errs.append("sampler.basis_dir: required for sampler.kind='rb'")
        if errs:
            raise ConfigError(errs)

    def to_dict(self) -> dict:
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            out[f.name] = dict(v.__dict__) if hasattr(v, "__dict__") and not isinstance(v, (int, float, str, bool, list)) else v
        return out


_SECTIONS = {
    "mesh": MeshConfig, "kernel": KernelConfig, "prior": PriorConfig,
    "sampler": SamplerConfig, "offline": OfflineConfig, "mcmc": McmcConfig,
    "data": DataConfig, "lin_error": LinErrorConfig,
    "rb_accuracy": RbAccuracyConfig, "timings": TimingsConfig,
}


def config_from_dict(doc: dict) -> RunConfig:
    cfg = RunConfig()
    errs = []
    for key, val in doc.items():
        if key in _SECTIONS:
            section = getattr(cfg, key)
            if not isinstance(val, dict):
                errs.append(f"{key}: expected a table")
                continue
            items = dict(val)
            # a preset seeds the section; explicit keys override it
            if key == "prior" and "preset" in items:
                section.preset = items.pop("preset")
                section.resolve_preset()
            for k, v in items.items():
                if not hasattr(section, k):
                    errs.append(f"{key}.{k}: unknown field")
                else:
                    setattr(section, k, v)
        elif hasattr(cfg, key):
            setattr(cfg, key, val)
        else:
            errs.append(f"{key}: unknown field")
    if errs:
        raise ConfigError(errs)
    cfg.validate()
    return cfg


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        doc = tomllib.loads(path.read_text())
    except (OSError, tomllib.TOMLDecodeError) as exc:
        raise ConfigError([f"config {path}: {exc}"]) from exc
    return config_from_dict(doc)
