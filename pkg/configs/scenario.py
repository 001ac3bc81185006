"""
Run configuration
Scenario files are flat INI key/value lists; section headers only group keys
"""
import configparser
import logging
from typing import Dict, List, Literal, Optional, Sequence

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from misspec.errors import ConfigError
from misspec.posterior import McmcConfig

logger = logging.getLogger(__name__)

COMMANDS = ('curve', 'project', 'test-bounds', 'cover', 'rate', 'verify')


class RunConfig(BaseModel):
    """One command invocation"""
    model_config = ConfigDict(extra='forbid')

    command: Literal['curve', 'project', 'test-bounds', 'cover', 'rate', 'verify']
    scenario_path: Optional[str] = None
    out_dir: str = 'out'
    master_seed: int = Field(ge=0, lt=1 << 64)
    overrides: List[str] = Field(default_factory=list)


class ScenarioConfig(BaseModel):
    """Every key a scenario file or --set may carry"""
    model_config = ConfigDict(extra='forbid')

    # experiment
    scenario: Literal['parametric_interior', 'parametric_boundary', 'mixture',
                      'regression_normal', 'regression_laplace'] = 'parametric_interior'
    n_list: Optional[List[int]] = None
    reps: Optional[int] = None
    tail_radius: Optional[float] = None
    grid_points: Optional[int] = None
    truth_scale: Optional[float] = None

    # mixture
    M: float = 2.0
    support_points: int = 21
    alpha_total: Optional[float] = None
    mcmc_steps: int = 20_000
    mcmc_burnin: int = 5_000
    proposal_scale: float = 0.3
    thin: int = 10

    # regression
    points_per_axis: int = 31
    bound: float = 10.0

    # curve
    curve: Literal['centered_pstar', 'shifted_pstar'] = 'centered_pstar'
    n_alphas: int = 33

    # test-bounds
    power_n: List[int] = Field(default_factory=lambda: [5, 10, 20, 40])
    power_reps: int = 100_000
    shell_n: int = 50
    shell_eps: float = 0.3
    shell_J: int = 2
    shell_jmax: int = 3
    shell_reps: int = 20_000

    # cover
    cover_eps: float = 0.3
    entropy_eps: List[float] = Field(default_factory=lambda: [0.2, 0.1, 0.05, 0.02])
    entropy_probes: int = 10_000

    # evidence
    evidence_n: int = 200
    evidence_eps: float = 0.15
    evidence_C: float = 2.0
    evidence_reps: int = 400

    # verify
    verify_tuples: int = 500

    @field_validator('n_list', 'power_n', 'entropy_eps', mode='before')
    @classmethod
    def split_list(cls, value):
        if isinstance(value, str):
            return [v.strip() for v in value.split(',') if v.strip()]
        return value

    def mcmc(self) -> McmcConfig:
        return McmcConfig(steps=self.mcmc_steps, burnin=self.mcmc_burnin,
                          proposal_scale=self.proposal_scale, thin=self.thin)

    def scenario_options(self, master_seed: int) -> Dict:
        """Keyword arguments for the scenario builder of the selected model"""
        options = {'master_seed': master_seed}
        for key in ('n_list', 'reps', 'tail_radius'):
            if getattr(self, key) is not None:
                options[key] = getattr(self, key)
        if self.scenario.startswith('parametric') and self.grid_points is not None:
            options['grid_points'] = self.grid_points
        if self.scenario in ('parametric_interior', 'mixture') and self.truth_scale is not None:
            options['truth_scale'] = self.truth_scale
        if self.scenario == 'mixture':
            options.update(M=self.M, support_points=self.support_points,
                           alpha_total=self.alpha_total, mcmc=self.mcmc())
        if self.scenario.startswith('regression'):
            options.update(points_per_axis=self.points_per_axis, bound=self.bound)
        return options


def valid_keys() -> List[str]:
    return sorted(ScenarioConfig.model_fields)


def parse_overrides(pairs: Sequence[str]) -> Dict[str, str]:
    values = {}
    for pair in pairs:
        if '=' not in pair:
            raise ConfigError(f"override {pair!r} is not of the form key=value", valid_keys())
        key, value = pair.split('=', 1)
        values[key.strip()] = value.strip()
    return values


def _has_section(text: str) -> bool:
    for line in text.splitlines():
        stripped = line.strip()
        if stripped and not stripped.startswith(('#', ';')):
            return stripped.startswith('[')
    return False


def read_scenario_file(path: str) -> Dict[str, str]:
    """Flat key/value pairs of a scenario file; keys before any header are allowed"""
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    try:
        with open(path, 'r') as f:
            text = f.read()
    except OSError as e:
        raise ConfigError(f"cannot read scenario file {path!r}: {e.strerror}") from e
    try:
        parser.read_string(text if _has_section(text) else '[scenario]\n' + text, source=path)
    except configparser.Error as e:
        raise ConfigError(f"malformed scenario file {path!r}: {e}") from e
    defaults = parser.defaults()
    values: Dict[str, str] = dict(defaults)
    for section in parser.sections():
        for key, value in parser.items(section):
            if key in defaults:
                continue
            if key in values:
                raise ConfigError(f"key {key!r} appears in more than one section")
            values[key] = value
    return values


def load_scenario_config(path: Optional[str] = None,
                         overrides: Sequence[str] = ()) -> ScenarioConfig:
    """Merge a scenario file with key=value overrides and validate the result"""
    values = read_scenario_file(path) if path else {}
    values.update(parse_overrides(overrides))
    unknown = sorted(set(values) - set(ScenarioConfig.model_fields))
    if unknown:
        raise ConfigError(f"unknown configuration keys: {', '.join(unknown)}", valid_keys())
    try:
        cfg = ScenarioConfig(**values)
    except ValidationError as e:
        raise ConfigError(f"invalid configuration: {e}") from e
    logger.debug(f"scenario config: {cfg.model_dump()}")
    return cfg
