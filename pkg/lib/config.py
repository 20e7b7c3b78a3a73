"""
Resolved run configuration: JSON file first, then CLI flags, then the
GEN_LAB_SEED environment fallback for the seed.
"""
import json
import os
from dataclasses import asdict, dataclass, field, fields

from dotenv import load_dotenv

import lib.constants as constants
from lib import storage
from lib.datasets import DatasetConfig
from lib.gen_model import GenSpec, NeuralProcessSpec
from lib.trainer import MeshOptConfig, TrainConfig


class ConfigError(ValueError):
    pass


def parse_mesh_sizes(text):
    """'2..7' or '2,3,4' -> (2, 3, 4, ...)."""
    if isinstance(text, (list, tuple)):
        return tuple(int(k) for k in text)
    text = str(text).strip()
    try:
        if '..' in text:
            lo, hi = text.split('..')
            sizes = tuple(range(int(lo), int(hi) + 1))
        else:
            sizes = tuple(int(k) for k in text.split(',') if k.strip())
    except ValueError:
        raise ConfigError(f"bad mesh size list '{text}' (use '2..7' or '2,3,4')")
    if not sizes or min(sizes) < 2:
        raise ConfigError(f"mesh sizes must be >= 2, got '{text}'")
    return sizes


def parse_seeds(text):
    """'0,1,2' or a list -> (0, 1, 2)."""
    if isinstance(text, (list, tuple)):
        return tuple(int(s) for s in text)
    try:
        seeds = tuple(int(s) for s in str(text).split(',') if s.strip())
    except ValueError:
        raise ConfigError(f"bad seed list '{text}' (use '0,1,2')")
    if not seeds:
        raise ConfigError('need at least one seed')
    return seeds


@dataclass
class ExperimentConfig:
    command: str = ''
    seed: int = None
    seeds: tuple = None
    jobs: int = 1
    verbose: bool = False
    data: str = None
    out: str = None
    force: bool = False
    model: str = 'gen'
    mesh_sizes: tuple = (2, 3, 4, 5)
    eval_sizes: tuple = ()
    probe_sizes: tuple = (6, 7)
    gen_epochs: int = constants.GEN_EPOCHS
    np_epochs: int = constants.NP_EPOCHS
    weight_lr: float = constants.WEIGHT_LR
    position_lr: float = constants.POSITION_LR
    batch_size: int = constants.BATCH_SIZE
    train_positions: bool = False
    t_rule: object = 'diameter'
    representation: str = 'soft_nearest'
    temperature: float = constants.SOFTMAX_TEMPERATURE
    position_steps: int = constants.POSITION_STEPS
    adapt_scenarios: int = constants.ADAPT_SCENARIOS
    position_inits: int = constants.POSITION_INITS
    checkpoints: tuple = ()
    probe: bool = False
    reports: tuple = ()
    dataset: dict = field(default_factory=dict)

    def __post_init__(self):
        self.mesh_sizes = parse_mesh_sizes(self.mesh_sizes)
        self.eval_sizes = parse_mesh_sizes(self.eval_sizes) if self.eval_sizes else ()
        self.probe_sizes = parse_mesh_sizes(self.probe_sizes) if self.probe_sizes else ()
        if self.seeds is not None:
            self.seeds = parse_seeds(self.seeds)
        self.reports = tuple(self.reports)
        self.checkpoints = tuple(self.checkpoints)
        if self.model not in ('gen', 'gen-independent', 'np', 'both'):
            raise ConfigError(f"unknown model '{self.model}'")
        if isinstance(self.t_rule, str) and self.t_rule != 'diameter':
            try:
                self.t_rule = int(self.t_rule)
            except ValueError:
                raise ConfigError(f"t_rule must be 'diameter' or an integer, got '{self.t_rule}'")
        if self.jobs < 1:
            raise ConfigError('jobs must be >= 1')

    # --- resolution ---
    @classmethod
    def resolve(cls, config_path=None, overrides=None):
        """File values, overridden by non-None CLI values, then the seed fallback."""
        load_dotenv()
        values = {}
        if config_path:
            values.update(load_config_file(config_path))
        for key, value in (overrides or {}).items():
            if value is None:
                continue
            if isinstance(value, dict) and isinstance(values.get(key), dict):
                values[key] = {**values[key], **value}
            else:
                values[key] = value
        known = {f.name for f in fields(cls)}
        unknown = set(values) - known
        if unknown:
            raise ConfigError(f"unknown config keys {sorted(unknown)}")
        try:
            config = cls(**values)
        except (TypeError, ValueError) as e:
            raise ConfigError(str(e))
        if config.seed is None:
            env_seed = os.getenv(constants.SEED_ENV_VAR)
            try:
                config.seed = int(env_seed) if env_seed not in (None, '') else constants.DEFAULT_SEED
            except ValueError:
                raise ConfigError(f"{constants.SEED_ENV_VAR} must be an integer, got '{env_seed}'")
        if config.seeds is None:
            config.seeds = tuple(config.seed + i for i in range(len(constants.EVAL_SEEDS)))
        return config

    def to_json(self):
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}

    def save(self, run_dir):
        storage.atomic_write_json(os.path.join(run_dir, constants.CONFIG_FILE), self.to_json())

    def data_dir(self):
        return self.data or os.path.join(constants.DATA_DIR, self.dataset.get('space', 'square'))

    def run_dir(self):
        return self.out or os.path.join(constants.RUNS_DIR, f"{self.command}_seed{self.seed}")

    # --- typed views ---
    def dataset_config(self):
        try:
            return DatasetConfig(**self.dataset)
        except (TypeError, ValueError) as e:
            raise ConfigError(f"dataset config: {e}")

    def gen_spec(self, space, input_dims, output_dims):
        return GenSpec(input_dims=input_dims, output_dims=output_dims, space=space,
                       representation=self.representation, temperature=self.temperature, t_rule=self.t_rule)

    def np_spec(self, space_dim, n_channels, value_dim, output_dim):
        return NeuralProcessSpec(space_dim=space_dim, n_channels=n_channels, value_dim=value_dim, output_dim=output_dim)

    def train_config(self, seed, model='gen'):
        return TrainConfig(epochs=self.np_epochs if model == 'np' else self.gen_epochs, batch_size=self.batch_size,
                           weight_lr=self.weight_lr, position_lr=self.position_lr, mesh_sizes=self.mesh_sizes,
                           seed=seed, train_positions=self.train_positions and model != 'np',
                           shared_weights=model != 'gen-independent', verbose=self.verbose)

    def mesh_opt_config(self, seed):
        return MeshOptConfig(steps=self.position_steps, position_lr=self.position_lr,
                             adapt_scenarios=self.adapt_scenarios, inits=self.position_inits,
                             seed=seed, verbose=self.verbose)


def load_config_file(path):
    if not os.path.exists(path):
        raise ConfigError(f"config file {path} not found")
    try:
        payload = storage.read_json(path)
    except json.JSONDecodeError as e:
        raise ConfigError(f"config file {path} is not valid JSON: {e}")
    if not isinstance(payload, dict):
        raise ConfigError(f"config file {path} must hold a JSON object")
    return payload
