"""
Experiment datasets: square-Poisson houses, sphere-Poisson houses and the synthetic
global-output task.

On disk a dataset is a directory holding `manifest.json` and `houses/house_XXXX.jsonl`.
The first line of a house file is its header, then one JSON line per scenario.
Every house draws from its own Philox stream spawned off the dataset seed, so the
bytes written do not depend on how many worker threads generated them.
"""
from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field, fields
from datetime import datetime

import numpy as np

import lib.constants as constants
from lib import storage
from lib.gen_model import InputBatch, QueryBatch
from lib.geometry import SpaceKind, get_space
from lib.pde_oracle import (Rect, SquarePoissonProblem, generate_sphere_scenario, integrate_source,
                            random_unit_vectors, solve_square_poisson)
from lib.worker import run_jobs


class DatasetError(ValueError):
    pass


TASK_POISSON = 'poisson'
TASK_GLOBAL = 'global'


@dataclass
class DatasetConfig:
    space: str = SpaceKind.SQUARE.value
    task: str = TASK_POISSON
    houses: int = constants.DEFAULT_HOUSES
    scenarios: int = constants.DEFAULT_SCENARIOS
    train_houses: int = None
    oracle_resolution: int = constants.ORACLE_RESOLUTION
    heater_strength_range: tuple = constants.HEATER_STRENGTH_RANGE
    exterior_temp_range: tuple = constants.EXTERIOR_TEMP_RANGE
    heaters_per_house: tuple = constants.HEATERS_PER_HOUSE
    heater_side_range: tuple = constants.HEATER_SIDE_RANGE
    interior_samples: int = constants.INTERIOR_SAMPLES
    source_samples: int = constants.SOURCE_SAMPLES
    boundary_samples: int = constants.BOUNDARY_SAMPLES
    train_queries: int = constants.TRAIN_QUERIES
    test_queries: int = constants.TEST_QUERIES
    sphere_directions: int = constants.SPHERE_DIRECTIONS
    sphere_inputs: int = constants.SPHERE_INPUTS
    sphere_queries: int = constants.SPHERE_QUERIES
    laplacian_eps: float = constants.LAPLACIAN_EPS
    global_inputs: int = constants.GLOBAL_INPUTS

    def __post_init__(self):
        if self.train_houses is None:
            self.train_houses = self.houses * constants.DEFAULT_TRAIN_HOUSES // constants.DEFAULT_HOUSES
        for name in ('heater_strength_range', 'exterior_temp_range', 'heaters_per_house', 'heater_side_range'):
            setattr(self, name, tuple(getattr(self, name)))
        SpaceKind(self.space)
        if self.task not in (TASK_POISSON, TASK_GLOBAL):
            raise ValueError(f"unknown task '{self.task}'")
        if self.task == TASK_GLOBAL and self.space != SpaceKind.SQUARE.value:
            raise ValueError('the global task is defined on the square')
        if self.houses < 1 or self.scenarios < 1:
            raise ValueError('need at least one house and one scenario')
        if not 0 <= self.train_houses <= self.houses:
            raise ValueError(f"train_houses must lie in [0, {self.houses}]")
        lo, hi = self.heaters_per_house
        if lo < 1 or hi < lo:
            raise ValueError('heaters_per_house must be a range (lo >= 1, hi >= lo)')
        side_lo, side_hi = self.heater_side_range
        if not 0 < side_lo <= side_hi < 1:
            raise ValueError('heater sides must lie in (0, 1)')

    def to_json(self):
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}

    @classmethod
    def from_json(cls, payload):
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in payload.items() if k in known})


@dataclass
class Scenario:
    inputs: InputBatch
    queries: QueryBatch
    global_target: np.ndarray = None

    def to_json(self, index):
        return {
            'scenario': index,
            'inputs': [{'x': x, 'channel': c, 'value': v}
                       for x, c, v in zip(self.inputs.x.tolist(), self.inputs.channel.tolist(), self.inputs.value.tolist())],
            'queries': [{'x': x, 'channel': c, 'target': t}
                        for x, c, t in zip(self.queries.x.tolist(), self.queries.channel.tolist(), self.queries.target.tolist())],
            'global_target': None if self.global_target is None else self.global_target.tolist(),
        }

    @classmethod
    def from_json(cls, payload, space_dim):
        inputs = payload['inputs']
        queries = payload['queries']
        width = max((len(s['value']) for s in inputs), default=1)
        target_width = max((len(q['target']) for q in queries), default=1)
        batch = InputBatch(np.array([s['x'] for s in inputs], dtype=np.float64).reshape(len(inputs), space_dim),
                           np.array([s['channel'] for s in inputs], dtype=np.int64),
                           np.array([s['value'] for s in inputs], dtype=np.float64).reshape(len(inputs), width))
        qbatch = QueryBatch(np.array([q['x'] for q in queries], dtype=np.float64).reshape(len(queries), space_dim),
                            np.array([q['channel'] for q in queries], dtype=np.int64),
                            np.array([q['target'] for q in queries], dtype=np.float64).reshape(len(queries), target_width))
        target = payload.get('global_target')
        return cls(batch, qbatch, None if target is None else np.array(target, dtype=np.float64))


@dataclass
class House:
    house_id: int
    space: str
    split: str
    geometry: dict
    scenarios: list = field(default_factory=list)

    def header(self):
        return {'house_id': self.house_id, 'space': self.space, 'split': self.split, 'geometry': self.geometry}

    def rects(self):
        return [Rect(*r) for r in self.geometry.get('rects', [])]


@dataclass
class DatasetManifest:
    space: str
    task: str
    houses: int
    scenarios_per_house: int
    train_house_ids: list
    test_house_ids: list
    oracle_resolution: int
    seed: int
    config: dict
    format_version: int = constants.DATASET_FORMAT_VERSION
    prng: str = constants.PRNG_ALGORITHM
    reference_scale: dict = field(default_factory=lambda: {'houses': constants.REFERENCE_HOUSES,
                                                       'scenarios': constants.REFERENCE_SCENARIOS})

    def to_json(self):
        return asdict(self)

    @classmethod
    def from_json(cls, payload):
        known = {f.name for f in fields(cls)}
        missing = known - set(payload) - {'prng', 'reference_scale'}
        if missing:
            raise DatasetError(f"manifest is missing fields {sorted(missing)}")
        return cls(**{k: v for k, v in payload.items() if k in known})


def house_stream(seed, n_houses):
    """One independent Philox generator per house."""
    children = np.random.SeedSequence(seed).spawn(n_houses)
    return [np.random.Generator(np.random.Philox(child)) for child in children]


def _split_for(house_id, config):
    return 'train' if house_id < config.train_houses else 'test'


# --- Square Poisson ---
def _random_rects(rng, config):
    lo, hi = config.heaters_per_house
    side_lo, side_hi = config.heater_side_range
    rects = []
    for _ in range(int(rng.integers(lo, hi + 1))):
        w, h = rng.uniform(side_lo, side_hi, size=2)
        x0 = rng.uniform(0.0, 1.0 - w)
        y0 = rng.uniform(0.0, 1.0 - h)
        rects.append(Rect(float(x0), float(y0), float(x0 + w), float(y0 + h)))
    return rects


def _boundary_points(n, rng):
    t = rng.uniform(0.0, 4.0, n)
    side = np.minimum(np.floor(t).astype(np.int64), 3)
    u = t - side
    x = np.choose(side, [u, np.ones(n), 1.0 - u, np.zeros(n)])
    y = np.choose(side, [np.zeros(n), u, np.ones(n), 1.0 - u])
    return np.stack([x, y], axis=1)


def _source_points(rects, n, rng):
    which = rng.integers(0, len(rects), n)
    points = np.zeros((n, 2))
    for r, rect in enumerate(rects):
        rows = np.flatnonzero(which == r)
        points[rows] = rect.sample(rows.size, rng)
    return points


def _square_scenario(rects, rng, config, n_queries):
    strengths = rng.uniform(*config.heater_strength_range, size=len(rects))
    exterior = float(rng.uniform(*config.exterior_temp_range))
    problem = SquarePoissonProblem(exterior_temp=exterior, rects=tuple(rects), strengths=tuple(strengths.tolist()))
    solution = solve_square_poisson(problem, config.oracle_resolution)

    # channel 0: (psi, 0, 0) at interior and source points; channel 1: (0, T_ext, 1) on the walls
    source_x = np.vstack([rng.uniform(0.0, 1.0, (config.interior_samples, 2)),
                          _source_points(rects, config.source_samples, rng)])
    source_v = np.zeros((len(source_x), 3))
    source_v[:, 0] = problem.source(source_x)
    wall_x = _boundary_points(config.boundary_samples, rng)
    wall_v = np.zeros((len(wall_x), 3))
    wall_v[:, 1] = exterior
    wall_v[:, 2] = 1.0
    inputs = InputBatch(np.vstack([source_x, wall_x]),
                        np.concatenate([np.zeros(len(source_x), dtype=np.int64), np.ones(len(wall_x), dtype=np.int64)]),
                        np.vstack([source_v, wall_v]))

    query_x = rng.uniform(0.0, 1.0, (n_queries, 2))
    queries = QueryBatch(query_x, np.zeros(n_queries, dtype=np.int64), solution.evaluate(query_x).reshape(-1, 1))
    return Scenario(inputs, queries)


def _square_house(house_id, rng, config):
    rects = _random_rects(rng, config)
    split = _split_for(house_id, config)
    n_queries = config.train_queries if split == 'train' else config.test_queries
    scenarios = [_square_scenario(rects, rng, config, n_queries) for _ in range(config.scenarios)]
    return House(house_id, SpaceKind.SQUARE.value, split, {'rects': [r.to_json() for r in rects]}, scenarios)


# --- Sphere Poisson ---
def _sphere_house(house_id, rng, config):
    directions = random_unit_vectors(config.sphere_directions, rng)
    scenarios = []
    for _ in range(config.scenarios):
        input_x, laplacians, query_x, targets, _ = generate_sphere_scenario(
            directions, rng, config.sphere_inputs, config.sphere_queries, config.laplacian_eps)
        inputs = InputBatch(input_x, np.zeros(len(input_x), dtype=np.int64), laplacians.reshape(-1, 1))
        queries = QueryBatch(query_x, np.zeros(len(query_x), dtype=np.int64), targets.reshape(-1, 1))
        scenarios.append(Scenario(inputs, queries))
    return House(house_id, SpaceKind.SPHERE.value, _split_for(house_id, config),
                 {'directions': directions.tolist()}, scenarios)


# --- Global output task ---
def _global_house(house_id, rng, config):
    rects = _random_rects(rng, config)
    scenarios = []
    for _ in range(config.scenarios):
        strengths = rng.uniform(*config.heater_strength_range, size=len(rects))
        problem = SquarePoissonProblem(rects=tuple(rects), strengths=tuple(strengths.tolist()))
        n_inside = config.global_inputs // 4
        x = np.vstack([rng.uniform(0.0, 1.0, (config.global_inputs - n_inside, 2)),
                       _source_points(rects, n_inside, rng)])
        inputs = InputBatch(x, np.zeros(len(x), dtype=np.int64), problem.source(x).reshape(-1, 1))
        queries = QueryBatch(np.zeros((0, 2)), np.zeros(0, dtype=np.int64), np.zeros((0, 1)))
        target = np.array([integrate_source(problem, config.oracle_resolution)])
        scenarios.append(Scenario(inputs, queries, target))
    return House(house_id, SpaceKind.SQUARE.value, _split_for(house_id, config),
                 {'rects': [r.to_json() for r in rects]}, scenarios)


def _generate(config, seed, out_dir, builder, jobs, verbose):
    if verbose:
        print(f"[{datetime.now()}] Generating {config.houses} {config.space}/{config.task} houses "
              f"x {config.scenarios} scenarios (seed {seed})...")
    rngs = house_stream(seed, config.houses)
    houses = run_jobs([(h, (lambda h=h: builder(h, rngs[h], config))) for h in range(config.houses)],
                      n_workers=jobs, verbose=verbose)
    houses = [houses[h] for h in range(config.houses)]
    manifest = DatasetManifest(
        space=config.space, task=config.task, houses=config.houses, scenarios_per_house=config.scenarios,
        train_house_ids=[h.house_id for h in houses if h.split == 'train'],
        test_house_ids=[h.house_id for h in houses if h.split == 'test'],
        oracle_resolution=config.oracle_resolution, seed=int(seed), config=config.to_json())
    if out_dir is not None:
        save_dataset(out_dir, houses, manifest)
    return houses, manifest


def generate_square_dataset(config, seed, out_dir=None, jobs=1, verbose=False):
    return _generate(config, seed, out_dir, _square_house, jobs, verbose)


def generate_sphere_dataset(config, seed, out_dir=None, jobs=1, verbose=False):
    return _generate(config, seed, out_dir, _sphere_house, jobs, verbose)


def generate_global_task(config, seed, out_dir=None, jobs=1, verbose=False):
    return _generate(config, seed, out_dir, _global_house, jobs, verbose)


def generate_dataset(config, seed, out_dir=None, jobs=1, verbose=False):
    if config.task == TASK_GLOBAL:
        return generate_global_task(config, seed, out_dir, jobs, verbose)
    if config.space == SpaceKind.SPHERE.value:
        return generate_sphere_dataset(config, seed, out_dir, jobs, verbose)
    return generate_square_dataset(config, seed, out_dir, jobs, verbose)


# --- Serialization ---
def _dumps(payload):
    return json.dumps(payload, separators=(',', ':'))


def house_file(path, house_id):
    return os.path.join(path, constants.HOUSES_DIR, f"house_{house_id:04d}.jsonl")


def save_dataset(path, houses, manifest):
    os.makedirs(os.path.join(path, constants.HOUSES_DIR), exist_ok=True)
    for house in houses:
        lines = [_dumps(house.header())]
        lines += [_dumps(s.to_json(i)) for i, s in enumerate(house.scenarios)]
        storage.atomic_write_text(house_file(path, house.house_id), '\n'.join(lines) + '\n')
    storage.atomic_write_json(os.path.join(path, constants.MANIFEST_FILE), manifest.to_json())


def load_manifest(path):
    manifest_path = os.path.join(path, constants.MANIFEST_FILE)
    if not os.path.exists(manifest_path):
        raise DatasetError(f"no {constants.MANIFEST_FILE} in {path}")
    try:
        payload = storage.read_json(manifest_path)
    except json.JSONDecodeError as e:
        raise DatasetError(f"malformed manifest: {e}")
    version = payload.get('format_version')
    if version != constants.DATASET_FORMAT_VERSION:
        raise DatasetError(f"unsupported dataset format version {version}")
    return DatasetManifest.from_json(payload)


def _load_house(path, house_id, manifest):
    filename = house_file(path, house_id)
    if not os.path.exists(filename):
        raise DatasetError(f"missing house file {filename}")
    with open(filename, 'r') as f:
        lines = [line for line in f.read().split('\n') if line]
    try:
        header = json.loads(lines[0])
        records = [json.loads(line) for line in lines[1:]]
    except (IndexError, json.JSONDecodeError) as e:
        raise DatasetError(f"malformed house file {filename}: {e}")
    if header.get('house_id') != house_id or header.get('space') != manifest.space:
        raise DatasetError(f"house header mismatch in {filename}")
    if len(records) != manifest.scenarios_per_house:
        raise DatasetError(f"{filename} has {len(records)} scenarios, manifest says {manifest.scenarios_per_house}")

    space = get_space(manifest.space)
    scenarios = []
    for record in records:
        try:
            scenario = Scenario.from_json(record, space.dim)
        except (KeyError, TypeError, ValueError) as e:
            raise DatasetError(f"malformed scenario in {filename}: {e}")
        for xs in (scenario.inputs.x, scenario.queries.x):
            if len(xs) and not np.all(space.contains(xs)):
                raise DatasetError(f"scenario {record.get('scenario')} of house {house_id} has a location outside the {manifest.space} space")
        scenarios.append(scenario)
    return House(house_id, header['space'], header['split'], header.get('geometry', {}), scenarios)


def load_dataset(path):
    """Returns (houses ordered by id, manifest)."""
    manifest = load_manifest(path)
    train, test = set(manifest.train_house_ids), set(manifest.test_house_ids)
    if train & test or train | test != set(range(manifest.houses)):
        raise DatasetError('train/test house split must be disjoint and cover every house')
    houses = [_load_house(path, h, manifest) for h in range(manifest.houses)]
    for house in houses:
        expected = 'train' if house.house_id in train else 'test'
        if house.split != expected:
            raise DatasetError(f"house {house.house_id} is marked {house.split}, manifest says {expected}")
    return houses, manifest


def split_houses(houses, split):
    return [h for h in houses if h.split == split]


def channel_dims(manifest):
    """(input channel widths, output channel widths) for a dataset's scenarios."""
    if manifest.task == TASK_GLOBAL or manifest.space == SpaceKind.SPHERE.value:
        return (1,), (1,)
    return (3, 3), (1,)
