"""
Training and evaluation for GENs and the Neural Process baseline, plus node-position
optimization with frozen weights.

Training draws one batch of scenarios per gradient step and cycles the mesh size per
batch, so a shared-weight GEN sees every configured size each epoch.
"""
from __future__ import annotations

import time
from dataclasses import asdict, dataclass, field
from datetime import datetime

import numpy as np

import lib.constants as constants
from lib import autodiff as ad
from lib.autodiff import AdamState, Tensor, adam_step
from lib.gen_model import (GenParams, GenSpec, InputBatch, NeuralProcessParams, NeuralProcessSpec, QueryBatch,
                           gen_forward, gen_global_forward, np_baseline_forward)
from lib.geometry import SpaceKind, delaunay, delaunay_with_jitter, halton_points, mesh_for
from lib.reports import EvalReport
from lib.representation import RepresentationFn, RepresentationKind


class TrainingDivergedError(RuntimeError):
    def __init__(self, message, epoch=None, step=None, mesh_k=None):
        super().__init__(f"{message} (epoch={epoch}, step={step}, mesh_k={mesh_k})")
        self.epoch = epoch
        self.step = step
        self.mesh_k = mesh_k


@dataclass
class TrainConfig:
    epochs: int = constants.GEN_EPOCHS
    batch_size: int = constants.BATCH_SIZE
    weight_lr: float = constants.WEIGHT_LR
    position_lr: float = constants.POSITION_LR
    mesh_sizes: tuple = (2, 3, 4, 5)
    seed: int = constants.DEFAULT_SEED
    train_positions: bool = False
    shared_weights: bool = True
    verbose: bool = False

    def __post_init__(self):
        self.mesh_sizes = tuple(int(k) for k in self.mesh_sizes)
        if self.weight_lr < 0 or self.position_lr < 0:
            raise ValueError('learning rates must be non-negative')
        if not self.mesh_sizes or min(self.mesh_sizes) < 2:
            raise ValueError('mesh sizes must be >= 2')
        if self.epochs < 0 or self.batch_size < 1:
            raise ValueError('epochs must be >= 0 and batch_size >= 1')


@dataclass
class MeshOptConfig:
    steps: int = constants.POSITION_STEPS
    position_lr: float = constants.POSITION_LR
    adapt_scenarios: int = constants.ADAPT_SCENARIOS
    inits: int = constants.POSITION_INITS
    seed: int = constants.DEFAULT_SEED
    verbose: bool = False

    def __post_init__(self):
        if self.position_lr < 0 or self.steps < 0:
            raise ValueError('position_lr and steps must be non-negative')
        if self.adapt_scenarios < 1 or self.inits < 1:
            raise ValueError('need at least one adaptation scenario and one initialization')


# --- Loss ---
def sft_loss(predictions, targets):
    """Squared error summed over output dims, averaged over query samples."""
    predictions = ad.as_tensor(predictions)
    targets = np.asarray(targets, dtype=np.float64)
    if predictions.shape[0] == 0:
        raise ValueError('loss over an empty query set')
    if predictions.shape != targets.shape:
        raise ad.ShapeError(f"predictions {predictions.shape} vs targets {targets.shape}")
    diff = predictions - targets
    return ad.tsum(diff * diff) * (1.0 / predictions.shape[0])


def _is_global(scenario):
    return scenario.global_target is not None


def _targets(scenario):
    if _is_global(scenario):
        return scenario.global_target.reshape(1, -1)
    return scenario.queries.target


# --- Models ---
class GenModel:
    """A trained GEN: one parameter set shared by every mesh size, or one per size,
    plus optional learned node positions per size."""
    kind = 'gen'

    def __init__(self, spec, params_by_k, mesh_sizes, shared_weights=True, positions=None, seed=0):
        self.spec = spec
        self.params_by_k = dict(params_by_k)
        self.mesh_sizes = tuple(mesh_sizes)
        self.shared_weights = shared_weights
        self.positions = {int(k): np.asarray(v, dtype=np.float64) for k, v in (positions or {}).items()}
        self.epoch_wall_s = []
        self.seed = seed

    @classmethod
    def initialize(cls, spec, mesh_sizes, seed, shared_weights=True):
        if shared_weights:
            params = GenParams.initialize(spec, seed)
            return cls(spec, {k: params for k in mesh_sizes}, mesh_sizes, True, seed=seed)
        per_size = {k: GenParams.initialize(spec, np.random.SeedSequence([seed, k])) for k in mesh_sizes}
        return cls(spec, per_size, mesh_sizes, False, seed=seed)

    @property
    def name(self):
        return 'gen' if self.shared_weights else 'gen-independent'

    def params_for(self, k):
        if k in self.params_by_k:
            return self.params_by_k[k]
        if self.shared_weights:
            return next(iter(self.params_by_k.values()))
        raise ValueError(f"no independent model was trained for k={k}")

    def mesh(self, k):
        if k in self.positions:
            return delaunay(self.positions[k], self.spec.space)
        return mesh_for(self.spec.space, k)

    def representation(self, mesh):
        return RepresentationFn(self.spec.representation, mesh, self.spec.temperature)

    def predict(self, scenario, k, mesh=None, positions=None):
        rep = self.representation(mesh if mesh is not None else self.mesh(k))
        params = self.params_for(k)
        steps = self.spec.steps_for(k)
        if _is_global(scenario):
            return gen_global_forward(scenario.inputs, params, rep, steps, positions).reshape(1, -1)
        return gen_forward(scenario.inputs, scenario.queries, params, rep, steps, positions)

    def _param_sets(self):
        if self.shared_weights:
            return [('', self.params_for(self.mesh_sizes[0]))]
        return [(f"k{k}/", self.params_by_k[k]) for k in self.mesh_sizes]

    def named_parameters(self):
        return [(prefix + name, t) for prefix, params in self._param_sets() for name, t in params.named_parameters()]

    @property
    def num_params(self):
        return self.params_for(self.mesh_sizes[0]).num_params

    def header(self):
        return {'model': self.kind, 'name': self.name, 'spec': self.spec.to_json(), 'space': self.spec.space,
                'representation': self.spec.representation, 'temperature': self.spec.temperature,
                'mesh_sizes': list(self.mesh_sizes), 'shared_weights': self.shared_weights,
                'positions': {str(k): v.tolist() for k, v in sorted(self.positions.items())},
                'seed': self.seed, 'epoch_wall_s': list(self.epoch_wall_s)}

    def save(self, path):
        ad.save_parameters(path, self.named_parameters(), self.header())


class NeuralProcessModel:
    kind = 'np'
    name = 'np'

    def __init__(self, params, seed=0):
        self.params = params
        self.spec = params.spec
        self.seed = seed
        self.epoch_wall_s = []

    def predict(self, scenario, k=None, mesh=None, positions=None):
        if _is_global(scenario):
            return np_baseline_forward(scenario.inputs, None, self.params)
        return np_baseline_forward(scenario.inputs, scenario.queries, self.params)

    def named_parameters(self):
        return self.params.named_parameters()

    @property
    def num_params(self):
        return self.params.num_params

    def header(self):
        return {'model': self.kind, 'name': self.name, 'spec': self.spec.to_json(), 'seed': self.seed,
                'epoch_wall_s': list(self.epoch_wall_s)}

    def save(self, path):
        ad.save_parameters(path, self.named_parameters(), self.header())


def load_model(path):
    header, arrays = ad.load_parameters(path)
    if header.get('model') == NeuralProcessModel.kind:
        model = NeuralProcessModel(NeuralProcessParams.initialize(NeuralProcessSpec.from_json(header['spec'])))
    elif header.get('model') == GenModel.kind:
        spec = GenSpec.from_json(header['spec'])
        model = GenModel.initialize(spec, header['mesh_sizes'], 0, header.get('shared_weights', True))
        model.positions = {int(k): np.array(v, dtype=np.float64) for k, v in header.get('positions', {}).items()}
    else:
        raise ValueError(f"{path} holds an unknown model kind {header.get('model')!r}")
    ad.assign_parameters(model.named_parameters(), arrays)
    model.seed = header.get('seed', 0)
    model.epoch_wall_s = list(header.get('epoch_wall_s', []))
    return model


# --- Training ---
def _train_pairs(houses):
    pairs = [(h.house_id, s) for h in houses if h.split == 'train' for s in h.scenarios]
    if not pairs:
        raise ValueError('the train split is empty')
    return pairs


def _batch_loss(model, batch, k, mesh=None, positions=None):
    total = None
    for scenario in batch:
        loss = sft_loss(model.predict(scenario, k, mesh, positions), _targets(scenario))
        total = loss if total is None else total + loss
    return total * (1.0 / len(batch))


def _diverged(e, epoch, step, k):
    return TrainingDivergedError(f"training diverged: {e}", epoch=epoch, step=step, mesh_k=k)


def train_gen(houses, spec, config, on_epoch=None):
    """Trains a GEN on the train split; returns (GenModel, loss history rows).

    `on_epoch(model, epoch)` runs after every epoch (checkpointing).
    """
    pairs = _train_pairs(houses)
    if config.train_positions:
        if spec.space != SpaceKind.SQUARE.value or spec.representation != RepresentationKind.SOFT_NEAREST.value:
            raise ValueError('node positions train only on the square with soft_nearest')
    rng = np.random.Generator(np.random.Philox(config.seed))
    model = GenModel.initialize(spec, config.mesh_sizes, config.seed, config.shared_weights)

    weight_states = {}
    for k in config.mesh_sizes:
        key = 0 if config.shared_weights else k
        if key not in weight_states:
            weight_states[key] = AdamState.for_params(model.params_for(k).parameters(), config.weight_lr)
    position_tensors, position_states, meshes = {}, {}, {}
    if config.train_positions:
        for k in config.mesh_sizes:
            position_tensors[k] = Tensor(mesh_for(spec.space, k).positions, requires_grad=True, name=f"positions{k}")
            position_states[k] = AdamState.for_params([position_tensors[k]], config.position_lr)
            meshes[k], used = delaunay_with_jitter(position_tensors[k].data, rng)
            position_tensors[k].data[...] = used

    history = []
    step = 0
    for epoch in range(config.epochs):
        started = time.perf_counter()
        order = rng.permutation(len(pairs))
        epoch_losses = []
        for start in range(0, len(order), config.batch_size):
            batch = [pairs[i][1] for i in order[start:start + config.batch_size]]
            k = config.mesh_sizes[step % len(config.mesh_sizes)]
            params = model.params_for(k).parameters()
            try:
                loss = _batch_loss(model, batch, k, meshes.get(k), position_tensors.get(k))
                grads = ad.backward(loss)
                adam_step(params, grads.for_params(params), weight_states[0 if config.shared_weights else k])
                if config.train_positions:
                    _position_step(position_tensors[k], grads, position_states[k])
            except ad.NonFiniteError as e:
                raise _diverged(e, epoch, step, k)
            if config.train_positions:
                meshes[k], used = delaunay_with_jitter(position_tensors[k].data, rng)
                position_tensors[k].data[...] = used
            history.append({'step': step, 'epoch': epoch, 'mesh_k': k, 'loss': loss.item()})
            epoch_losses.append(loss.item())
            step += 1

        model.epoch_wall_s.append(time.perf_counter() - started)
        if config.train_positions:
            model.positions = {k: t.data.copy() for k, t in position_tensors.items()}
        if config.verbose:
            print(f"[{datetime.now()}] {model.name} epoch {epoch + 1}/{config.epochs} "
                  f"loss={np.mean(epoch_losses):.6f} sizes={list(config.mesh_sizes)} "
                  f"wall={model.epoch_wall_s[-1]:.1f}s")
        if on_epoch is not None:
            on_epoch(model, epoch)
    return model, history


def _position_step(positions, grads, state):
    adam_step([positions], [grads[positions]], state)
    positions.data[...] = np.clip(positions.data, 0.0, 1.0)


def train_np(houses, spec, config, on_epoch=None):
    """Trains the Neural Process baseline; same loop, no meshes."""
    pairs = _train_pairs(houses)
    rng = np.random.Generator(np.random.Philox(config.seed))
    model = NeuralProcessModel(NeuralProcessParams.initialize(spec, config.seed), config.seed)
    params = model.params.parameters()
    state = AdamState.for_params(params, config.weight_lr)
    history = []
    step = 0
    for epoch in range(config.epochs):
        started = time.perf_counter()
        order = rng.permutation(len(pairs))
        epoch_losses = []
        for start in range(0, len(order), config.batch_size):
            batch = [pairs[i][1] for i in order[start:start + config.batch_size]]
            try:
                loss = _batch_loss(model, batch, None)
                adam_step(params, ad.backward(loss).for_params(params), state)
            except ad.NonFiniteError as e:
                raise _diverged(e, epoch, step, 1)
            history.append({'step': step, 'epoch': epoch, 'mesh_k': 1, 'loss': loss.item()})
            epoch_losses.append(loss.item())
            step += 1
        model.epoch_wall_s.append(time.perf_counter() - started)
        if config.verbose:
            print(f"[{datetime.now()}] np epoch {epoch + 1}/{config.epochs} "
                  f"loss={np.mean(epoch_losses):.6f} wall={model.epoch_wall_s[-1]:.1f}s")
        if on_epoch is not None:
            on_epoch(model, epoch)
    return model, history


# --- Evaluation ---
def scenario_errors(model, scenario, k, mesh=None):
    """(sum of squared errors, sample count) for one scenario."""
    pred = model.predict(scenario, k, mesh).data
    diff = pred - _targets(scenario)
    return float(np.sum(diff * diff)), len(diff)


def mse_over(model, scenarios, k, mesh=None):
    total, count = 0.0, 0
    for scenario in scenarios:
        sse, n = scenario_errors(model, scenario, k, mesh)
        total += sse
        count += n
    if count == 0:
        raise ValueError('no query samples to evaluate')
    return total / count


def _mean_wall(model):
    return float(np.mean(model.epoch_wall_s)) if model.epoch_wall_s else 0.0


def evaluate(models, houses, mesh_sizes, split='test', baselines=None, trained_sizes=None):
    """MSE over every query of the split, one row per (model, mesh size, seed).

    `models` and `baselines` map seed -> trained model; baselines report mesh_k = 1.
    Rows for sizes outside `trained_sizes` are flagged as extrapolation.
    """
    scenarios = [s for h in houses if h.split == split for s in h.scenarios]
    report = EvalReport()
    for seed in sorted(models):
        model = models[seed]
        seen = set(trained_sizes if trained_sizes is not None else model.mesh_sizes)
        for k in mesh_sizes:
            report.add(model.name, k, seed, split, mse_over(model, scenarios, k), model.num_params,
                       _mean_wall(model), extrapolation=k not in seen)
    for seed in sorted(baselines or {}):
        model = baselines[seed]
        report.add(model.name, 1, seed, split, mse_over(model, scenarios, None), model.num_params, _mean_wall(model))
    return report


def generalization_probe(models, houses, test_sizes=(6, 7), split='test'):
    """Evaluates on the trained sizes and on `test_sizes`, flagging the latter.

    Independent per-size models have no weights for untrained sizes, so they only
    report the sizes they were trained on.
    """
    rows = EvalReport()
    for seed in sorted(models):
        trained = tuple(models[seed].mesh_sizes)
        sizes = sorted(set(trained) | set(test_sizes)) if models[seed].shared_weights else sorted(trained)
        rows.extend(evaluate({seed: models[seed]}, houses, sizes, split, trained_sizes=trained))
    return rows


# --- Node-position optimization ---
@dataclass
class PositionOptResult:
    initial_positions: np.ndarray
    positions: np.ndarray
    loss_history: list = field(default_factory=list)
    edge_changes: int = 0
    steps: int = 0

    def to_json(self):
        payload = asdict(self)
        payload['initial_positions'] = self.initial_positions.tolist()
        payload['positions'] = self.positions.tolist()
        return payload


def optimize_node_positions(model, scenarios, initial_positions, config):
    """Gradient steps on node positions with the module weights frozen.

    Connectivity is held fixed within a step; after each step positions are clamped
    to [0, 1]^2 and the Delaunay triangulation is recomputed. Returns (mesh, result).
    """
    if model.spec.space != SpaceKind.SQUARE.value:
        raise ValueError('node positions are optimized on the unit square')
    if model.spec.representation != RepresentationKind.SOFT_NEAREST.value:
        raise ValueError('position gradients need the soft_nearest representation')
    if not scenarios:
        raise ValueError('no adaptation scenarios')
    initial = np.clip(np.asarray(initial_positions, dtype=np.float64), 0.0, 1.0)
    k = int(round(np.sqrt(len(initial))))
    rng = np.random.Generator(np.random.Philox(config.seed))
    mesh, used = delaunay_with_jitter(initial, rng)
    positions = Tensor(used, requires_grad=True, name='positions')
    state = AdamState.for_params([positions], config.position_lr)

    losses = []
    edge_changes = 0
    for step in range(config.steps):
        try:
            loss = _batch_loss(model, scenarios, k, mesh, positions)
            grads = ad.backward(loss)
            _position_step(positions, grads, state)
        except ad.NonFiniteError as e:
            raise _diverged(e, None, step, k)
        losses.append(loss.item())
        new_mesh, used = delaunay_with_jitter(positions.data, rng)
        positions.data[...] = used
        edge_changes += len(set(mesh.undirected_edges()) ^ set(new_mesh.undirected_edges()))
        mesh = new_mesh
        if config.verbose and (step + 1) % 50 == 0:
            print(f"[DEBUG] position step {step + 1}/{config.steps} k={k} loss={losses[-1]:.6f}")
    final = _batch_loss(model, scenarios, k, mesh, positions).item()
    losses.append(final)
    result = PositionOptResult(initial, positions.data.copy(), losses, edge_changes, config.steps)
    return mesh, result


def halton_init(k, seed, house_id, init):
    seq = np.random.SeedSequence([seed, house_id, k, init])
    return halton_points(k * k, 2, seed=np.random.Generator(np.random.Philox(seq)))


def mesh_optimization(model, houses, mesh_sizes, config, split='test'):
    """Adapts node positions on the first scenarios of each held-out house and
    measures MSE on that house's remaining scenarios before and after.

    Returns (rows, meshes) where meshes maps (house, k, init) -> (mesh, result).
    """
    rows, meshes = [], {}
    for house in [h for h in houses if h.split == split]:
        adapt = house.scenarios[:config.adapt_scenarios]
        held_out = house.scenarios[config.adapt_scenarios:]
        if not held_out:
            raise ValueError(f"house {house.house_id} has no scenarios left after adaptation")
        for k in mesh_sizes:
            for init in range(config.inits):
                start, _ = delaunay_with_jitter(halton_init(k, config.seed, house.house_id, init),
                                                np.random.Generator(np.random.Philox(config.seed)))
                before = mse_over(model, held_out, k, start)
                mesh, result = optimize_node_positions(model, adapt, start.positions, config)
                after = mse_over(model, held_out, k, mesh)
                rows.append({'house': house.house_id, 'mesh_k': k, 'init': init, 'seed': config.seed,
                             'before_mse': before, 'after_mse': after, 'edge_changes': result.edge_changes,
                             'steps': result.steps, 'initial_loss': result.loss_history[0],
                             'final_loss': result.loss_history[-1]})
                meshes[(house.house_id, k, init)] = (mesh, result)
                if config.verbose:
                    print(f"[{datetime.now()}] house {house.house_id} k={k} init={init}: "
                          f"mse {before:.5f} -> {after:.5f}, {result.edge_changes} edge changes")
    return rows, meshes


# --- Gradient check ---
def gradient_check(seed=0, n_inputs=8, n_queries=8, step=constants.FD_STEP):
    """Analytic vs central-difference gradients of the MSE loss of a small k=2 GEN,
    for every module parameter and the node coordinates (connectivity frozen).

    Returns {tensor name: max relative error}.
    """
    rng = np.random.Generator(np.random.Philox(seed))
    spec = GenSpec(input_dims=(3, 3), output_dims=(1,), latent_dim=8, message_dim=4, encoder_hidden=8,
                   decoder_hidden=8, edge_hidden=8, node_hidden=8)
    params = GenParams.initialize(spec, seed)
    mesh = mesh_for(spec.space, 2)
    positions = Tensor(mesh.positions + rng.uniform(-0.05, 0.05, mesh.positions.shape).clip(-mesh.positions, 1 - mesh.positions),
                       requires_grad=True, name='positions')
    rep = RepresentationFn(spec.representation, mesh, spec.temperature)
    inputs = InputBatch(rng.uniform(0.0, 1.0, (n_inputs, 2)), rng.integers(0, 2, n_inputs),
                        rng.standard_normal((n_inputs, 3)))
    queries = QueryBatch(rng.uniform(0.0, 1.0, (n_queries, 2)), np.zeros(n_queries, dtype=np.int64),
                         rng.standard_normal((n_queries, 1)))

    def loss_fn():
        return sft_loss(gen_forward(inputs, queries, params, rep, spec.steps_for(2), positions), queries.target)

    named = params.named_parameters() + [('positions', positions)]
    tensors = [t for _, t in named]
    analytic = ad.backward(loss_fn()).for_params(tensors)
    numeric = ad.finite_diff_grad(loss_fn, tensors, step)
    return {name: ad.relative_error(a, n) for (name, _), a, n in zip(named, analytic, numeric)}
