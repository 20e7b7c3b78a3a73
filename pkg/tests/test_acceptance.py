"""
End-to-end training runs at desk scale. Slow: run with `pytest --runslow`.
"""
import numpy as np
import pytest

from lib import geometry
from lib.datasets import DatasetConfig, channel_dims, generate_dataset
from lib.gen_model import GenSpec, NeuralProcessSpec
from lib.trainer import (GenModel, MeshOptConfig, TrainConfig, evaluate, generalization_probe, mesh_optimization,
                         mse_over, train_gen, train_np)

pytestmark = pytest.mark.slow

SEEDS = (0, 1, 2)


def _train_all(houses, manifest, mesh_sizes=(2, 3, 4, 5)):
    input_dims, output_dims = channel_dims(manifest)
    space = geometry.get_space(manifest.space)
    spec = GenSpec(input_dims=input_dims, output_dims=output_dims, space=manifest.space)
    np_spec = NeuralProcessSpec(space_dim=space.dim, n_channels=len(input_dims), value_dim=max(input_dims),
                                output_dim=output_dims[0])
    gens, baselines = {}, {}
    for seed in SEEDS:
        gens[seed], _ = train_gen(houses, spec, TrainConfig(mesh_sizes=mesh_sizes, seed=seed))
        baselines[seed], _ = train_np(houses, np_spec, TrainConfig(epochs=300, seed=seed))
    return gens, baselines


@pytest.fixture(scope='module')
def square_run():
    houses, manifest = generate_dataset(DatasetConfig(houses=20, scenarios=16), seed=0)
    gens, baselines = _train_all(houses, manifest)
    return houses, gens, baselines


def test_square_mse_improves_with_mesh_size_and_beats_baseline(square_run):
    houses, gens, baselines = square_run
    report = evaluate(gens, houses, (2, 3, 4, 5), baselines=baselines)
    assert report.median_mse('gen', 4) < report.median_mse('gen', 2)
    assert report.median_mse('gen', 4) < report.median_mse('np', 1)


def test_sphere_gen_beats_baseline():
    houses, manifest = generate_dataset(DatasetConfig(space='sphere', houses=20, scenarios=16), seed=0)
    gens, baselines = _train_all(houses, manifest)
    report = evaluate(gens, houses, (4,), baselines=baselines)
    assert report.median_mse('gen', 4) < report.median_mse('np', 1)


def test_mesh_optimization_does_not_hurt(square_run):
    houses, gens, _ = square_run
    held_out = [h for h in houses if h.split == 'test'][:1]
    for seed in SEEDS:
        rows, meshes = mesh_optimization(gens[seed], held_out, (4,), MeshOptConfig(seed=seed))
        before = np.median([r['before_mse'] for r in rows])
        after = np.median([r['after_mse'] for r in rows])
        assert after <= 1.05 * before
        for mesh, result in meshes.values():
            assert ((result.positions >= 0) & (result.positions <= 1)).all()
            assert geometry.is_delaunay(mesh.positions, mesh.triangles)


def test_shared_checkpoint_extrapolates_without_failure(square_run):
    houses, gens, _ = square_run
    report = generalization_probe({0: gens[0]}, houses, test_sizes=(6, 7))
    frame = report.frame()
    assert sorted(frame['mesh_k']) == [2, 3, 4, 5, 6, 7]
    assert frame.loc[frame['mesh_k'] >= 6, 'extrapolation'].all()
    assert np.isfinite(frame['mse']).all()


def test_trained_gen_is_far_better_than_untrained(square_run):
    houses, gens, _ = square_run
    untrained = {seed: GenModel.initialize(gens[seed].spec, (4,), seed) for seed in SEEDS}
    before = evaluate(untrained, houses, (4,)).median_mse('gen', 4)
    after = evaluate(gens, houses, (4,)).median_mse('gen', 4)
    assert after * 5 < before


def test_training_loss_falls_at_mesh_size_four(square_run):
    houses, gens, _ = square_run
    for seed in SEEDS:
        _, history = train_gen(houses, gens[seed].spec, TrainConfig(mesh_sizes=(4,), seed=seed))
        first = np.mean([row['loss'] for row in history if row['epoch'] == 0])
        last = np.mean([row['loss'] for row in history if row['epoch'] == history[-1]['epoch']])
        assert last < first


def test_global_task_training_cuts_error_tenfold():
    houses, _ = generate_dataset(DatasetConfig(task='global', houses=20, scenarios=16), seed=0)
    spec = GenSpec(input_dims=(1,), output_dims=(1,))
    train = [s for h in houses if h.split == 'train' for s in h.scenarios]
    model, _ = train_gen(houses, spec, TrainConfig(mesh_sizes=(3,), seed=0))
    before = mse_over(GenModel.initialize(spec, (3,), 0), train, 3)
    assert mse_over(model, train, 3) * 10 <= before


def test_single_scenario_overfits():
    houses, manifest = generate_dataset(DatasetConfig(houses=1, scenarios=1, train_houses=1, train_queries=8,
                                                      test_queries=8), seed=3)
    spec = GenSpec(input_dims=channel_dims(manifest)[0])
    model, history = train_gen(houses, spec, TrainConfig(epochs=3000, mesh_sizes=(2,), seed=0))
    assert history[-1]['loss'] < 0.2 * history[0]['loss']
    assert mse_over(model, houses[0].scenarios, 2) < 1e-3
