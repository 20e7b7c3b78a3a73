import argparse
import os
import sys
from datetime import datetime
from functools import partial

import lib.constants as constants
from lib import storage
from lib.config import ConfigError, ExperimentConfig
from lib.datasets import channel_dims, generate_dataset, load_dataset
from lib.geometry import delaunay, get_space
from lib.notifier import Notifier
from lib.plots import mesh_overlay_svg, write_mse_plot
from lib.reports import EvalReport, write_loss_history, write_mesh_opt_report
from lib.trainer import (GenModel, evaluate, generalization_probe, gradient_check, load_model,
                         mesh_optimization, train_gen, train_np)
from lib.worker import run_jobs

notifier = Notifier()


def _prepare_dir(path, force):
    if os.path.isdir(path) and os.listdir(path) and not force:
        raise FileExistsError(f"{path} is not empty (use --force to overwrite)")
    os.makedirs(path, exist_ok=True)


def cmd_generate(config):
    dataset_config = config.dataset_config()
    out = config.data_dir()
    _prepare_dir(out, config.force)
    print(f"[{datetime.now()}] Generating {dataset_config.space} dataset into {out}...")
    _, manifest = generate_dataset(dataset_config, config.seed, out, jobs=config.jobs, verbose=config.verbose)
    config.save(out)
    notifier.dataset_summary(manifest, out)
    return 0


def _train_one(config, houses, manifest, kind, seed, out):
    input_dims, output_dims = channel_dims(manifest)
    checkpoint = os.path.join(out, 'checkpoints', f"{kind}_seed{seed}.json")
    os.makedirs(os.path.dirname(checkpoint), exist_ok=True)

    def save_epoch(model, epoch):
        model.save(checkpoint)

    print(f"[{datetime.now()}] Training {kind} (seed {seed})...")
    if kind == 'np':
        spec = config.np_spec(get_space(manifest.space).dim, len(input_dims), max(input_dims), output_dims[0])
        model, history = train_np(houses, spec, config.train_config(seed, 'np'), on_epoch=save_epoch)
    else:
        spec = config.gen_spec(manifest.space, input_dims, output_dims)
        model, history = train_gen(houses, spec, config.train_config(seed, kind), on_epoch=save_epoch)
    model.save(checkpoint)
    write_loss_history(os.path.join(out, f"loss_{kind}_seed{seed}.csv"), history)
    return model


def cmd_train(config):
    houses, manifest = load_dataset(config.data_dir())
    out = config.run_dir()
    _prepare_dir(out, config.force)
    config.save(out)

    kinds = ['gen', 'np'] if config.model == 'both' else [config.model]
    jobs = [((kind, seed), partial(_train_one, config, houses, manifest, kind, seed, out))
            for kind in kinds for seed in config.seeds]
    trained = run_jobs(jobs, config.jobs, config.verbose)

    report = EvalReport()
    baselines = {seed: m for (kind, seed), m in trained.items() if kind == 'np'}
    for kind in kinds:
        if kind == 'np':
            continue
        models = {seed: m for (k, seed), m in trained.items() if k == kind}
        report.extend(evaluate(models, houses, config.eval_sizes or config.mesh_sizes))
    if baselines:
        report.extend(evaluate({}, houses, (), baselines=baselines))
    report.to_csv(os.path.join(out, 'eval.csv'))
    notifier.eval_summary(report)
    print(f"[{datetime.now()}] Run written to {out}")
    return 0


def cmd_evaluate(config):
    if not config.checkpoints:
        raise ConfigError('evaluate needs at least one --checkpoint')
    houses, _ = load_dataset(config.data_dir())
    out = config.run_dir()
    _prepare_dir(out, config.force)
    config.save(out)

    groups, baselines = {}, {}
    for path in config.checkpoints:
        model = load_model(path)
        if isinstance(model, GenModel):
            groups.setdefault(model.name, {})[model.seed] = model
        else:
            baselines[model.seed] = model

    report = EvalReport()
    for models in groups.values():
        if config.probe:
            report.extend(generalization_probe(models, houses, config.probe_sizes))
        else:
            sizes = config.eval_sizes or next(iter(models.values())).mesh_sizes
            report.extend(evaluate(models, houses, sizes))
    if baselines:
        report.extend(evaluate({}, houses, (), baselines=baselines))
    report.to_csv(os.path.join(out, 'probe.csv' if config.probe else 'eval.csv'))
    notifier.eval_summary(report, "EXTRAPOLATION PROBE" if config.probe else "TEST MSE")
    return 0


def _optimize_seed(config, model, houses, seed, out):
    rows, meshes = mesh_optimization(model, houses, config.eval_sizes or config.mesh_sizes, config.mesh_opt_config(seed))
    mesh_dir = os.path.join(out, 'meshes')
    os.makedirs(mesh_dir, exist_ok=True)
    for (house_id, k, init), (mesh, result) in sorted(meshes.items()):
        stem = os.path.join(mesh_dir, f"seed{seed}_house{house_id:04d}_k{k}_init{init}")
        storage.atomic_write_json(f"{stem}.json", {'mesh': mesh.to_json(), 'result': result.to_json()})
        overlay = mesh_overlay_svg([('initial', delaunay(result.initial_positions)), ('optimized', mesh)],
                                   title=f"house {house_id}, k={k}, init {init}")
        storage.atomic_write_text(f"{stem}.svg", overlay)
    return rows


def cmd_optimize_mesh(config):
    if not config.checkpoints:
        raise ConfigError('optimize-mesh needs a --checkpoint')
    if not os.path.exists(config.checkpoints[0]):
        raise FileNotFoundError(f"checkpoint {config.checkpoints[0]} not found")
    model = load_model(config.checkpoints[0])
    if not isinstance(model, GenModel):
        raise ConfigError('optimize-mesh needs a GEN checkpoint')
    houses, _ = load_dataset(config.data_dir())
    out = config.run_dir()
    _prepare_dir(out, config.force)
    config.save(out)

    results = run_jobs([(seed, partial(_optimize_seed, config, model, houses, seed, out)) for seed in config.seeds],
                       config.jobs, config.verbose)
    rows = [row for seed in sorted(results) for row in results[seed]]
    write_mesh_opt_report(os.path.join(out, 'mesh_opt.csv'), rows)
    notifier.mesh_opt_summary(rows)
    return 0


def cmd_plot(config):
    if not config.reports:
        raise ConfigError('plot needs at least one --report CSV')
    out = config.out or os.path.join(constants.RUNS_DIR, 'mse_vs_k.svg')
    if not out.endswith('.svg'):
        os.makedirs(out, exist_ok=True)
        out = os.path.join(out, 'mse_vs_k.svg')
    write_mse_plot(config.reports, out)
    print(f"[{datetime.now()}] Figure written to {out}")
    return 0


def cmd_gradcheck(config):
    errors = gradient_check(config.seed)
    notifier.gradcheck_summary(errors, constants.GRADCHECK_TOLERANCE)
    return 0 if max(errors.values()) < constants.GRADCHECK_TOLERANCE else 1


COMMANDS = {
    'generate': cmd_generate,
    'train': cmd_train,
    'optimize-mesh': cmd_optimize_mesh,
    'evaluate': cmd_evaluate,
    'plot': cmd_plot,
    'gradcheck': cmd_gradcheck,
}


def build_parser():
    parser = argparse.ArgumentParser(prog='gen-lab', description='Graph Element Network experiments on Poisson problems.')
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--config', help='JSON config file; flags override its values')
    common.add_argument('--seed', type=int, help=f"global seed (falls back to ${constants.SEED_ENV_VAR}, then 0)")
    common.add_argument('--jobs', type=int, help='worker threads for independent houses/seeds')
    common.add_argument('--verbose', action='store_true', default=None)
    common.add_argument('--force', action='store_true', default=None, help='write into a non-empty output directory')
    common.add_argument('--out', help='output directory (or .svg file for plot)')
    sub = parser.add_subparsers(dest='command', required=True)

    gen = sub.add_parser('generate', parents=[common], help='generate a dataset')
    gen.add_argument('--space', choices=['square', 'sphere'])
    gen.add_argument('--task', choices=['poisson', 'global'])
    gen.add_argument('--houses', type=int)
    gen.add_argument('--scenarios', type=int)
    gen.add_argument('--train-houses', type=int)
    gen.add_argument('--oracle-resolution', type=int)
    gen.add_argument('--data', help='dataset directory (default data/<space>)')

    model_flags = argparse.ArgumentParser(add_help=False)
    model_flags.add_argument('--data', help='dataset directory')
    model_flags.add_argument('--mesh', dest='mesh_sizes', help="mesh sizes, '2..7' or '2,3,4'")
    model_flags.add_argument('--eval-mesh', dest='eval_sizes', help='mesh sizes to evaluate on')
    model_flags.add_argument('--seeds', help="comma-separated seeds, e.g. '0,1,2'")

    train = sub.add_parser('train', parents=[common, model_flags], help='train a GEN and/or the NP baseline')
    train.add_argument('--model', choices=['gen', 'gen-independent', 'np', 'both'])
    train.add_argument('--epochs', dest='gen_epochs', type=int)
    train.add_argument('--np-epochs', type=int)
    train.add_argument('--lr', dest='weight_lr', type=float)
    train.add_argument('--position-lr', type=float)
    train.add_argument('--batch-size', type=int)
    train.add_argument('--train-positions', action='store_true', default=None)
    train.add_argument('--t-rule', help="'diameter' (T = 2(k-1)) or a fixed integer")
    train.add_argument('--representation', choices=['soft_nearest', 'bilinear_grid'])
    train.add_argument('--temperature', type=float)

    opt = sub.add_parser('optimize-mesh', parents=[common, model_flags], help='optimize node positions on held-out houses')
    opt.add_argument('--checkpoint', dest='checkpoints', action='append')
    opt.add_argument('--steps', dest='position_steps', type=int)
    opt.add_argument('--position-lr', type=float)
    opt.add_argument('--adapt', dest='adapt_scenarios', type=int)
    opt.add_argument('--inits', dest='position_inits', type=int)

    ev = sub.add_parser('evaluate', parents=[common, model_flags], help='evaluate checkpoints')
    ev.add_argument('--checkpoint', dest='checkpoints', action='append')
    ev.add_argument('--probe', action='store_true', default=None, help='train-small/test-big extrapolation probe')
    ev.add_argument('--probe-mesh', dest='probe_sizes', help="extra sizes for the probe, default '6,7'")

    plot = sub.add_parser('plot', parents=[common], help='plot MSE vs mesh size from eval CSVs')
    plot.add_argument('--report', dest='reports', action='append')

    sub.add_parser('gradcheck', parents=[common], help='finite-difference check of GEN gradients')
    return parser


DATASET_FLAGS = ('space', 'task', 'houses', 'scenarios', 'train_houses', 'oracle_resolution')


def resolve_config(args):
    values = {k: v for k, v in vars(args).items() if k != 'config'}
    dataset = {k: values.pop(k) for k in DATASET_FLAGS if k in values}
    values['dataset'] = {k: v for k, v in dataset.items() if v is not None}
    return ExperimentConfig.resolve(args.config, values)


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        config = resolve_config(args)
        return COMMANDS[config.command](config)
    except KeyboardInterrupt:
        print("Stopping...")
        return 130
    except Exception as e:
        print(f"Error running {args.command}: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
