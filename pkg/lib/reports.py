import io

import pandas as pd

from lib import storage

REPORT_COLUMNS = ['model', 'mesh_k', 'seed', 'split', 'mse', 'n_params', 'wall_s', 'extrapolation']
LOSS_COLUMNS = ['step', 'epoch', 'mesh_k', 'loss']
MESH_OPT_COLUMNS = ['house', 'mesh_k', 'init', 'seed', 'before_mse', 'after_mse', 'edge_changes',
                    'steps', 'initial_loss', 'final_loss']


class ReportError(ValueError):
    pass


class EvalReport:
    """Per-(model, mesh size, seed) test MSE rows, aggregated across seeds on demand."""

    def __init__(self, rows=None):
        self.rows = list(rows or [])

    def add(self, model, mesh_k, seed, split, mse, n_params, wall_s=0.0, extrapolation=False):
        if mse < 0:
            raise ValueError('MSE cannot be negative')
        self.rows.append({'model': model, 'mesh_k': int(mesh_k), 'seed': int(seed), 'split': split,
                          'mse': float(mse), 'n_params': int(n_params), 'wall_s': float(wall_s),
                          'extrapolation': bool(extrapolation)})

    def extend(self, other):
        self.rows += other.rows
        return self

    def frame(self):
        return pd.DataFrame(self.rows, columns=REPORT_COLUMNS)

    def summary(self):
        """MSE mean and std across seeds per (model, mesh_k); std is 0 for one seed."""
        df = self.frame()
        if df.empty:
            return pd.DataFrame(columns=['model', 'mesh_k', 'extrapolation', 'mse_mean', 'mse_std',
                                         'mse_median', 'n_params', 'wall_s', 'seeds'])
        grouped = df.groupby(['model', 'mesh_k', 'extrapolation'], sort=True)
        return grouped.agg(mse_mean=('mse', 'mean'),
                           mse_std=('mse', lambda s: s.std(ddof=0)),
                           mse_median=('mse', 'median'),
                           n_params=('n_params', 'first'),
                           wall_s=('wall_s', 'mean'),
                           seeds=('seed', 'nunique')).reset_index()

    def median_mse(self, model, mesh_k):
        df = self.frame()
        sel = df[(df['model'] == model) & (df['mesh_k'] == mesh_k)]
        if sel.empty:
            raise KeyError(f"no rows for {model} at k={mesh_k}")
        return float(sel['mse'].median())

    def to_csv(self, path):
        write_frame(path, self.frame())

    @classmethod
    def read_csv(cls, path):
        df = read_frame(path, REPORT_COLUMNS)
        df['extrapolation'] = df['extrapolation'].astype(str).str.lower() == 'true'
        return cls(df.to_dict('records'))


def write_frame(path, df):
    buffer = io.StringIO()
    df.to_csv(buffer, index=False, float_format='%.17g', lineterminator='\n')
    storage.atomic_write_text(path, buffer.getvalue())


def read_frame(path, columns):
    try:
        df = pd.read_csv(path)
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as e:
        raise ReportError(f"malformed CSV {path}: {e}")
    missing = [c for c in columns if c not in df.columns]
    if missing:
        raise ReportError(f"malformed CSV {path}: missing columns {missing}")
    return df


def write_loss_history(path, history):
    write_frame(path, pd.DataFrame(history, columns=LOSS_COLUMNS))


def write_mesh_opt_report(path, rows):
    write_frame(path, pd.DataFrame(rows, columns=MESH_OPT_COLUMNS))
