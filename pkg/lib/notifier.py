import pandas as pd


class Notifier:
    """Formats run summaries for the console."""

    RULE = "--------------------------------------------------"

    def _print_block(self, title, body):
        print(f"\n{self.RULE}\n{title}\n{self.RULE}\n{body}\n{self.RULE}\n")

    def dataset_summary(self, manifest, path):
        body = (
            f"• Space / task: {manifest.space} / {manifest.task}\n"
            f"• Houses: {manifest.houses} x {manifest.scenarios_per_house} scenarios "
            f"(reference scale {manifest.reference_scale['houses']} x {manifest.reference_scale['scenarios']})\n"
            f"• Split: {len(manifest.train_house_ids)} train / {len(manifest.test_house_ids)} test houses\n"
            f"• Oracle grid: {manifest.oracle_resolution}x{manifest.oracle_resolution}, "
            f"seed {manifest.seed} ({manifest.prng})\n"
            f"• Written to: {path}"
        )
        self._print_block("DATASET READY", body)

    def eval_summary(self, report, title="TEST MSE"):
        summary = report.summary()
        if summary.empty:
            self._print_block(title, "(no rows)")
            return
        table = summary[['model', 'mesh_k', 'extrapolation', 'mse_mean', 'mse_std', 'n_params', 'seeds']]
        with pd.option_context('display.float_format', '{:.6f}'.format):
            self._print_block(title, table.to_string(index=False))

    def mesh_opt_summary(self, rows):
        df = pd.DataFrame(rows)
        if df.empty:
            self._print_block("MESH OPTIMIZATION", "(no rows)")
            return
        per_k = df.groupby('mesh_k').agg(before=('before_mse', 'median'), after=('after_mse', 'median'),
                                         edge_changes=('edge_changes', 'mean'), runs=('init', 'count'))
        with pd.option_context('display.float_format', '{:.6f}'.format):
            self._print_block("MESH OPTIMIZATION (median held-out MSE)", per_k.reset_index().to_string(index=False))

    def gradcheck_summary(self, errors, tolerance):
        lines = []
        for name, err in errors.items():
            flag = "ok" if err < tolerance else "FAIL"
            lines.append(f"  {name:<24} {err:.3e}  {flag}")
        worst = max(errors.values()) if errors else 0.0
        lines.append(f"• Worst relative error: {worst:.3e} (tolerance {tolerance:.0e})")
        self._print_block("GRADIENT CHECK", "\n".join(lines))
