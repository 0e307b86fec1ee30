"""CSV and text outputs: run logs, variance sweeps, collapse reports, probes, ablations."""

from pathlib import Path

import pandas as pd

from src.core.keyvalue import dump_lines, format_value
from src.models.diagnostics import CollapseReport
from src.models.training import ProbeResult, RunLog


TRAIN_LOG = "train_log.csv"
EVAL_LOG = "eval_log.csv"
VARIANCE_CSV = "variance.csv"
COLLAPSE_CSV = "collapse_report.csv"
COLLAPSE_SUMMARY = "collapse_summary.txt"
SPECTRUM_CSV = "spectrum.csv"
PROBE_TXT = "probe.txt"
ABLATION_CSV = "ablation.csv"

VARIANCE_COLUMNS = ["strategy", "rho", "mean_var", "std_error", "num_draws"]


class ReportRepository:
    """Writes every tabular artifact into one output directory."""

    def __init__(self, directory: Path):
        self.directory = Path(directory)

    def _path(self, name: str) -> Path:
        self.directory.mkdir(parents=True, exist_ok=True)
        return self.directory / name

    def _eval_frame(self, run_log: RunLog) -> pd.DataFrame:
        width = max((len(e.top_singular_values) for e in run_log.evals), default=0)
        rows = []
        for record in run_log.evals:
            row = record.model_dump(exclude={"top_singular_values"})
            for k in range(width):
                values = record.top_singular_values
                row[f"sigma_{k + 1}"] = values[k] if k < len(values) else float("nan")
            rows.append(row)
        columns = ["step", "var_estimate", "trivial_score", "effective_rank"]
        return pd.DataFrame(rows, columns=columns + [f"sigma_{k + 1}" for k in range(width)])

    def write_run_log(self, run_log: RunLog) -> tuple[Path, Path]:
        steps = pd.DataFrame(
            [r.model_dump() for r in run_log.steps],
            columns=["step", "l_mim", "l_pbt_total", "l_overall"],
        )
        train_path = self._path(TRAIN_LOG)
        steps.to_csv(train_path, index=False)
        eval_path = self._path(EVAL_LOG)
        self._eval_frame(run_log).to_csv(eval_path, index=False)
        return train_path, eval_path

    def write_variance_table(self, rows: list[dict], convergence_threshold: float) -> Path:
        path = self._path(VARIANCE_CSV)
        frame = pd.DataFrame(rows, columns=VARIANCE_COLUMNS)
        with path.open("w") as handle:
            handle.write(f"# convergence_threshold={format_value(convergence_threshold)}\n")
            frame.to_csv(handle, index=False)
        return path

    def write_collapse_report(self, report: CollapseReport) -> list[Path]:
        rows = [
            {
                **probe.model_dump(),
                "trivial_score": report.trivial_score,
                "effective_rank": report.effective_rank,
                "var_estimate": report.variance.mean_var,
            }
            for probe in report.probes
        ]
        csv_path = self._path(COLLAPSE_CSV)
        pd.DataFrame(rows).to_csv(csv_path, index=False)

        summary = {
            "var_estimate": report.variance.mean_var,
            "var_std_error": report.variance.std_error,
            "var_num_draws": report.variance.num_draws,
            "mask_kind": report.variance.mask_kind,
            "centering": report.variance.centering,
            "trivial_score": report.trivial.score,
            "output_variance": report.trivial.output_variance,
            "input_variance": report.trivial.input_variance,
            "target_correlation": report.trivial.target_correlation,
            "effective_rank": report.effective_rank,
            "feature_level": report.feature_level,
            "num_singular_values": len(report.singular_values),
        }
        summary_path = self._path(COLLAPSE_SUMMARY)
        summary_path.write_text(dump_lines({k: format_value(v) for k, v in summary.items()}))

        spectrum_path = self._path(SPECTRUM_CSV)
        pd.DataFrame(
            {
                "index": range(1, len(report.singular_values) + 1),
                "sigma": report.singular_values,
            }
        ).to_csv(spectrum_path, index=False)
        return [csv_path, summary_path, spectrum_path]

    def write_probe(self, result: ProbeResult) -> Path:
        path = self._path(PROBE_TXT)
        path.write_text(dump_lines({k: format_value(v) for k, v in result.model_dump().items()}))
        return path

    def write_ablation(self, table: pd.DataFrame) -> Path:
        path = self._path(ABLATION_CSV)
        table.to_csv(path, index=False)
        return path
