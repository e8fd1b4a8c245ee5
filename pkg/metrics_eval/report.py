"""Per-pair evaluation rows and their aggregate, formatted the way comparison tables print them."""
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from loguru import logger
from scipy.stats import ttest_rel

from transform.ddf import DisplacementField
from transform.resample import MaskMode, ResampleSpec, resample
from volume_core.types import RegistrationSample

from .metrics import centroid_distance, dsc, mse, neg_jacobian_fraction, tre
from .table import Table

METRICS = ["DSC", "CD", "MSE", "TRE", "NegJac"]
TABLE_COLUMNS = ["DSC", "CD", "MSE", "TRE"]
UNITS = {"CD": "mm", "TRE": "mm"}

_THRESHOLD = ResampleSpec(mask_mode=MaskMode.Threshold)


def evaluate_pair(sample: RegistrationSample, ddf: DisplacementField, runtime_s: float = float("nan")) -> dict:
    """Metrics of one registered pair: masks are warped and thresholded at 0.5 before DSC and CD."""
    warped = resample(sample.moving, ddf)
    warped_mask = resample(sample.moving_mask, ddf, _THRESHOLD)
    fixed_mask = sample.fixed_mask.thresholded()
    distances = tre(sample, ddf)
    return {
        "subject_id": sample.subject_id,
        "DSC": dsc(warped_mask, fixed_mask),
        "CD": centroid_distance(warped_mask, fixed_mask) if warped_mask.voxel_count and fixed_mask.voxel_count
        else float("nan"),
        "MSE": mse(warped, sample.fixed),
        "TRE": float(np.mean(distances)) if distances else float("nan"),
        "NegJac": neg_jacobian_fraction(ddf),
        "runtime_s": runtime_s,
    }


def evaluate_pairs(samples: Sequence[RegistrationSample], ddfs: Sequence[DisplacementField],
                   runtimes: Optional[Sequence[float]] = None, max_workers: int = 4) -> List[dict]:
    runtimes = list(runtimes) if runtimes is not None else [float("nan")] * len(samples)
    with ThreadPoolExecutor(max_workers=max_workers) as executor:
        return list(executor.map(lambda args: evaluate_pair(*args), zip(samples, ddfs, runtimes)))


def format_mean_std(mean: float, std: float, digits: int = 3) -> str:
    return f"{mean:.{digits}f}±{std:.{digits}f}"


@dataclass
class EvalReport:
    name: str
    rows: pd.DataFrame
    config: dict = field(default_factory=dict)
    metadata: dict = field(default_factory=lambda: {"distance_unit": "mm", "tre": "forward-warp of fixed landmarks"})

    @classmethod
    def from_rows(cls, name: str, rows: List[dict], config: Optional[dict] = None) -> "EvalReport":
        frame = pd.DataFrame(rows, columns=["subject_id"] + METRICS + ["runtime_s"])
        return cls(name, frame, dict(config or {}))

    def aggregate(self) -> Dict[str, Tuple[float, float]]:
        """(mean, population std) per metric, NaN rows skipped."""
        result = {}
        for metric in METRICS + ["runtime_s"]:
            values = self.rows[metric].to_numpy(dtype=np.float64)
            values = values[np.isfinite(values)]
            if values.size == 0:
                result[metric] = (float("nan"), float("nan"))
            else:
                result[metric] = (float(values.mean()), float(values.std(ddof=0)))
        return result

    def formatted(self) -> Dict[str, str]:
        return {m: format_mean_std(*v) for m, v in self.aggregate().items()}

    def table(self) -> Table:
        table = Table(["Method"] + [f"{c} ({UNITS[c]})" if c in UNITS else c for c in TABLE_COLUMNS] + ["NegJac"])
        fmt = self.formatted()
        table.add_row([self.name] + [fmt[c] for c in TABLE_COLUMNS] + [fmt["NegJac"]])
        return table

    def save(self, output_dir, stem: str = "report"):
        output_dir = Path(output_dir)
        output_dir.mkdir(parents=True, exist_ok=True)
        self.rows.to_csv(output_dir / f"{stem}_rows.csv", index=False)
        self.table().output_csv(output_dir / f"{stem}.csv")
        summary = {
            "name": self.name,
            "aggregate": {k: {"mean": m, "std": s} for k, (m, s) in self.aggregate().items()},
            "metadata": self.metadata,
            "config": self.config,
        }
        json.dump(summary, open(output_dir / f"{stem}.json", "w"), indent=2, default=str)
        logger.success(f"report '{self.name}' written to {output_dir}")


def paired_pvalue(a: pd.Series, b: pd.Series) -> float:
    """Two-sided paired t-test p-value on the rows both series have finite values for."""
    if len(a) != len(b):
        return float("nan")
    frame = pd.DataFrame({"a": a.to_numpy(dtype=np.float64), "b": b.to_numpy(dtype=np.float64)}).dropna()
    if len(frame) < 2 or np.allclose(frame["a"], frame["b"]):
        return float("nan")
    return float(ttest_rel(frame["a"], frame["b"]).pvalue)


def comparison_table(reports: Sequence[EvalReport], reference: Optional[str] = None,
                     extra: Optional[Dict[str, Dict[str, str]]] = None) -> Table:
    """One row per report in the given order; p-values of TRE and DSC against ``reference``."""
    extra = extra or {}
    extra_cols = sorted({k for cols in extra.values() for k in cols})
    header = ["Method"] + [f"{c} ({UNITS[c]})" if c in UNITS else c for c in TABLE_COLUMNS] + ["NegJac", "Time (s)"]
    if reference is not None:
        header += ["p(DSC)", "p(TRE)"]
    header += extra_cols
    table = Table(header)
    ref = next((r for r in reports if r.name == reference), None)
    for report in reports:
        fmt = report.formatted()
        row = [report.name] + [fmt[c] for c in TABLE_COLUMNS] + [fmt["NegJac"], fmt["runtime_s"]]
        if reference is not None:
            if ref is None or report is ref:
                row += ["-", "-"]
            else:
                row += [f"{paired_pvalue(report.rows[m], ref.rows[m]):.2g}" for m in ("DSC", "TRE")]
        row += [extra.get(report.name, {}).get(c, "-") for c in extra_cols]
        table.add_row(row)
    return table
