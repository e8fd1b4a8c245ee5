"""Quantizer ablation: every arm trained and tested on the same split with the same seeds."""
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import pandas as pd
from loguru import logger

from metrics_eval.report import EvalReport, comparison_table
from regnet.config import normalize_quantizers
from utils.errors import AblationError
from vq_core.codebook import Codebook

from .bootstrap import run_bootstrap
from .config import TrainConfig
from .data import SplitDataset
from .evaluate import evaluate_identity, evaluate_model
from .plots import plot_gap_curves
from .trainer import train

KMEANS = "kmeans"
RANDOM = "random"


@dataclass(frozen=True)
class Arm:
    name: str
    quantizers: Tuple[str, ...]
    collaborative_init: str = KMEANS

    @property
    def needs_bootstrap(self) -> bool:
        return "collaborative" in self.quantizers and self.collaborative_init == KMEANS


DEFAULT_ARMS = [
    Arm("none", ()),
    Arm("v", ("vanilla",)),
    Arm("v+h", ("vanilla", "hierarchical")),
    Arm("v+c w/o pretrain", ("vanilla", "collaborative"), RANDOM),
    Arm("v+c", ("vanilla", "collaborative")),
    Arm("v+h+c", ("vanilla", "hierarchical", "collaborative")),
]


def parse_arm(spec: str) -> Arm:
    """``none``, ``v``, ``v+h``, ``v+h+c``; ``:random`` disables the K-means start of the collaborative codebook."""
    text, _, init = spec.strip().partition(":")
    init = init or KMEANS
    if init not in (KMEANS, RANDOM):
        raise ValueError(f"unknown collaborative init '{init}' in arm '{spec}'")
    parts = [] if text in ("none", "") else text.split("+")
    quantizers = tuple(normalize_quantizers(parts))
    name = text if init == KMEANS or "collaborative" not in quantizers else f"{text} w/o pretrain"
    return Arm(name, quantizers, init)


@dataclass
class AblationResult:
    reports: List[EvalReport]
    curves: Dict[str, pd.DataFrame] = field(default_factory=dict)
    gaps: Dict[str, float] = field(default_factory=dict)

    def report(self, name: str) -> EvalReport:
        return next(r for r in self.reports if r.name == name)

    def mean(self, name: str, metric: str) -> float:
        return self.report(name).aggregate()[metric][0]


def _write(result: AblationResult, output_dir: Path, reference: Optional[str]):
    extra = {name: {"Gap": f"{gap:.3f}"} for name, gap in result.gaps.items()}
    table = comparison_table(result.reports, reference=reference, extra=extra)
    table.output_csv(output_dir / "ablation.csv")
    table.pretty_print()
    for report in result.reports:
        report.rows.to_csv(output_dir / f"rows_{report.name.replace(' ', '_').replace('/', '')}.csv", index=False)
    summary = {r.name: {k: {"mean": m, "std": s} for k, (m, s) in r.aggregate().items()} for r in result.reports}
    json.dump({"arms": summary, "gaps": result.gaps, "metadata": {"distance_unit": "mm"}},
              open(output_dir / "ablation.json", "w"), indent=2)
    if result.curves:
        plot_gap_curves(result.curves, str(output_dir / "gap_curves.png"))


def run_ablation(config: TrainConfig, data: SplitDataset, output_dir, arms: Sequence[Arm] = DEFAULT_ARMS,
                 seeds: Optional[Sequence[int]] = None) -> AblationResult:
    output_dir = Path(output_dir)
    output_dir.mkdir(parents=True, exist_ok=True)
    config.write_echo(output_dir)
    seeds = list(seeds if seeds is not None else config.run.seeds)
    echo = config.echo()
    identity = evaluate_identity(data.test, echo, config.run.max_workers)
    # 按 seed 复制，使各行与每个 arm 的 (seed, subject) 顺序对齐
    identity.rows = pd.concat([identity.rows.assign(subject_id=[f"s{s}/{sid}" for sid in identity.rows["subject_id"]])
                               for s in seeds], ignore_index=True)
    result = AblationResult([identity])
    codebooks: Dict[int, Codebook] = {}

    for arm in arms:
        arm_config = config.model_copy(update={"network": config.network.with_quantizers(arm.quantizers)})
        rows, curves, gaps = [], [], []
        try:
            with logger.contextualize(arm=arm.name):
                for seed in seeds:
                    with logger.contextualize(seed=seed):
                        codebook = None
                        if arm.needs_bootstrap:
                            if seed not in codebooks:
                                codebooks[seed] = run_bootstrap(config, data.train, seed,
                                                                output_dir / "bootstrap" / f"seed{seed}").codebook
                            codebook = codebooks[seed]
                        run_dir = output_dir / arm.name.replace(" ", "_").replace("/", "") / f"seed{seed}"
                        trained = train(arm_config, data, run_dir, seed=seed, collaborative_codebook=codebook)
                        report = evaluate_model(trained.model, data.test, arm.name, echo, config.run.max_workers)
                        report.rows["subject_id"] = [f"s{seed}/{sid}" for sid in report.rows["subject_id"]]
                        rows.extend(report.rows.to_dict("records"))
                        curves.append(trained.curves.assign(seed=seed))
                        gaps.append(trained.final_gap)
        except Exception as exc:
            logger.error(f"arm '{arm.name}' failed: {exc}")
            _write(result, output_dir, "none")
            raise AblationError(f"ablation aborted at arm '{arm.name}': {exc}", partial_results=result) from exc

        result.reports.append(EvalReport.from_rows(arm.name, rows, echo))
        result.curves[arm.name] = pd.concat(curves, ignore_index=True)
        result.gaps[arm.name] = float(sum(gaps) / len(gaps))
        logger.success(f"arm '{arm.name}' done: {result.reports[-1].formatted()}")
    _write(result, output_dir, "none" if any(r.name == "none" for r in result.reports) else None)
    return result


def ordering_violations(result: AblationResult, order=("v+h+c", "v", "none"), metric: str = "TRE") -> List[str]:
    """Adjacent pairs of ``order`` whose mean ``metric`` is not non-decreasing."""
    present = [name for name in order if any(r.name == name for r in result.reports)]
    issues = []
    for better, worse in zip(present, present[1:]):
        if result.mean(better, metric) > result.mean(worse, metric):
            issues.append(f"{metric}({better})={result.mean(better, metric):.4f} > "
                          f"{metric}({worse})={result.mean(worse, metric):.4f}")
    return issues

