from pathlib import Path
from typing import Dict, Optional, Sequence

import pandas as pd
from loguru import logger

from codebook_bootstrap.harvest import init_collaborative
from utils.errors import ConfigError

from .bootstrap import run_bootstrap
from .config import TrainConfig
from .data import SplitDataset
from .evaluate import evaluate_model
from .plots import plot_sweep
from .trainer import train

DESK_SIZES = (32, 64, 128, 256)
WHICH = ("v", "c", "both")


def sized_config(config: TrainConfig, size: int, which: str) -> TrainConfig:
    k_v, k_h, k_c = config.network.dict_sizes
    if which not in WHICH:
        raise ConfigError(f"--which must be one of {WHICH}, got '{which}'")
    if which in ("v", "both"):
        k_v = size
    if which in ("c", "both"):
        k_c = size
    network = config.network.model_copy(update={"dict_sizes": (k_v, k_h, k_c)})
    bootstrap = config.bootstrap.model_copy(update={"K_c": k_c})
    return config.model_copy(update={"network": network, "bootstrap": bootstrap})


def run_dict_size_sweep(config: TrainConfig, data: SplitDataset, output_dir, sizes: Sequence[int] = DESK_SIZES,
                        which: str = "both", seeds: Optional[Sequence[int]] = None) -> pd.DataFrame:
    """Test DSC / TRE per dictionary size; the segmentation bootstrap runs once per seed and only K-means reruns."""
    output_dir = Path(output_dir)
    output_dir.mkdir(parents=True, exist_ok=True)
    config.write_echo(output_dir)
    seeds = list(seeds if seeds is not None else config.run.seeds)
    features: Dict[int, object] = {}
    rows = []
    for size in sizes:
        sized = sized_config(config, size, which)
        for seed in seeds:
            with logger.contextualize(size=size, seed=seed):
                codebook = None
                if sized.network.uses("collaborative"):
                    if seed not in features:
                        features[seed] = run_bootstrap(config, data.train, seed, output_dir / "bootstrap" / f"seed{seed}").features
                    codebook = init_collaborative(features[seed], sized.network.dict_sizes[2], seed)
                trained = train(sized, data, output_dir / f"K{size}" / f"seed{seed}", seed=seed,
                                collaborative_codebook=codebook)
                report = evaluate_model(trained.model, data.test, f"K={size}", sized.echo(), config.run.max_workers)
                agg = report.aggregate()
                rows.append({"size": size, "seed": seed, "DSC": agg["DSC"][0], "TRE": agg["TRE"][0],
                             "gap": trained.final_gap})
                logger.info(f"K={size} seed={seed}: DSC={agg['DSC'][0]:.4f} TRE={agg['TRE'][0]:.4f}")
    frame = pd.DataFrame(rows)
    frame.to_csv(output_dir / "sweep.csv", index=False)
    plot_sweep(frame, str(output_dir / "sweep.png"), which)
    logger.success(f"dictionary-size sweep written to {output_dir}")
    return frame
