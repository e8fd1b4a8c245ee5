from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np
import torch
from loguru import logger

from transform.ddf import DisplacementField, load_ddf, save_ddf
from volume_core.crop import crop_around_mask
from volume_core.synth import synth_dataset
from volume_core.types import RegistrationSample
from volume_core.volume_io import load_dataset, save_sample

from .config import DataConfig

GROUND_TRUTH_FILE = "ground_truth_ddf.vol"


@dataclass
class SplitDataset:
    train: List[RegistrationSample]
    val: List[RegistrationSample]
    test: List[RegistrationSample]
    ground_truth: Dict[str, DisplacementField] = field(default_factory=dict)

    def split(self, name: str) -> List[RegistrationSample]:
        return getattr(self, name)

    def sizes(self) -> Tuple[int, int, int]:
        return len(self.train), len(self.val), len(self.test)


def split_by_subject(samples: Sequence[RegistrationSample], fractions=(0.7, 0.1, 0.2),
                     seed: int = 0) -> Tuple[List[RegistrationSample], List[RegistrationSample], List[RegistrationSample]]:
    """Shuffle subjects with ``seed`` and cut them train/val/test; pairs of one subject never straddle splits."""
    subjects = sorted({s.subject_id for s in samples})
    rng = np.random.default_rng(seed)
    order = [subjects[i] for i in rng.permutation(len(subjects))]
    n = len(order)
    n_train = int(round(fractions[0] * n))
    n_val = int(round(fractions[1] * n))
    if n >= 3:
        # 三个集合都至少有一个 subject
        n_val = max(n_val, 1) if fractions[1] > 0 else 0
        n_train = min(max(n_train, 1), n - n_val - (1 if fractions[2] > 0 else 0))
    groups = (set(order[:n_train]), set(order[n_train:n_train + n_val]), set(order[n_train + n_val:]))
    return tuple([s for s in samples if s.subject_id in g] for g in groups)  # type: ignore[return-value]


def build_dataset(config: DataConfig) -> SplitDataset:
    if config.dataset_dir:
        samples = load_dataset(config.dataset_dir)
        truth = {}
        for d in sorted(Path(config.dataset_dir).iterdir()):
            if (d / GROUND_TRUTH_FILE).exists():
                truth[d.name] = load_ddf(d / GROUND_TRUTH_FILE)
        truth = {s.subject_id: truth[s.subject_id] for s in samples if s.subject_id in truth}
        logger.info(f"loaded {len(samples)} pairs from {config.dataset_dir}")
    else:
        results = synth_dataset(config.n_pairs, config.dims, config.deform_amplitude, seed=config.seed,
                                spacing=config.spacing, noise_sigma=config.noise_sigma)
        samples = [r.sample for r in results]
        truth = {r.sample.subject_id: r.ground_truth for r in results}
    if config.crop is not None:
        samples = [crop_around_mask(s, config.crop) for s in samples]
        # 裁剪后的真值场与样本网格不一致
        truth = {}
    train, val, test = split_by_subject(samples, config.split, config.seed)
    logger.info(f"split {len(train)}/{len(val)}/{len(test)} pairs (train/val/test)")
    return SplitDataset(train, val, test, truth)


def write_synthetic(config: DataConfig, output_dir) -> List[Path]:
    output_dir = Path(output_dir)
    results = synth_dataset(config.n_pairs, config.dims, config.deform_amplitude, seed=config.seed,
                            spacing=config.spacing, noise_sigma=config.noise_sigma)
    written = []
    for r in results:
        directory = output_dir / r.sample.subject_id
        save_sample(directory, r.sample, meta={
            "deform_amplitude_mm": config.deform_amplitude,
            "noise_sigma": config.noise_sigma,
            "n_landmarks": len(r.sample.fixed_landmarks),
        })
        save_ddf(directory / GROUND_TRUTH_FILE, r.ground_truth)
        written.append(directory)
    return written


def stack_batch(samples: Sequence[RegistrationSample], dtype=torch.float32) -> Dict[str, torch.Tensor]:
    def stack(attr):
        return torch.as_tensor(np.stack([np.asarray(getattr(s, attr).data) for s in samples]), dtype=dtype)[:, None]

    return {k: stack(k) for k in ("moving", "fixed", "moving_mask", "fixed_mask")}


def iterate_batches(samples: Sequence[RegistrationSample], batch_size: int,
                    rng: Optional[np.random.Generator] = None) -> Iterator[List[RegistrationSample]]:
    """Seed-ordered minibatches; no shuffling without ``rng``."""
    order = rng.permutation(len(samples)) if rng is not None else np.arange(len(samples))
    for start in range(0, len(order), batch_size):
        yield [samples[i] for i in order[start:start + batch_size]]
