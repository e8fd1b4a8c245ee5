import time
from typing import List, Optional, Sequence, Tuple

import numpy as np
import torch
from loguru import logger

from metrics_eval.metrics import dsc
from metrics_eval.report import EvalReport, evaluate_pairs
from regnet.checkpoint import load_checkpoint
from regnet.model import RegModel
from transform.ddf import DisplacementField
from transform.resample import MaskMode, ResampleSpec, resample
from utils.errors import CheckpointMismatchError
from volume_core.types import RegistrationSample

from .data import iterate_batches, stack_batch

UNREGISTERED = "w/o registration"


def predict_fields(model: RegModel, samples: Sequence[RegistrationSample],
                   batch_size: int = 1) -> Tuple[List[DisplacementField], List[float]]:
    """DDFs of ``samples`` in order, with the forward wall time per pair (seconds)."""
    dtype = next(model.parameters()).dtype
    was_training = model.training
    model.eval()
    fields, runtimes = [], []
    with torch.no_grad():
        for batch in iterate_batches(samples, batch_size):
            tensors = stack_batch(batch, dtype)
            start = time.perf_counter()
            out = model(tensors["moving"], tensors["fixed"])
            elapsed = (time.perf_counter() - start) / len(batch)
            for i, s in enumerate(batch):
                fields.append(DisplacementField(out.ddf[i].double().numpy(), s.spacing, s.fixed.origin))
                runtimes.append(elapsed)
    model.train(was_training)
    return fields, runtimes


def warped_dsc(sample: RegistrationSample, ddf: DisplacementField) -> float:
    warped = resample(sample.moving_mask, ddf, ResampleSpec(mask_mode=MaskMode.Threshold))
    return dsc(warped, sample.fixed_mask.thresholded())


def mean_dsc(model: RegModel, samples: Sequence[RegistrationSample], batch_size: int = 4) -> float:
    if not samples:
        return float("nan")
    fields, _ = predict_fields(model, samples, batch_size)
    return float(np.mean([warped_dsc(s, f) for s, f in zip(samples, fields)]))


def unregistered_dsc(samples: Sequence[RegistrationSample]) -> float:
    if not samples:
        return float("nan")
    return float(np.mean([dsc(s.moving_mask.thresholded(), s.fixed_mask.thresholded()) for s in samples]))


def evaluate_model(model: RegModel, samples: Sequence[RegistrationSample], name: str,
                   config: Optional[dict] = None, max_workers: int = 4) -> EvalReport:
    fields, runtimes = predict_fields(model, samples, batch_size=1)
    return EvalReport.from_rows(name, evaluate_pairs(samples, fields, runtimes, max_workers), config)


def evaluate_identity(samples: Sequence[RegistrationSample], config: Optional[dict] = None,
                      max_workers: int = 4) -> EvalReport:
    """Reference row: every pair evaluated under the zero field."""
    fields = [DisplacementField.zeros(s.dims, s.spacing, s.fixed.origin) for s in samples]
    rows = evaluate_pairs(samples, fields, [0.0] * len(samples), max_workers)
    return EvalReport.from_rows(UNREGISTERED, rows, config)


def load_for_evaluation(path, data_dims) -> RegModel:
    """Rebuild the network stored in the checkpoint; only its input grid has to match the data."""
    model = load_checkpoint(path)
    if tuple(model.config.input_dims) != tuple(data_dims):
        raise CheckpointMismatchError(
            f"{path}: network input dims {tuple(model.config.input_dims)} differ from data dims {tuple(data_dims)}")
    logger.info(f"evaluating {path} with quantizers {model.config.enabled_quantizers or ['none']}")
    return model
