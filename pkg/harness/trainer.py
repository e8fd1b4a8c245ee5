"""Weakly supervised training loop with per-epoch generalization curves."""
import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np
import pandas as pd
import torch
from loguru import logger
from tqdm.auto import tqdm

from losses.objective import LOSS_LOG_COLUMNS, combine_losses, compute_components
from regnet.checkpoint import load_checkpoint, save_checkpoint
from regnet.model import RegModel
from utils.determinism import seed_everything
from utils.errors import NonFiniteLossError
from vq_core.codebook import Codebook, save_codebook
from vq_core.quantizer import usage_perplexity

from .config import TrainConfig
from .data import SplitDataset, iterate_batches, stack_batch
from .evaluate import mean_dsc, unregistered_dsc
from .plots import plot_curves, plot_usage

CURVE_COLUMNS = ["epoch", "loss", "train_dsc", "val_dsc", "test_dsc", "gap"]


@dataclass
class TrainResult:
    model: RegModel
    output_dir: Path
    checkpoint: Path
    curves: pd.DataFrame
    best_epoch: int
    best_val_dsc: float
    final_loss: float
    usage: Dict[str, np.ndarray] = field(default_factory=dict)

    @property
    def final_gap(self) -> float:
        return float(self.curves["gap"].iloc[-1])


class Trainer:
    def __init__(self, config: TrainConfig, data: SplitDataset, output_dir, *, seed: int = 0,
                 collaborative_codebook: Optional[Codebook] = None):
        self.config = config
        self.data = data
        self.output_dir = Path(output_dir)
        self.seed = seed
        self.collaborative_codebook = collaborative_codebook
        self.step = 0

    def _build_model(self) -> RegModel:
        model = RegModel(self.config.network, beta=self.config.loss.beta)
        if self.collaborative_codebook is not None and self.config.network.uses("collaborative"):
            model.quantizer("collaborative").load_codebook(self.collaborative_codebook)
            logger.info(f"collaborative codebook initialized from {self.collaborative_codebook.init_kind.value}")
        return model

    def _dump_batch(self, batch, tensors, epoch: int) -> Path:
        path = self.output_dir / f"nonfinite_batch_step{self.step}.pt"
        torch.save({"epoch": epoch, "step": self.step, "subject_ids": [s.subject_id for s in batch],
                    **{k: v.detach().cpu() for k, v in tensors.items()}}, path)
        return path

    def _log_usage(self, model: RegModel, epoch: int) -> Dict[str, np.ndarray]:
        usage = {}
        for name, quantizer in model.vector_quantizers().items():
            counts = quantizer.usage_histogram()
            dead = int((counts == 0).sum())
            usage[name] = counts
            logger.debug(f"epoch {epoch} {name}: usage perplexity={usage_perplexity(counts):.2f}")
            if dead > 0:
                logger.warning(f"epoch {epoch} {name}: {dead}/{len(counts)} codes unused")
        return usage

    def run(self) -> TrainResult:
        cfg = self.config
        self.output_dir.mkdir(parents=True, exist_ok=True)
        cfg.write_echo(self.output_dir)
        deterministic = seed_everything(self.seed, cfg.deterministic)
        model = self._build_model()
        model.train()
        optimizer = torch.optim.Adam(model.parameters(), lr=cfg.optimizer.lr, betas=cfg.optimizer.betas)
        rng = np.random.default_rng(self.seed)
        checkpoint = self.output_dir / "best.pt"

        train, val, test = self.data.train, self.data.val, self.data.test
        if not train:
            raise ValueError("training split is empty")
        selection = val if val else train
        logger.info(f"training {len(train)} pairs for {cfg.run.epochs} epochs, quantizers="
                    f"{cfg.network.enabled_quantizers}, deterministic={deterministic}")
        logger.info(f"unregistered DSC train={unregistered_dsc(train):.4f} val={unregistered_dsc(val):.4f} "
                    f"test={unregistered_dsc(test):.4f}")

        curves: List[dict] = []
        usage: Dict[str, np.ndarray] = {}
        best_val, best_epoch, epoch_loss = -np.inf, -1, float("nan")
        with open(self.output_dir / "loss_log.csv", "w", newline="") as fp:
            writer = csv.DictWriter(fp, fieldnames=LOSS_LOG_COLUMNS)
            writer.writeheader()
            for epoch in tqdm(range(1, cfg.run.epochs + 1), desc="train", leave=False):
                for quantizer in model.vector_quantizers().values():
                    quantizer.reset_usage()
                losses = []
                for batch in iterate_batches(train, cfg.run.batch_size, rng):
                    tensors = stack_batch(batch)
                    out = model(tensors["moving"], tensors["fixed"])
                    components = compute_components(tensors["moving"], tensors["fixed"], tensors["moving_mask"],
                                                    tensors["fixed_mask"], out.ddf, out.quant_losses)
                    loss = combine_losses(components, cfg.loss)
                    self.step += 1
                    if not torch.isfinite(loss):
                        dump = self._dump_batch(batch, tensors, epoch)
                        raise NonFiniteLossError(
                            f"non-finite loss at epoch {epoch} step {self.step}: "
                            f"{components.as_row(self.step, loss)}; batch dumped to {dump}", str(dump))
                    optimizer.zero_grad()
                    loss.backward()
                    optimizer.step()
                    row = components.as_row(self.step, loss)
                    writer.writerow(row)
                    logger.trace(row)
                    losses.append(float(loss))
                fp.flush()
                epoch_loss = float(np.mean(losses))
                usage = self._log_usage(model, epoch)

                if epoch % cfg.run.eval_every and epoch != cfg.run.epochs:
                    continue
                train_dsc, val_dsc, test_dsc = mean_dsc(model, train), mean_dsc(model, val), mean_dsc(model, test)
                curves.append({"epoch": epoch, "loss": epoch_loss, "train_dsc": train_dsc, "val_dsc": val_dsc,
                               "test_dsc": test_dsc, "gap": train_dsc - test_dsc})
                logger.debug(f"epoch {epoch} loss={epoch_loss:.6f} train={train_dsc:.4f} val={val_dsc:.4f} "
                             f"test={test_dsc:.4f}")
                score = val_dsc if val else train_dsc
                if score > best_val:
                    best_val, best_epoch = score, epoch
                    save_checkpoint(checkpoint, model, extra={"epoch": epoch, "val_dsc": score, "seed": self.seed,
                                                              "train_config": cfg.echo()})

        frame = pd.DataFrame(curves, columns=CURVE_COLUMNS)
        frame.to_csv(self.output_dir / "curves.csv", index=False)
        plot_curves(frame, str(self.output_dir / "curves.png"))
        if usage:
            pd.DataFrame({k: pd.Series(v) for k, v in usage.items()}).to_csv(
                self.output_dir / "codebook_usage.csv", index_label="code")
            plot_usage(usage, str(self.output_dir / "codebook_usage.png"))
            for name, quantizer in model.vector_quantizers().items():
                save_codebook(self.output_dir / "codebooks" / f"{name}.cb", quantizer.to_codebook())

        best = load_checkpoint(checkpoint, cfg.network)
        logger.success(f"training done: best {'val' if val else 'train'} DSC={best_val:.4f} at epoch {best_epoch}, "
                       f"checkpoint {checkpoint}")
        return TrainResult(best, self.output_dir, checkpoint, frame, best_epoch, float(best_val), epoch_loss, usage)


def train(config: TrainConfig, data: SplitDataset, output_dir, *, seed: Optional[int] = None,
          collaborative_codebook: Optional[Codebook] = None) -> TrainResult:
    seed = config.run.seeds[0] if seed is None else seed
    return Trainer(config, data, output_dir, seed=seed, collaborative_codebook=collaborative_codebook).run()
