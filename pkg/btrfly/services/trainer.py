# btrfly/services/trainer.py
import csv
import logging
from pathlib import Path
from typing import Iterator, NamedTuple, Optional, Union

import numpy as np
import torch
import torch.nn.functional as F
from pydantic import BaseModel, Field
from torch.utils.data import DataLoader

from btrfly.core.exceptions import DivergenceError
from btrfly.models.adversaries import EnergyDiscriminator, WassersteinDiscriminator, as_adversary_input
from btrfly.models.btrfly import BtrflyNet
from btrfly.schemas.annotation import AnnotationSet
from btrfly.schemas.dataset import PreparedManifest, Split
from btrfly.schemas.training import TrainConfig, TrainMode
from btrfly.services import adversarial, checkpoint as checkpoint_service, reformation, volume_io
from btrfly.services.augmentation import augment_sample
from btrfly.services.dataset import Batch, PreparedDataset, collate_samples, keep_samples
from btrfly.services.inference import centroids_from_views, predict_views
from btrfly.services.metrics import identification_rate
from btrfly.services.schedule import lr_at, seed_everything

logger = logging.getLogger(__name__)

LOG_COLUMNS = ["iter", "lr", "l2", "xent", "adv_g", "adv_d", "val_id_rate", "val_d_real", "val_d_fake"]
VIEWS = ("sagittal", "coronal")

Discriminator = Union[EnergyDiscriminator, WassersteinDiscriminator]

__all__ = ["LossTerms", "TrainResult", "btrfly_loss", "lr_at", "train"]


class LossTerms(NamedTuple):
    total: torch.Tensor
    l2: torch.Tensor
    xent: torch.Tensor


class TrainResult(BaseModel):
    checkpoint: Path
    bundle: Path
    log: Path
    losses: list[float] = Field(default_factory=list, description="Supervised loss per iteration")
    val_id_rates: dict[int, float] = Field(default_factory=dict)
    val_d_real: dict[int, float] = Field(default_factory=dict, description="Mean E or D of validation targets")
    val_d_fake: dict[int, float] = Field(default_factory=dict, description="Mean E or D of validation predictions")


def btrfly_loss(pred: torch.Tensor, target: torch.Tensor, weights: torch.Tensor) -> LossTerms:
    """
    Supervised loss of one view, batch-averaged.

    l2 is the norm of (pred - target) over all pixels and channels of a
    sample. The cross-entropy H(softmax(target), softmax(pred)) is taken per
    pixel over the 27 channels, scaled by the weight of the target's argmax
    channel and averaged over pixels.

    Args:
        pred: (N, 27, h, w) raw network output
        target: (N, 27, h, w)
        weights: (27,) per-channel weights, background first
    """
    if pred.shape != target.shape:
        raise ValueError(f"prediction {tuple(pred.shape)} and target {tuple(target.shape)} differ")
    l2 = (pred - target).flatten(1).norm(p=2, dim=1).mean()
    entropy = -(F.softmax(target, dim=1) * F.log_softmax(pred, dim=1)).sum(dim=1)
    pixel_weights = weights.to(pred)[target.argmax(dim=1)]
    xent = (pixel_weights * entropy).mean()
    return LossTerms(total=l2 + xent, l2=l2, xent=xent)


def _class_weights(manifest: PreparedManifest) -> torch.Tensor:
    annotations = [
        volume_io.load_annotations(Path(scan.annotation_path))
        for scan in manifest.scans
        if scan.split is Split.TRAIN
    ]
    weights = reformation.median_frequency_weights(annotations)
    logger.info("Median-frequency weights: %s", {k.name: round(v, 3) for k, v in weights.items() if v})
    return torch.from_numpy(reformation.class_weight_vector(weights))


def _build_discriminators(cfg: TrainConfig) -> dict[str, Discriminator]:
    if cfg.mode is TrainMode.PE_EB:
        return {view: EnergyDiscriminator(cfg.ebd) for view in VIEWS}
    if cfg.mode is TrainMode.PE_W:
        return {view: WassersteinDiscriminator(cfg.wd) for view in VIEWS}
    return {}


def _batches(loader: DataLoader) -> Iterator[list]:
    while True:
        yield from loader


def _views(batch: Batch, sag_pred: torch.Tensor, cor_pred: torch.Tensor):
    return {
        "sagittal": (batch.sag_target, sag_pred),
        "coronal": (batch.cor_target, cor_pred),
    }


def _discriminator_step(
    cfg: TrainConfig,
    iteration: int,
    discriminator: Discriminator,
    optimizer: torch.optim.Optimizer,
    real: torch.Tensor,
    fake: torch.Tensor,
    generator: torch.Generator,
) -> torch.Tensor:
    """One update of a view's discriminator on (target, detached prediction)"""
    if cfg.mode is TrainMode.PE_EB:
        margin = adversarial.margin_schedule(iteration, cfg.total_iters, cfg.ebd.margin_initial)
        energy_real, _ = adversarial.ebd_energy(discriminator, real)
        energy_fake, _ = adversarial.ebd_energy(discriminator, fake.detach())
        loss_d, _ = adversarial.ebd_losses(energy_real, energy_fake, margin)
    else:
        loss_d, _ = adversarial.wd_losses(discriminator, real, fake.detach(), cfg.wd.gp_lambda, generator)
    if not torch.isfinite(loss_d):
        logger.warning("Non-finite discriminator loss at iteration %d: %s", iteration, loss_d.item())
        raise DivergenceError("discriminator loss diverged", iteration=iteration)
    optimizer.zero_grad(set_to_none=True)
    loss_d.backward()
    optimizer.step()
    return loss_d.detach()


def _generator_term(cfg: TrainConfig, discriminator: Discriminator, fake: torch.Tensor) -> torch.Tensor:
    if cfg.mode is TrainMode.PE_EB:
        energy_fake, _ = adversarial.ebd_energy(discriminator, fake)
        return energy_fake.mean()
    return -adversarial.wd_score(discriminator, fake).mean()


def _mean_or_nan(values: list[float]) -> float:
    return float(np.mean(values)) if values else float("nan")


@torch.no_grad()
def _validation_scores(
    cfg: TrainConfig,
    model: BtrflyNet,
    discriminators: dict[str, Discriminator],
    dataset: PreparedDataset,
    device,
) -> tuple[float, float]:
    """
    Mean E (EB) or D (W) over the validation pairs, both views.

    Returns (real, fake): targets against the clamped predictions of `model`.
    """
    was_training = model.training
    real_scores, fake_scores = [], []
    for index in range(len(dataset)):
        pair = dataset[index]
        sag, cor = predict_views(
            model, pair.sagittal.image, pair.coronal.image, pair.sagittal.image_mean, pair.coronal.image_mean
        )
        predictions = {"sagittal": sag, "coronal": cor}
        for view, discriminator in discriminators.items():
            discriminator.eval()
            for scores, heatmap in (
                (real_scores, np.clip(getattr(pair, view).target, 0.0, 1.0)),
                (fake_scores, predictions[view].data),
            ):
                x = torch.from_numpy(np.ascontiguousarray(heatmap.transpose(2, 0, 1)))[None].float().to(device)
                x = as_adversary_input(x)
                if cfg.mode is TrainMode.PE_EB:
                    scores.append(float(adversarial.ebd_energy(discriminator, x)[0].mean()))
                elif min(x.shape[2], x.shape[3]) >= cfg.wd.min_input_size:
                    scores.append(float(adversarial.wd_score(discriminator, x).mean()))
            discriminator.train()
    model.train(was_training)
    return _mean_or_nan(real_scores), _mean_or_nan(fake_scores)


def validation_id_rate(model: BtrflyNet, dataset: PreparedDataset, manifest: PreparedManifest) -> float:
    """Pooled id rate (%) at T = 0 and d_th = 20 mm on the prepared validation projections"""
    was_training = model.training
    preds, truths = {}, {}
    for index, sample in enumerate(dataset.samples):
        if sample.scan_id in preds:
            continue
        pair = dataset[index]
        sag, cor = predict_views(
            model,
            pair.sagittal.image,
            pair.coronal.image,
            pair.sagittal.image_mean,
            pair.coronal.image_mean,
        )
        scan = manifest.scan(sample.scan_id)
        preds[sample.scan_id] = centroids_from_views(sag, cor, scan.geometry)
        truths[sample.scan_id] = AnnotationSet.load(Path(scan.annotation_path))
    model.train(was_training)
    return identification_rate(preds, truths)


def train(manifest_path: Path, cfg: TrainConfig, out_dir: Path) -> TrainResult:
    """
    Trains the labeller on a prepared dataset.

    In the prior-encoding modes each view has its own discriminator and
    optimizer; discriminators and generator alternate 1:1 (or
    `d_updates_per_g`:1) and the generator always keeps the supervised loss.

    Returns:
        Paths of the training checkpoint, the inference bundle and the CSV log

    Raises:
        EmptyDataset: no training samples
        DivergenceError: a loss became NaN or infinite
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest_path = Path(manifest_path)
    seed_everything(cfg.seed, cfg.deterministic)
    device = checkpoint_service.resolve_device(cfg.device)

    train_set = PreparedDataset(manifest_path, Split.TRAIN)
    train_set.require_samples()
    val_set = PreparedDataset(manifest_path, Split.VAL)
    manifest = train_set.manifest
    weights = _class_weights(manifest).to(device)

    model_config = cfg.model
    if model_config.dual_input != manifest.dual_input:
        logger.warning("Prepared data sets dual_input=%s; overriding the model config", manifest.dual_input)
        model_config = model_config.model_copy(update={"dual_input": manifest.dual_input})
    model = BtrflyNet(model_config).to(device)
    optimizer = torch.optim.Adam(model.parameters(), lr=cfg.lr0, betas=cfg.adam_betas)
    discriminators = {view: d.to(device) for view, d in _build_discriminators(cfg).items()}
    d_optimizers = {
        view: torch.optim.Adam(d.parameters(), lr=cfg.lr0, betas=cfg.adam_betas)
        for view, d in discriminators.items()
    }

    loader_kwargs = {"prefetch_factor": cfg.prefetch_batches} if cfg.num_workers > 0 else {}
    loader = DataLoader(
        train_set,
        batch_size=cfg.batch_size,
        shuffle=True,
        num_workers=cfg.num_workers,
        collate_fn=keep_samples,
        generator=torch.Generator().manual_seed(cfg.seed),
        **loader_kwargs,
    )
    batches = _batches(loader)
    aug_rng = np.random.default_rng(cfg.seed)
    gp_generator = torch.Generator().manual_seed(cfg.seed)
    factor = model_config.downsampling

    logger.info(
        "Training %s (%s) on %d samples for %d iterations, device %s",
        "butterfly" if model_config.arms_fused else "Cor.+Sag. baseline",
        cfg.mode.value,
        len(train_set),
        cfg.total_iters,
        device,
    )
    result = TrainResult(
        checkpoint=out_dir / "checkpoint.pt",
        bundle=out_dir / "model.pt",
        log=out_dir / "train_log.csv",
    )
    with open(result.log, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(LOG_COLUMNS)
        model.train()
        for iteration in range(cfg.total_iters):
            lr = lr_at(iteration, cfg)
            for opt in (optimizer, *d_optimizers.values()):
                for group in opt.param_groups:
                    group["lr"] = lr

            samples = [augment_sample(s, cfg.augmentation, aug_rng) for s in next(batches)]
            batch = collate_samples(samples, factor).to(device)
            sag_pred, cor_pred = model(batch.sag, batch.cor, batch.sag_mean, batch.cor_mean)
            sag_terms = btrfly_loss(sag_pred, batch.sag_target, weights)
            cor_terms = btrfly_loss(cor_pred, batch.cor_target, weights)
            supervised = sag_terms.total + cor_terms.total

            adv_d = torch.zeros((), device=device)
            adv_g = torch.zeros((), device=device)
            for view, (target, pred) in _views(batch, sag_pred, cor_pred).items():
                if view not in discriminators:
                    continue
                real = as_adversary_input(target.clamp(0.0, 1.0))
                fake = as_adversary_input(pred)
                for _ in range(cfg.d_updates_per_g):
                    adv_d = adv_d + _discriminator_step(
                        cfg, iteration, discriminators[view], d_optimizers[view], real, fake, gp_generator
                    ) / cfg.d_updates_per_g
                adv_g = adv_g + _generator_term(cfg, discriminators[view], fake)

            loss_g = supervised + cfg.adversarial_weight * adv_g
            if not (torch.isfinite(loss_g) and torch.isfinite(adv_d)):
                logger.warning("Non-finite loss at iteration %d (G %s, D %s)", iteration, loss_g.item(), adv_d.item())
                raise DivergenceError("training loss diverged", iteration=iteration)
            optimizer.zero_grad(set_to_none=True)
            loss_g.backward()
            optimizer.step()

            result.losses.append(float(supervised.detach()))
            val_rate, val_real, val_fake = "", "", ""
            last = iteration + 1 == cfg.total_iters
            if val_set.samples and ((iteration + 1) % cfg.val_every == 0 or last):
                rate = validation_id_rate(model, val_set, manifest)
                result.val_id_rates[iteration + 1] = rate
                val_rate = f"{rate:.4f}"
                if discriminators:
                    real_score, fake_score = _validation_scores(cfg, model, discriminators, val_set, device)
                    result.val_d_real[iteration + 1] = real_score
                    result.val_d_fake[iteration + 1] = fake_score
                    val_real, val_fake = f"{real_score:.6f}", f"{fake_score:.6f}"
                logger.info("Validation id rate at iter %d: %.1f%%", iteration + 1, rate)
            writer.writerow(
                [
                    iteration,
                    lr,
                    float(sag_terms.l2 + cor_terms.l2),
                    float(sag_terms.xent + cor_terms.xent),
                    float(adv_g.detach()),
                    float(adv_d),
                    val_rate,
                    val_real,
                    val_fake,
                ]
            )
            if iteration % cfg.log_every == 0:
                logger.info(
                    "iter=%d lr=%.2e l2=%.4f xent=%.4f adv_g=%.4f adv_d=%.4f",
                    iteration,
                    lr,
                    float(sag_terms.l2 + cor_terms.l2),
                    float(sag_terms.xent + cor_terms.xent),
                    float(adv_g.detach()),
                    float(adv_d),
                )
            if (iteration + 1) % cfg.checkpoint_every == 0 and not last:
                checkpoint_service.save_checkpoint(
                    out_dir / f"checkpoint_{iteration + 1:06d}.pt",
                    model,
                    discriminators,
                    iteration=iteration + 1,
                    train_config=cfg,
                )

    checkpoint_service.save_checkpoint(result.checkpoint, model, discriminators, iteration=cfg.total_iters, train_config=cfg)
    checkpoint_service.export_inference_bundle(result.checkpoint, result.bundle)
    return result
