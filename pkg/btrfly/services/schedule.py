# btrfly/services/schedule.py
import logging
import os
import random

import numpy as np
import torch

from btrfly.schemas.training import ScheduleConfig

logger = logging.getLogger(__name__)


def lr_at(iteration: int, cfg: ScheduleConfig) -> float:
    """lr0 * decay^floor(iteration / decay_every), never below lr_floor"""
    if iteration < 0:
        raise ValueError(f"iteration must be >= 0, got {iteration}")
    return max(cfg.lr_floor, cfg.lr0 * cfg.lr_decay ** (iteration // cfg.lr_decay_every))


def seed_everything(seed: int, deterministic: bool = True) -> None:
    """Seeds python, numpy and torch; optionally forces deterministic kernels"""
    random.seed(seed)
    np.random.seed(seed % 2**32)
    torch.manual_seed(seed)
    if deterministic:
        os.environ.setdefault("CUBLAS_WORKSPACE_CONFIG", ":4096:8")
        torch.use_deterministic_algorithms(True, warn_only=True)
        torch.backends.cudnn.benchmark = False
        torch.backends.cudnn.deterministic = True
    logger.debug("Seeded run with %d (deterministic=%s)", seed, deterministic)
