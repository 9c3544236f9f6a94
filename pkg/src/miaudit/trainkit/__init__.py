"""Desk-scale classifiers, augmentation and SGD training."""

from miaudit.trainkit.augment import (
    NO_AUGMENTATION, AugmentationPolicy, Transform, apply_augmentation,
    augment_batch, cutout, gaussian_noise, mirror, preset_policy, random_choice,
    shift)
from miaudit.trainkit.models import (
    ModelParams, cross_entropy, forward, init_params, loss_and_grad, softmax)
from miaudit.trainkit.train import (
    Checkpoint, DegenerateSubsetError, EarlyStop, TrainConfig,
    TrainingDivergence, evaluate, train)
