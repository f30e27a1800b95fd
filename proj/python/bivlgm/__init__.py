"""Bi-level vision-language graph matching for lesion segmentation."""

import json

from ._bivlgm import (
    affinity,
    aupr,
    ce_corr,
    class_prompt,
    contrastive_loss,
    dice_loss,
    embed_prompt,
    f_score,
    gen_sample,
    iou,
    l1_corr,
    lesion_ratio,
    positive_normalize,
    qc,
    relation_distortion,
    run_cli,
    severity_level,
    severity_prompt,
    sinkhorn,
)
from ._bivlgm import train as _train


def train(config=None):
    """Train on the synthetic suite; returns the run manifest as a dict."""
    return json.loads(_train(json.dumps(config or {})))


__all__ = [
    "affinity",
    "aupr",
    "ce_corr",
    "class_prompt",
    "contrastive_loss",
    "dice_loss",
    "embed_prompt",
    "f_score",
    "gen_sample",
    "iou",
    "l1_corr",
    "lesion_ratio",
    "positive_normalize",
    "qc",
    "relation_distortion",
    "run_cli",
    "severity_level",
    "severity_prompt",
    "sinkhorn",
    "train",
]
