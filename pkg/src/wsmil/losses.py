"""Bag-level losses for multiple-instance learning from weak labels.

A bag is one recording; its instances are the frame predictions ``o_j`` and
its weak label ``Y`` is 1 if the event occurs anywhere in the recording.

=========  ==================================================================
kind       loss
=========  ==================================================================
fsl        mean_j BCE(o_j, Y)  (weak label copied onto every frame)
max_se     1/2 (max_j o_j - Y)^2
max_bce    BCE(max_j o_j, Y)
max_mean   [BCE(max o, Y) + BCE(mean o, Y/2)] / 2
max_min    [BCE(max o, Y) + BCE(min o, 0)] / 2
mmm        [BCE(max o, Y) + BCE(mean o, Y/2) + BCE(min o, 0)] / 3
=========  ==================================================================

Every function works on a (B, T) prediction tensor with an optional validity
mask and returns per-bag losses of shape (B,), so the same code serves single
bags and padded batches.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .errors import ContractError, ParameterError

LOSS_KINDS = ("fsl", "max_se", "max_bce", "max_mean", "max_min", "mmm")

# which of the max / mean / min terms each MIL kind averages
_TERMS = {
    "max_bce": ("max",),
    "max_mean": ("max", "mean"),
    "max_min": ("max", "min"),
    "mmm": ("max", "mean", "min"),
}


@dataclass
class BagLoss:
    kind: str
    value: float
    terms: dict = field(default_factory=dict)


def _prepare(o, Y, mask):
    o = ad.as_tensor(o)
    if o.data.ndim == 1:
        o = ad.reshape(o, (1, -1))
        if mask is not None:
            mask = np.asarray(mask).reshape(1, -1)
    if o.shape[-1] == 0:
        raise ContractError("empty bag: a bag needs at least one instance")
    Y = np.asarray(Y, dtype=np.float64).reshape(-1)
    if Y.shape[0] != o.shape[0]:
        raise ContractError(f"{Y.shape[0]} labels for {o.shape[0]} bags")
    if not np.isin(Y, (0.0, 1.0)).all():
        raise ContractError(f"weak labels must be 0 or 1, got {Y}")
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
    return o, Y, mask


def _term(kind, o, Y, mask):
    if kind == "max":
        return ad.binary_cross_entropy(ad.reduce_max(o, mask), Y)
    if kind == "mean":
        return ad.binary_cross_entropy(ad.reduce_mean(o, mask), Y / 2)
    return ad.binary_cross_entropy(ad.reduce_min(o, mask), np.zeros_like(Y))


def bag_terms(kind: str, o, Y, mask=None) -> dict:
    """Per-bag term tensors (each of shape (B,)) making up a loss kind."""
    o, Y, mask = _prepare(o, Y, mask)
    if kind == "fsl":
        frame = ad.binary_cross_entropy(o, np.broadcast_to(Y[:, None], o.shape))
        return {"fsl": ad.reduce_mean(frame, mask)}
    if kind == "max_se":
        return {"max": ad.mul(ad.squared_error(ad.reduce_max(o, mask), Y), 0.5)}
    if kind not in _TERMS:
        raise ParameterError(f"unknown loss kind {kind!r}; expected one of {LOSS_KINDS}")
    return {t: _term(t, o, Y, mask) for t in _TERMS[kind]}


def bag_losses(kind: str, o, Y, mask=None) -> ad.Tensor:
    """Per-bag loss tensor of shape (B,): the arithmetic mean of the kind's terms."""
    terms = list(bag_terms(kind, o, Y, mask).values())
    total = terms[0]
    for t in terms[1:]:
        total = ad.add(total, t)
    return total if len(terms) == 1 else ad.mul(total, 1.0 / len(terms))


def batch_loss(kind: str, o, Y, mask=None) -> ad.Tensor:
    """Scalar loss averaged over the bags of a batch."""
    return ad.mean_all(bag_losses(kind, o, Y, mask))


def bag_loss(kind: str, o, Y) -> BagLoss:
    """Evaluate one bag (1-D predictions, scalar label) and report its terms."""
    terms = bag_terms(kind, np.asarray(o, dtype=np.float64), [Y])
    values = {k: float(v.data[0]) for k, v in terms.items()}
    return BagLoss(kind, float(np.mean(list(values.values()))), values)


def fsl_loss(o, Y) -> BagLoss:
    return bag_loss("fsl", o, Y)


def max_se_loss(o, Y) -> BagLoss:
    return bag_loss("max_se", o, Y)


def max_bce_loss(o, Y) -> BagLoss:
    return bag_loss("max_bce", o, Y)


def max_mean_loss(o, Y) -> BagLoss:
    return bag_loss("max_mean", o, Y)


def max_min_loss(o, Y) -> BagLoss:
    return bag_loss("max_min", o, Y)


def mmm_loss(o, Y) -> BagLoss:
    return bag_loss("mmm", o, Y)
