# Prompt-driven CAM toolkit
# Copyright (C) 2023 The promptcam developers
#
# This program is free software: you can redistribute it and/or modify
# it under the terms of the GNU General Public License as published by
# the Free Software Foundation, either version 3 of the License, or
# (at your option) any later version.
#
# This program is distributed in the hope that it will be useful,
# but WITHOUT ANY WARRANTY; without even the implied warranty of
# MERCHANTABILITY or FITNESS FOR A PARTICULAR PURPOSE.  See the
# GNU General Public License for more details.
#
# You should have received a copy of the GNU General Public License
# along with this program.  If not, see <http://www.gnu.org/licenses/>.

"""
Pseudo-masks from activation maps, and their evaluation against reference masks.

Mask label 0 is background, k+1 is class k and 255 marks void pixels
(reference masks only), which evaluation ignores.
"""

import json
import logging
import os
from dataclasses import dataclass, field

import numpy as np
import torch
from PIL import Image

from pole.cam_core import ActivationMaps
from pole.clip_bridge import upsample_maps

logger = logging.getLogger(__name__)

BACKGROUND = 0
VOID = 255

CAM_SUFFIX = '.cam'
SIDECAR_SUFFIX = '.json'


class InvalidThreshold(ValueError):
    """The background threshold is outside (0, 1)."""
    pass


class MaskMismatch(ValueError):
    """Predicted and reference masks do not line up."""
    pass


class PseudoMask():
    """
    H x W array of labels for one image.
    """
    def __init__(self, labels, image_id, num_classes=None):
        labels = np.asarray(labels)
        if labels.ndim != 2:
            raise MaskMismatch('Mask %s should be H x W, got shape %s' % (image_id, labels.shape))
        if labels.size and labels.min() < 0:
            raise MaskMismatch('Mask %s has negative labels' % image_id)
        if num_classes is not None:
            bad = (labels > num_classes) & (labels != VOID)
            if bad.any():
                raise MaskMismatch('Mask %s has labels above %d' % (image_id, num_classes))
        self.labels = labels.astype(np.uint8)
        self.image_id = image_id

    @property
    def shape(self):
        return self.labels.shape

    def present_labels(self):
        """Sorted foreground labels (k+1) found in the mask."""
        return sorted(int(v) for v in np.unique(self.labels) if v not in (BACKGROUND, VOID))

    def __str__(self):
        return self.image_id


@dataclass
class EvalReport:
    """
    IoU per label (background first) and their mean, from a pooled confusion
    matrix whose rows are reference labels and columns predicted labels.
    Labels with an empty union have IoU None and are left out of the mean.
    """
    per_class_iou: list
    miou: float
    confusion: np.ndarray
    metadata: dict = field(default_factory=dict)

    def to_dict(self):
        return {'per_class_iou': self.per_class_iou,
                'miou': self.miou,
                'confusion': self.confusion.tolist(),
                'metadata': self.metadata}

    @classmethod
    def from_dict(cls, d):
        return cls(per_class_iou=d['per_class_iou'],
                   miou=d['miou'],
                   confusion=np.array(d['confusion'], dtype=np.int64),
                   metadata=d.get('metadata', {}))

    def write(self, path):
        with open(path, 'w', encoding='utf-8') as f:
            json.dump(self.to_dict(), f, indent=2, sort_keys=True)

    @classmethod
    def read(cls, path):
        with open(path, encoding='utf-8') as f:
            return cls.from_dict(json.load(f))


def cams_to_pseudo_mask(maps, y, bg_threshold, size=None, image_id=''):
    """
    Label each pixel with the strongest present class, or background where
    no present class reaches bg_threshold.
    Maps are bilinearly upsampled to size (H, W) first, if given.
    """
    if not 0 < bg_threshold < 1:
        raise InvalidThreshold('Background threshold must lie in (0, 1), got %g' % bg_threshold)
    if not maps.normalized:
        raise ValueError('Pseudo-masks need sigmoid-normalised maps')
    values = maps.values.detach()
    if size is not None:
        values = upsample_maps(values, size)
    values = values.cpu().numpy()
    present = np.flatnonzero(np.asarray(torch.as_tensor(y).cpu()))
    labels = np.zeros(values.shape[1:], dtype=np.uint8)
    if len(present):
        scores = values[present]
        best = scores.max(axis=0)
        # argmax returns the first maximum, so ties go to the lower class
        winner = present[scores.argmax(axis=0)] + 1
        labels = np.where(best < bg_threshold, BACKGROUND, winner).astype(np.uint8)
    return PseudoMask(labels, image_id, maps.num_classes)


def confusion_matrix(pred, ref, n):
    """
    n x n count matrix of (reference, predicted) label pairs of one image,
    ignoring void reference pixels.
    """
    valid = ref != VOID
    r = ref[valid].astype(np.int64)
    p = pred[valid].astype(np.int64)
    if r.size and (r.max() >= n or p.max() >= n):
        raise MaskMismatch('Labels exceed the %d evaluated classes' % n)
    return np.bincount(n * r + p, minlength=n * n).reshape(n, n)


def iou_from_confusion(confusion):
    """
    Returns (per-label IoU with None for empty unions, mean IoU).
    """
    tp = np.diag(confusion).astype(np.float64)
    union = confusion.sum(axis=0) + confusion.sum(axis=1) - tp
    per_class = [float(t / u) if u > 0 else None for t, u in zip(tp, union)]
    valid = [v for v in per_class if v is not None]
    miou = float(np.mean(valid)) if valid else 0.0
    return per_class, miou


def evaluate_miou(preds, refs, num_classes=None):
    """
    EvalReport of the predicted masks against the reference masks,
    from a confusion matrix pooled over all images.
    num_classes is K, the number of foreground classes.
    """
    if len(preds) != len(refs):
        raise MaskMismatch('%d predictions for %d references' % (len(preds), len(refs)))
    for p, r in zip(preds, refs):
        if p.image_id != r.image_id:
            raise MaskMismatch('Prediction %s paired with reference %s' % (p.image_id, r.image_id))
        if p.shape != r.shape:
            raise MaskMismatch('Image %s: prediction is %s, reference is %s' % (p.image_id, p.shape, r.shape))
    if num_classes is None:
        top = 0
        for m in list(preds) + list(refs):
            labels = m.labels[m.labels != VOID]
            if labels.size:
                top = max(top, int(labels.max()))
        num_classes = top
    n = num_classes + 1
    confusion = np.zeros((n, n), dtype=np.int64)
    for p, r in zip(preds, refs):
        confusion += confusion_matrix(p.labels, r.labels, n)
    per_class, miou = iou_from_confusion(confusion)
    return EvalReport(per_class_iou=per_class, miou=miou, confusion=confusion)


def write_mask_png(mask, path):
    """8-bit single-channel PNG of label indices."""
    Image.fromarray(mask.labels).save(path)


def read_mask_png(path, image_id=None):
    """
    Label mask from a PNG. Palette PNGs (VOC SegmentationClass) give their indices.
    """
    with Image.open(path) as im:
        if im.mode not in ('L', 'P'):
            im = im.convert('L')
        labels = np.array(im, dtype=np.uint8)
    if image_id is None:
        image_id = os.path.splitext(os.path.basename(path))[0]
    return PseudoMask(labels, image_id)


def write_cam_dump(maps, image_id, class_indices, directory):
    """
    Write maps as a little-endian float32 row-major blob <id>.cam
    with a JSON sidecar <id>.json. Returns the blob path.
    """
    values = maps.values.detach().cpu().numpy().astype('<f4')
    blob = os.path.join(directory, image_id + CAM_SUFFIX)
    values.tofile(blob)
    k, h, w = values.shape
    sidecar = {'image_id': image_id,
               'K': k,
               "H'": h,
               "W'": w,
               'class_indices': list(class_indices),
               'normalized': bool(maps.normalized)}
    with open(os.path.join(directory, image_id + SIDECAR_SUFFIX), 'w', encoding='utf-8') as f:
        json.dump(sidecar, f, sort_keys=True)
    return blob


def read_cam_dump(blob):
    """
    Returns (ActivationMaps, sidecar dict) from a blob written by write_cam_dump().
    """
    with open(os.path.splitext(blob)[0] + SIDECAR_SUFFIX, encoding='utf-8') as f:
        sidecar = json.load(f)
    values = np.fromfile(blob, dtype='<f4').reshape(sidecar['K'], sidecar["H'"], sidecar["W'"])
    maps = ActivationMaps(torch.from_numpy(values.astype(np.float32)), sidecar.get('normalized', True))
    return maps, sidecar
