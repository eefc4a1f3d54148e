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
Synthetic segmentation data: coloured disks on a grey striped background.

Class k is painted in prompt_colour() of its default ground-truth prompt,
which is the colour the mock encoder associates with that prompt.
The background has no colour at all.
"""

import json
import logging
import math
import os

import numpy as np
import torch
from PIL import Image, ImageDraw

from pole.cam_core import ImageSample, MIN_IMAGE_SIZE
from pole.clip_bridge import prompt_colour
from pole.prompts import DEFAULT_TEMPLATE, VOC_CLASSES
from pole.pseudo_labels import PseudoMask

logger = logging.getLogger(__name__)

MAX_BLOBS = 3

LABELS_FILE = 'labels.json'
IMAGES_DIR = 'images'
MASKS_DIR = 'masks'


def toy_class_names(K):
    """The first K VOC class names, then class20, class21, ..."""
    return [VOC_CLASSES[k] if k < len(VOC_CLASSES) else 'class%d' % k for k in range(K)]


def class_colour(name, template=DEFAULT_TEMPLATE):
    """uint8 RGB colour of a class."""
    return np.array([round(c * 255) for c in prompt_colour(template.render(name))], dtype=np.uint8)


def draw_disk(mask, cx, cy, r, value):
    """
    Returns a copy of mask (2-D uint8) with a filled disk of radius r
    centred at (cx, cy) set to value.
    """
    im = Image.fromarray(mask)
    ImageDraw.Draw(im).ellipse([cx - r, cy - r, cx + r, cy + r], fill=int(value))
    return np.array(im)


def _background(rng, size):
    x = np.arange(size)
    period = rng.uniform(size / 6, size / 2)
    phase = rng.uniform(0, 2 * math.pi)
    stripes = 0.08 * np.sin(2 * math.pi * x / period + phase)
    grey = 0.5 + stripes[np.newaxis, :] + 0.03 * rng.standard_normal((size, size))
    grey = np.round(np.clip(grey, 0, 1) * 255).astype(np.uint8)
    # Same value in every channel
    return np.repeat(grey[:, :, np.newaxis], 3, axis=2)


def make_toy_dataset(n, K, size, seed, class_names=None):
    """
    Returns a list of n (ImageSample, PseudoMask) pairs of size x size images
    with 1 to 3 disks of distinct classes each.
    """
    if n <= 0 or K <= 0:
        raise ValueError('Need a positive number of images and classes')
    if size < MIN_IMAGE_SIZE:
        raise ValueError('Toy images must be at least %d pixels' % MIN_IMAGE_SIZE)
    if class_names is None:
        class_names = toy_class_names(K)
    colours = [class_colour(name) for name in class_names]
    rng = np.random.default_rng(seed)
    dataset = []
    for i in range(n):
        image = _background(rng, size)
        mask = np.zeros((size, size), dtype=np.uint8)
        count = int(rng.integers(1, min(K, MAX_BLOBS) + 1))
        for k in rng.choice(K, size=count, replace=False):
            r = int(rng.integers(max(2, size // 8), max(3, size // 4) + 1))
            cx = int(rng.integers(r, size - r))
            cy = int(rng.integers(r, size - r))
            mask = draw_disk(mask, cx, cy, r, k + 1)
        for k in range(K):
            image[mask == k + 1] = colours[k]
        label = np.zeros(K, dtype=np.float32)
        for v in np.unique(mask):
            if v:
                label[v - 1] = 1
        sample_id = 'toy_%04d' % i
        pixels = torch.from_numpy(image).permute(2, 0, 1).float() / 255
        dataset.append((ImageSample(pixels, torch.from_numpy(label), sample_id),
                        PseudoMask(mask, sample_id, K)))
    return dataset


def write_toy_dataset(dataset, class_names, directory):
    """
    Write images/<id>.png, masks/<id>.png and labels.json under directory.
    """
    os.makedirs(os.path.join(directory, IMAGES_DIR), exist_ok=True)
    os.makedirs(os.path.join(directory, MASKS_DIR), exist_ok=True)
    entries = []
    for sample, mask in dataset:
        image = (sample.pixels * 255).round().byte().permute(1, 2, 0).numpy()
        Image.fromarray(image).save(os.path.join(directory, IMAGES_DIR, sample.id + '.png'))
        Image.fromarray(mask.labels).save(os.path.join(directory, MASKS_DIR, sample.id + '.png'))
        entries.append({'id': sample.id, 'label': [int(v) for v in sample.label]})
    with open(os.path.join(directory, LABELS_FILE), 'w', encoding='utf-8') as f:
        json.dump({'classes': list(class_names), 'samples': entries}, f, indent=1)
    logger.info('Wrote %d toy images to %s', len(dataset), directory)
