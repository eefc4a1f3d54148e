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
Reading datasets from disk, and seeded batching with augmentation.

Two layouts are understood:
    toy   images/<id>.png, masks/<id>.png, labels.json (as written by make_toy)
    voc   JPEGImages/<id>.jpg, SegmentationClass/<id>.png,
          ImageSets/Segmentation/<image_set>.txt
"""

import json
import logging
import os

import numpy as np
import torch
from django.core.exceptions import ImproperlyConfigured
from PIL import Image

from pole.cam_core import ImageSample
from pole.prompts import VOC_CLASSES
from pole.pseudo_labels import read_mask_png
from pole.toy_data import IMAGES_DIR, LABELS_FILE, MASKS_DIR

logger = logging.getLogger(__name__)


class DatasetError(ImproperlyConfigured):
    """The dataset directory cannot be read."""
    pass


def _read_image(path):
    with Image.open(path) as im:
        rgb = np.array(im.convert('RGB'), dtype=np.uint8)
    return torch.from_numpy(rgb).permute(2, 0, 1).float() / 255


def load_toy_dataset(directory):
    """
    Returns (class names, list of (ImageSample, PseudoMask or None)).
    """
    try:
        with open(os.path.join(directory, LABELS_FILE), encoding='utf-8') as f:
            index = json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        raise DatasetError('Cannot read %s in %s: %s' % (LABELS_FILE, directory, e))
    class_names = index['classes']
    dataset = []
    for entry in index['samples']:
        sample_id = entry['id']
        pixels = _read_image(os.path.join(directory, IMAGES_DIR, sample_id + '.png'))
        label = torch.tensor(entry['label'], dtype=torch.float32)
        mask_path = os.path.join(directory, MASKS_DIR, sample_id + '.png')
        mask = read_mask_png(mask_path, sample_id) if os.path.exists(mask_path) else None
        dataset.append((ImageSample(pixels, label, sample_id), mask))
    return class_names, dataset


def load_voc_dataset(root, image_set='train', class_names=VOC_CLASSES):
    """
    Returns (class names, list of (ImageSample, PseudoMask or None)).
    Image labels come from the segmentation masks, so every listed image
    needs one. Images with only background and void are skipped.
    """
    list_path = os.path.join(root, 'ImageSets', 'Segmentation', image_set + '.txt')
    try:
        with open(list_path) as f:
            ids = [line.strip() for line in f if line.strip()]
    except OSError as e:
        raise DatasetError('Cannot read image set %s: %s' % (list_path, e))
    K = len(class_names)
    dataset = []
    for sample_id in ids:
        mask_path = os.path.join(root, 'SegmentationClass', sample_id + '.png')
        if not os.path.exists(mask_path):
            raise DatasetError('Image %s has no segmentation mask to derive its label from' % sample_id)
        mask = read_mask_png(mask_path, sample_id)
        label = torch.zeros(K)
        for v in mask.present_labels():
            if v <= K:
                label[v - 1] = 1
        if not label.any():
            logger.warning('Skipping %s, it has no foreground class', sample_id)
            continue
        pixels = _read_image(os.path.join(root, 'JPEGImages', sample_id + '.jpg'))
        dataset.append((ImageSample(pixels, label, sample_id), mask))
    return list(class_names), dataset


def load_dataset(config):
    """Dataset named by a RunConfig."""
    if config.dataset_format == 'toy':
        class_names, dataset = load_toy_dataset(config.dataset)
    else:
        class_names, dataset = load_voc_dataset(config.dataset, config.image_set)
    if not dataset:
        raise DatasetError('Dataset %s has no usable images' % config.dataset)
    logger.info('Loaded %d images of %d classes from %s', len(dataset), len(class_names), config.dataset)
    return class_names, dataset


def epoch_generator(seed, epoch):
    """torch.Generator that only depends on (seed, epoch)."""
    state = np.random.SeedSequence([seed, epoch]).generate_state(1)[0]
    return torch.Generator().manual_seed(int(state))


def augment(pixels, generator, crop_size=None, hflip=False):
    """
    Random crop (zero-padded up to crop_size) and horizontal flip.
    """
    if crop_size is not None:
        _, h, w = pixels.shape
        if h < crop_size or w < crop_size:
            pixels = torch.nn.functional.pad(pixels, (0, max(0, crop_size - w), 0, max(0, crop_size - h)))
            _, h, w = pixels.shape
        top = int(torch.randint(0, h - crop_size + 1, (1,), generator=generator))
        left = int(torch.randint(0, w - crop_size + 1, (1,), generator=generator))
        pixels = pixels[:, top:top + crop_size, left:left + crop_size]
    if hflip and float(torch.rand(1, generator=generator)) < 0.5:
        pixels = pixels.flip(-1)
    return pixels


def iterate_batches(dataset, batch_size, seed, epoch, crop_size=None, hflip=False, shuffle=True):
    """
    Yields lists of augmented ImageSamples. The order and augmentation of
    each epoch only depend on (seed, epoch).
    """
    g = epoch_generator(seed, epoch)
    order = torch.randperm(len(dataset), generator=g).tolist() if shuffle else range(len(dataset))
    batch = []
    for i in order:
        sample = dataset[i][0]
        pixels = augment(sample.pixels, g, crop_size, hflip)
        batch.append(ImageSample(pixels, sample.label, sample.id))
        if len(batch) == batch_size:
            yield batch
            batch = []
    if batch:
        yield batch


def stack_batch(batch):
    """
    Returns (images B x 3 x H x W, labels B x K) of a batch.
    """
    sizes = {s.size for s in batch}
    if len(sizes) > 1:
        raise ImproperlyConfigured('Images of different sizes in one batch, set crop_size or use batch_size 1')
    return torch.stack([s.pixels for s in batch]), torch.stack([s.label.float() for s in batch])

