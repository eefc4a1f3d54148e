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
Evaluating the CAMs of a checkpoint.
"""

import logging
import os

import torch

from pole.cam_core import ActivationMaps
from pole.class_selector import select_for_batch, write_selections
from pole.datasets import load_dataset
from pole.pseudo_labels import cams_to_pseudo_mask, evaluate_miou, write_cam_dump, write_mask_png
from pole.training import Trainer, load_checkpoint, network_from_checkpoint

logger = logging.getLogger(__name__)

CAMS_DIR = 'cams'
MASKS_DIR = 'masks'
REPORT_FILE = 'report.json'

STRATEGY_MANUAL = u'manual'
STRATEGY_POLE = u'POLE'


def run_name(checkpoint_path):
    """The run directory name of <run>/checkpoints/epoch_NNN.pt."""
    return os.path.basename(os.path.dirname(os.path.dirname(os.path.abspath(checkpoint_path))))


def run_metadata(config, epoch, name):
    """Metadata stored with an EvalReport, read back by the report command."""
    return {'run': name,
            'strategy': STRATEGY_MANUAL if config.pool_size == 1 else STRATEGY_POLE,
            'template': config.template().render('{}'),
            'pool_size': config.pool_size,
            'gate_mode': config.adapter_gate_mode,
            'encoder': config.encoder,
            'epoch': epoch,
            'bg_threshold': config.bg_threshold}


def compute_maps(network, sample):
    """Sigmoid-normalised ActivationMaps of one image."""
    with torch.no_grad():
        raw, _ = network(sample.pixels.unsqueeze(0))
    return ActivationMaps(torch.sigmoid(raw[0]), normalized=True)


def eval_cams(checkpoint, output_dir, config=None, class_names=None, dataset=None):
    """
    Write the CAMs and pseudo-masks of every image of the dataset under
    output_dir, and evaluate them against the reference masks.
    The dataset and bg_threshold come from config, or from the configuration
    stored in the checkpoint.
    Returns the EvalReport, or None when a reference mask is missing.
    """
    state = load_checkpoint(checkpoint)
    network, names, stored = network_from_checkpoint(state)
    if config is None:
        config = stored
    if dataset is None:
        class_names, dataset = load_dataset(config)
    if class_names is not None and list(class_names) != list(names):
        logger.warning('Dataset classes %s differ from the checkpoint classes %s', class_names, names)

    cams_dir = os.path.join(output_dir, CAMS_DIR)
    masks_dir = os.path.join(output_dir, MASKS_DIR)
    os.makedirs(cams_dir, exist_ok=True)
    os.makedirs(masks_dir, exist_ok=True)

    preds = []
    refs = []
    missing = []
    for sample, reference in dataset:
        maps = compute_maps(network, sample)
        write_cam_dump(maps, sample.id, range(maps.num_classes), cams_dir)
        pred = cams_to_pseudo_mask(maps, sample.label, config.bg_threshold, size=sample.size, image_id=sample.id)
        write_mask_png(pred, os.path.join(masks_dir, sample.id + '.png'))
        if reference is None:
            missing.append(sample.id)
            continue
        preds.append(pred)
        refs.append(reference)
    if missing:
        logger.warning('%d images have no reference mask (first %s), evaluation skipped', len(missing), missing[0])
        return None

    report = evaluate_miou(preds, refs, num_classes=len(names))
    report.metadata = run_metadata(stored, state['epoch'], run_name(checkpoint))
    report.write(os.path.join(output_dir, REPORT_FILE))
    logger.info('%s epoch %d: CAM mIoU %.4f over %d images',
                report.metadata['run'], state['epoch'], report.miou, len(preds))
    return report


def select_from_checkpoint(config, path, checkpoint=None, class_names=None, dataset=None):
    """
    Select a name for every present class of every image of the dataset and
    write the records to path. Without a checkpoint the network is freshly
    initialised from the configuration. Returns the records.
    """
    trainer = Trainer(config, class_names, dataset)
    if checkpoint is not None:
        state = load_checkpoint(checkpoint)
        trainer.network.load_state_dict(state['network'])
        if trainer.visual_adapter is not None and state['visual_adapter'] is not None:
            trainer.visual_adapter.load_state_dict(state['visual_adapter'])
            trainer.text_adapter.load_state_dict(state['text_adapter'])
    visual, text = (None, None)
    if config.select_after_adapter and trainer.adapters():
        visual, text = trainer.adapters()
    records = []
    for sample, _ in trainer.dataset:
        maps = compute_maps(trainer.network, sample)
        records.extend(select_for_batch([sample], [maps], trainer.pools, trainer.template, trainer.encoder,
                                        visual_adapter=visual, text_adapter=text))
    write_selections(records, path)
    logger.info('Wrote %d selections to %s', len(records), path)
    return records
