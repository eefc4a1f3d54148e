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
The training loop.

Each step runs the CAM network on a batch, (re)selects the class name of
every present class from the current maps, builds the masked embeddings,
refines them with the adapters and takes an SGD step on

    classification loss + contrastive_weight * contrastive loss

A checkpoint is written for the initial state (epoch 0) and after every epoch.
Everything random is derived from the configured seed, so two runs of the
same configuration, or a run resumed from any checkpoint, produce the same
weights bit for bit.
"""

import csv
import logging
import math
import os
from dataclasses import dataclass

import torch
from django.core.exceptions import ImproperlyConfigured

from pole.adapters import make_adapter_pair
from pole.cam_core import ActivationMaps, CamNetwork, ResNet50Backbone, build_backbone, multilabel_soft_margin_loss
from pole.class_selector import SelectionRecord, select_for_batch, selection_key, write_selections
from pole.clip_bridge import build_encoder
from pole.config import UNHASHED_KEYS, RunConfig
from pole.datasets import iterate_batches, load_dataset, stack_batch
from pole.objective import LossWeights, batch_objective
from pole.prompts import build_prompt_set

logger = logging.getLogger(__name__)

CHECKPOINT_DIR = 'checkpoints'
LOSS_FILE = 'losses.csv'
SELECTION_FILE = 'selections.jsonl'
NAN_DUMP_FILE = 'nan_dump.pt'
LOSS_COLUMNS = ('step', 'cls_loss', 'cont_loss', 'total')


class NumericFailure(Exception):
    """The training loss is no longer finite."""
    pass


class CheckpointMismatch(ImproperlyConfigured):
    """A checkpoint was written with a different configuration."""
    pass


def checkpoint_name(epoch):
    return 'epoch_%03d.pt' % epoch


def load_checkpoint(path):
    """The dict written by Trainer.save_checkpoint()."""
    try:
        return torch.load(path, map_location='cpu', weights_only=False)
    except (OSError, RuntimeError) as e:
        raise ImproperlyConfigured('Cannot load checkpoint %s: %s' % (path, e))


def network_from_checkpoint(checkpoint):
    """
    Returns (CamNetwork, class names, RunConfig) rebuilt from a checkpoint dict.
    """
    config = RunConfig(checkpoint['config'], check_paths=False)
    class_names = checkpoint['class_names']
    # Weights come from the checkpoint
    kwargs = {'pretrained': False} if config.backbone == ResNet50Backbone.name else {}
    network = CamNetwork(build_backbone(config.backbone, config.backbone_stride,
                                        config.backbone_channels, seed=config.seed, **kwargs),
                         len(class_names))
    network.load_state_dict(checkpoint['network'])
    network.eval()
    return network, class_names, config


@dataclass
class TrainResult:
    checkpoint: str
    loss_file: str
    selection_file: str
    losses: list
    steps_per_epoch: int

    @property
    def initial_loss(self):
        """Total loss of the first step."""
        return self.losses[0][3]

    @property
    def final_loss(self):
        """Mean total loss over the last epoch."""
        return self.epoch_mean_loss(-1)

    def epoch_mean_loss(self, epoch):
        """Mean total loss over one epoch (counting from 0, negative from the end)."""
        if epoch < 0:
            epoch += len(self.losses) // self.steps_per_epoch
        rows = self.losses[epoch * self.steps_per_epoch:(epoch + 1) * self.steps_per_epoch]
        return sum(r[3] for r in rows) / len(rows)


class Trainer():
    """
    Owns the network, adapters, optimiser and schedule of one run.
    """
    def __init__(self, config, class_names=None, dataset=None):
        self.config = config
        if dataset is None:
            class_names, dataset = load_dataset(config)
        self.class_names = list(class_names)
        self.dataset = dataset
        self.num_classes = len(self.class_names)
        self.template = config.template()
        self.pools = config.pools(self.class_names)
        self.prompt_sets = {k: build_prompt_set(p, self.template) for k, p in self.pools.items()}
        self.weights = LossWeights(alpha=config.alpha, beta=config.beta,
                                   sim_eps=config.sim_eps, temperature=config.temperature)
        self.encoder = build_encoder(config.encoder, config.encoder_dim, config.mock_seed)

        torch.use_deterministic_algorithms(True, warn_only=True)
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(config.seed)
            backbone = build_backbone(config.backbone, config.backbone_stride,
                                      config.backbone_channels, seed=config.seed)
            self.network = CamNetwork(backbone, self.num_classes)
        self.visual_adapter, self.text_adapter = make_adapter_pair(self.encoder.dim,
                                                                   hidden=config.adapter_hidden,
                                                                   gate_mode=config.adapter_gate_mode,
                                                                   gate_value=config.adapter_gate_value,
                                                                   clamp_gate=config.adapter_clamp_gate,
                                                                   seed=config.seed)
        params = list(self.network.parameters())
        for a in self.adapters() or ():
            params.extend(p for p in a.parameters() if p.requires_grad)
        self.optimizer = torch.optim.SGD(params, lr=config.lr, momentum=config.momentum,
                                         weight_decay=config.weight_decay)
        self.steps_per_epoch = math.ceil(len(self.dataset) / config.batch_size)
        total_steps = max(1, self.steps_per_epoch * config.epochs)
        if config.schedule == 'cosine':
            self.scheduler = torch.optim.lr_scheduler.CosineAnnealingLR(self.optimizer, T_max=total_steps, eta_min=0)
        else:
            self.scheduler = torch.optim.lr_scheduler.LambdaLR(self.optimizer, lambda step: 1.0)

        self.epoch = 0
        self.step = 0
        self.losses = []
        self.records = []
        # (image id, class index) -> SelectionRecord, once selection is frozen
        self.frozen = None

    def adapters(self):
        """(visual, text) adapters or None."""
        if self.visual_adapter is None:
            return None
        return self.visual_adapter, self.text_adapter

    @property
    def output_dir(self):
        return self.config.output_dir

    def checkpoint_path(self, epoch):
        return os.path.join(self.output_dir, CHECKPOINT_DIR, checkpoint_name(epoch))

    def save_checkpoint(self):
        path = self.checkpoint_path(self.epoch)
        os.makedirs(os.path.dirname(path), exist_ok=True)
        config = {k: v for k, v in self.config.as_dict().items() if k not in UNHASHED_KEYS}
        adapters = self.adapters()
        state = {'epoch': self.epoch,
                 'step': self.step,
                 'config': config,
                 'config_hash': self.config.config_hash(),
                 'class_names': self.class_names,
                 'network': self.network.state_dict(),
                 'visual_adapter': adapters[0].state_dict() if adapters else None,
                 'text_adapter': adapters[1].state_dict() if adapters else None,
                 'optimizer': self.optimizer.state_dict(),
                 'scheduler': self.scheduler.state_dict(),
                 'frozen_selections': (None if self.frozen is None
                                       else [self.frozen[key].to_dict() for key in sorted(self.frozen)]),
                 'records': [r.to_dict() for r in self.records],
                 'losses': self.losses}
        torch.save(state, path)
        logger.info('Wrote checkpoint %s', path)
        return path

    def resume(self, path):
        """
        Restore the state saved in a checkpoint of this same configuration.
        """
        state = load_checkpoint(path)
        if state['config_hash'] != self.config.config_hash():
            raise CheckpointMismatch('Checkpoint %s was written with a different configuration' % path)
        self.network.load_state_dict(state['network'])
        adapters = self.adapters()
        if adapters:
            adapters[0].load_state_dict(state['visual_adapter'])
            adapters[1].load_state_dict(state['text_adapter'])
        self.optimizer.load_state_dict(state['optimizer'])
        self.scheduler.load_state_dict(state['scheduler'])
        self.epoch = state['epoch']
        self.step = state['step']
        self.losses = [tuple(r) for r in state['losses']]
        self.records = [SelectionRecord.from_dict(d) for d in state['records']]
        if state['frozen_selections'] is None:
            self.frozen = None
        else:
            records = [SelectionRecord.from_dict(d) for d in state['frozen_selections']]
            self.frozen = {selection_key(r): r for r in records}
        logger.info('Resumed from %s at epoch %d', path, self.epoch)

    def select(self, samples, maps):
        """
        SelectionRecords for a batch, live or from the frozen records.
        """
        adapters = self.adapters() if self.config.select_after_adapter else None
        visual, text = adapters if adapters else (None, None)
        detached = [ActivationMaps(m.values.detach(), normalized=True) for m in maps]
        if self.frozen is None:
            return select_for_batch(samples, detached, self.pools, self.template, self.encoder,
                                    visual_adapter=visual, text_adapter=text)
        todo = [i for i, s in enumerate(samples)
                if any((s.id, k) not in self.frozen for k in s.present_classes())]
        if todo:
            fresh = select_for_batch([samples[i] for i in todo], [detached[i] for i in todo],
                                     self.pools, self.template, self.encoder,
                                     visual_adapter=visual, text_adapter=text)
            for r in fresh:
                self.frozen[selection_key(r)] = r
        return [self.frozen[(s.id, k)] for s in samples for k in s.present_classes()]

    def train_step(self, batch):
        """
        One optimisation step. Returns the SelectionRecords it used.
        """
        images, labels = stack_batch(batch)
        raw, logits = self.network(images)
        cls_loss = multilabel_soft_margin_loss(logits, labels)
        maps = [ActivationMaps(p, normalized=True) for p in torch.sigmoid(raw)]
        records = self.select(batch, maps)
        selections = {selection_key(r): r for r in records}
        result = batch_objective(batch, maps, selections, self.adapters(), self.encoder,
                                 self.weights, self.prompt_sets)
        total = cls_loss + self.config.contrastive_weight * result.loss
        if not torch.isfinite(total):
            self._dump_batch(batch, images, labels, raw, cls_loss, result.loss)
        self.optimizer.zero_grad()
        total.backward()
        self.optimizer.step()
        self.scheduler.step()
        self.losses.append((self.step, float(cls_loss), float(result.loss), float(total)))
        self.step += 1
        return records

    def _dump_batch(self, batch, images, labels, raw, cls_loss, cont_loss):
        path = os.path.join(self.output_dir, NAN_DUMP_FILE)
        os.makedirs(self.output_dir, exist_ok=True)
        torch.save({'epoch': self.epoch + 1,
                    'step': self.step,
                    'ids': [s.id for s in batch],
                    'images': images.detach(),
                    'labels': labels.detach(),
                    'cams': raw.detach(),
                    'cls_loss': cls_loss.detach(),
                    'cont_loss': cont_loss.detach()}, path)
        raise NumericFailure('Non-finite loss at step %d (classification %s, contrastive %s), batch written to %s'
                             % (self.step, float(cls_loss), float(cont_loss), path))

    def write_losses(self):
        path = os.path.join(self.output_dir, LOSS_FILE)
        with open(path, 'w', newline='') as f:
            writer = csv.writer(f)
            writer.writerow(LOSS_COLUMNS)
            for row in self.losses:
                writer.writerow([row[0]] + [repr(v) for v in row[1:]])
        return path

    def run_epoch(self):
        epoch = self.epoch + 1
        freeze = self.config.freeze_selection_epoch
        if freeze is not None and epoch > freeze and self.frozen is None:
            self.frozen = {}
        self.network.train()
        records = []
        first = len(self.losses)
        for batch in iterate_batches(self.dataset, self.config.batch_size, self.config.seed, epoch,
                                     self.config.crop_size, self.config.hflip):
            records.extend(self.train_step(batch))
        self.epoch = epoch
        self.records = sorted(records, key=selection_key)
        if freeze is not None and epoch == freeze:
            self.frozen = {selection_key(r): r for r in self.records}
        rows = self.losses[first:]
        logger.info('Epoch %d: classification %.4f, contrastive %.4f, total %.4f, lr %.3g',
                    epoch,
                    sum(r[1] for r in rows) / len(rows),
                    sum(r[2] for r in rows) / len(rows),
                    sum(r[3] for r in rows) / len(rows),
                    self.scheduler.get_last_lr()[0])

    def train(self):
        """
        Train up to the configured number of epochs. Returns a TrainResult.
        """
        os.makedirs(self.output_dir, exist_ok=True)
        path = self.checkpoint_path(self.epoch)
        if self.epoch == 0:
            path = self.save_checkpoint()
        while self.epoch < self.config.epochs:
            self.run_epoch()
            path = self.save_checkpoint()
        loss_file = self.write_losses()
        selection_file = os.path.join(self.output_dir, SELECTION_FILE)
        if self.frozen:
            write_selections([self.frozen[key] for key in sorted(self.frozen)], selection_file)
        else:
            write_selections(self.records, selection_file)
        return TrainResult(checkpoint=path, loss_file=loss_file,
                           selection_file=selection_file, losses=list(self.losses),
                           steps_per_epoch=self.steps_per_epoch)


def train(config, resume=None, class_names=None, dataset=None):
    """
    Train a run. Returns a TrainResult naming the last checkpoint.
    """
    trainer = Trainer(config, class_names, dataset)
    if resume is not None:
        trainer.resume(resume)
    return trainer.train()
