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
The object/background contrastive objective.

For every class k present in an image, the CAM-masked foreground should
look like the prompt of the name selected for k, and the masked background
should not:

    loss = -alpha sum_k y_k log s_oo[k] - beta sum_k y_k log(1 - s_bo[k])

where the cosine similarities are squashed into (0, 1) first.
"""

import logging
from dataclasses import dataclass

import torch

from pole.cam_core import ShapeMismatch
from pole.clip_bridge import make_masked_pair, row_cosine

logger = logging.getLogger(__name__)


class InvalidLossWeights(ValueError):
    """The loss weights are out of range."""
    pass


class NoSupervision(ValueError):
    """No class is present, so there is nothing to contrast."""
    pass


class MissingSelection(Exception):
    """No selection record for a present class of an image."""
    pass


@dataclass(frozen=True)
class LossWeights:
    alpha: float = 1.0
    beta: float = 1.0
    sim_eps: float = 1e-4
    temperature: float = None

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0:
            raise InvalidLossWeights('alpha and beta must be non-negative')
        if not 0 < self.sim_eps < 0.5:
            raise InvalidLossWeights('sim_eps must lie in (0, 0.5), got %g' % self.sim_eps)
        if self.temperature is not None and self.temperature <= 0:
            raise InvalidLossWeights('temperature must be positive, got %g' % self.temperature)


def squash(s, w):
    """
    Map cosine similarities from [-1, 1] into [0, 1].
    """
    if w.temperature is not None:
        return torch.sigmoid(s / w.temperature)
    return (1 + s) / 2


def contrastive_loss(s_oo, s_bo, y, w):
    """
    Contrastive loss of one image from its K object-to-object and
    background-to-object similarities. Absent classes are ignored.
    Each log is only clamped on the side where it diverges, so perfect
    similarities give exactly zero.
    """
    if s_oo.shape != s_bo.shape or s_oo.shape != y.shape:
        raise ShapeMismatch('Similarity and label shapes differ: %s, %s, %s'
                            % (tuple(s_oo.shape), tuple(s_bo.shape), tuple(y.shape)))
    present = y > 0
    if not present.any():
        raise NoSupervision('No class present')
    oo = squash(s_oo[present], w).clamp(w.sim_eps, 1.0)
    bo = squash(s_bo[present], w).clamp(0.0, 1.0 - w.sim_eps)
    return -w.alpha * torch.log(oo).sum() - w.beta * torch.log1p(-bo).sum()


@dataclass
class ObjectiveResult:
    """
    The batch loss plus the intermediate similarities, one entry per
    (image, present class) pair, so callers can inspect their gradients.
    """
    loss: torch.Tensor
    s_oo: torch.Tensor
    s_bo: torch.Tensor
    pairs: list


def batch_objective(samples, maps, selections, adapters, enc, w, prompt_sets):
    """
    Mean contrastive loss over a batch of images.
    maps holds one sigmoid ActivationMaps per sample (with its graph).
    selections maps (image id, class index) to a SelectionRecord.
    adapters is a (visual, text) pair of GatedAdapters or None.
    prompt_sets maps class index to the PromptSet the selections index into.
    """
    pairs = []
    v_io = []
    v_ib = []
    prompts = []
    for b, (sample, m) in enumerate(zip(samples, maps)):
        fgs = []
        bgs = []
        for k in sample.present_classes():
            record = selections.get((sample.id, k))
            if record is None:
                raise MissingSelection('No selection for class %d of image %s' % (k, sample.id))
            fg, bg = make_masked_pair(sample, m, k)
            fgs.append(fg.pixels)
            bgs.append(bg.pixels)
            prompts.append(prompt_sets[k].prompts[record.chosen_index])
            pairs.append((sample.id, k))
        v_io.append(enc.encode_images(torch.stack(fgs)))
        v_ib.append(enc.encode_images(torch.stack(bgs)))
    v_io = torch.cat(v_io)
    v_ib = torch.cat(v_ib)
    t = enc.encode_prompts(prompts).to(v_io)
    if adapters is not None:
        visual, text = adapters
        v_io = visual(v_io)
        v_ib = visual(v_ib)
        t = text(t)
    s_oo = row_cosine(v_io, t)
    s_bo = row_cosine(v_ib, t)

    losses = []
    start = 0
    for sample in samples:
        present = sample.present_classes()
        idx = torch.tensor(present)
        n = len(present)
        zeros = torch.zeros(sample.num_classes, dtype=s_oo.dtype, device=s_oo.device)
        oo = zeros.index_put((idx,), s_oo[start:start + n])
        bo = zeros.index_put((idx,), s_bo[start:start + n])
        losses.append(contrastive_loss(oo, bo, sample.label, w))
        start += n
    return ObjectiveResult(loss=torch.stack(losses).mean(), s_oo=s_oo, s_bo=s_bo, pairs=pairs)
