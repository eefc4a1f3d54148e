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
Per-image choice of the class name used in the text prompt.

For each image and each class present in it, the foreground-masked image
is compared with the prompt of every name in the class's synonym pool,
and the most similar name wins. Exact ties go to the lowest index,
so the ground-truth name wins a tie.
"""

import json
import logging
import math
from dataclasses import dataclass

import torch

from pole.clip_bridge import DimensionMismatch
from pole.clip_bridge import cosine_similarity, encode_image, encode_texts, make_masked_pair
from pole.prompts import DEFAULT_TEMPLATE, build_prompt_set

logger = logging.getLogger(__name__)


class MissingActivationMap(Exception):
    """A class present in an image has no activation map."""
    pass


@dataclass(frozen=True)
class SimilarityVector:
    """Similarities between one masked image and each candidate prompt."""
    values: tuple
    class_index: int
    image_id: str = ''

    def __post_init__(self):
        object.__setattr__(self, 'values', tuple(float(v) for v in self.values))
        if not self.values:
            raise ValueError('No similarities')
        if not all(math.isfinite(v) for v in self.values):
            raise ValueError('Non-finite similarity for image %s class %d' % (self.image_id, self.class_index))

    def __len__(self):
        return len(self.values)


@dataclass(frozen=True)
class SelectionRecord:
    """The name chosen for one class of one image."""
    image_id: str
    class_index: int
    chosen_index: int
    chosen_name: str
    similarities: SimilarityVector

    def to_dict(self):
        return {'image_id': self.image_id,
                'class_index': self.class_index,
                'chosen_index': self.chosen_index,
                'chosen_name': self.chosen_name,
                'similarities': list(self.similarities.values)}

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, d):
        return cls(image_id=d['image_id'],
                   class_index=d['class_index'],
                   chosen_index=d['chosen_index'],
                   chosen_name=d['chosen_name'],
                   similarities=SimilarityVector(d['similarities'], d['class_index'], d['image_id']))


def score_candidates(v_io, text_embs, class_index=0, image_id=''):
    """
    Cosine similarity of v_io with each text embedding, in order.
    """
    if not text_embs:
        raise ValueError('No candidate embeddings')
    for t in text_embs:
        if t.dim != v_io.dim:
            raise DimensionMismatch('Candidate has dimension %d, image embedding %d' % (t.dim, v_io.dim))
    return SimilarityVector([cosine_similarity(v_io, t) for t in text_embs], class_index, image_id)


def select_class(scores, pool):
    """
    Returns the SelectionRecord for the most similar name of pool.
    """
    if len(scores) != pool.m + 1:
        raise DimensionMismatch('%d similarities for a pool of %d names' % (len(scores), pool.m + 1))
    best = 0
    for j, s in enumerate(scores.values):
        if s > scores.values[best]:
            best = j
    return SelectionRecord(image_id=scores.image_id,
                           class_index=scores.class_index,
                           chosen_index=best,
                           chosen_name=pool.names()[best],
                           similarities=scores)


def select_for_batch(samples, maps, pools, template=DEFAULT_TEMPLATE, enc=None,
                     visual_adapter=None, text_adapter=None):
    """
    One SelectionRecord per (image, present class), in sample order then class order.
    maps holds one sigmoid-normalised ActivationMaps per sample.
    With adapters, the choice is made on adapter-refined embeddings.
    """
    if enc is None:
        raise ValueError('An encoder pair is needed for selection')
    if len(maps) != len(samples):
        raise MissingActivationMap('%d maps for %d images' % (len(maps), len(samples)))
    records = []
    with torch.no_grad():
        for sample, m in zip(samples, maps):
            for k in sample.present_classes():
                if m is None or k >= m.num_classes:
                    raise MissingActivationMap('No activation map for class %d of image %s' % (k, sample.id))
                fg, _ = make_masked_pair(sample, m, k)
                v_io = encode_image(fg, enc)
                text_embs = encode_texts(build_prompt_set(pools[k], template), enc)
                if visual_adapter is not None:
                    v_io = visual_adapter.embed(v_io)
                if text_adapter is not None:
                    text_embs = [text_adapter.embed(t) for t in text_embs]
                scores = score_candidates(v_io, text_embs, k, sample.id)
                records.append(select_class(scores, pools[k]))
    return records


def selection_frequency(records, num_classes):
    """
    For each class, the fraction of its records that chose the ground truth,
    or None if the class has no records.
    """
    if not records:
        raise ValueError('No selection records')
    chosen = [0] * num_classes
    total = [0] * num_classes
    for r in records:
        if not 0 <= r.class_index < num_classes:
            raise ValueError('Record for %s has class %d, expected fewer than %d'
                             % (r.image_id, r.class_index, num_classes))
        total[r.class_index] += 1
        if r.chosen_index == 0:
            chosen[r.class_index] += 1
    return [c / t if t else None for c, t in zip(chosen, total)]


def write_selections(records, path):
    """Write records as newline-delimited JSON."""
    with open(path, 'w', encoding='utf-8') as f:
        for r in records:
            f.write(r.to_json() + '\n')


def read_selections(path):
    """Read a file written by write_selections()."""
    with open(path, encoding='utf-8') as f:
        return [SelectionRecord.from_dict(json.loads(line)) for line in f if line.strip()]


def selection_key(record):
    return (record.image_id, record.class_index)
