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
Synonym pools, prompt templates and the candidate prompt set for each class.

A synonym file is a JSON array of objects:
    {"class": "cat", "class_index": 7, "synonyms": ["feline", ...], "corpus": "chatgpt"}
"""

import json
import logging
from dataclasses import dataclass, field

logger = logging.getLogger(__name__)

# PASCAL VOC foreground classes, in label order.
# Class 14 is "player" in the shipped synonym table.
VOC_CLASSES = (
    'aeroplane', 'bicycle', 'bird', 'boat', 'bottle',
    'bus', 'car', 'cat', 'chair', 'cow',
    'dining table', 'dog', 'horse', 'motorbike', 'player',
    'potted plant', 'sheep', 'sofa', 'train', 'tv monitor',
)

DEFAULT_CORPUS = 'chatgpt'


class InvalidPool(ValueError):
    """A synonym pool breaks the pool rules."""
    pass


class InvalidPoolSize(ValueError):
    """Negative number of synonyms requested."""
    pass


class PoolIngestError(Exception):
    """A synonym file could not be ingested."""
    def __init__(self, path, line, message):
        self.path = path
        self.line = line
        super().__init__('%s:%s: %s' % (path, line, message))


@dataclass(frozen=True)
class SynonymPool:
    """
    The ground-truth name of one class and its ordered candidate synonyms.
    """
    class_index: int
    ground_truth_name: str
    synonyms: tuple = ()
    corpus_tag: str = DEFAULT_CORPUS

    def __post_init__(self):
        object.__setattr__(self, 'synonyms', tuple(self.synonyms))
        if self.class_index < 0:
            raise InvalidPool('Negative class index %d' % self.class_index)
        if not self.ground_truth_name:
            raise InvalidPool('Class %d has an empty name' % self.class_index)
        seen = set()
        for s in self.synonyms:
            if not s:
                raise InvalidPool('Empty synonym for "%s"' % self.ground_truth_name)
            if s == self.ground_truth_name:
                raise InvalidPool('"%s" lists itself as a synonym' % s)
            if s in seen:
                raise InvalidPool('Synonym "%s" repeated for "%s"' % (s, self.ground_truth_name))
            seen.add(s)

    @property
    def m(self):
        """Number of synonyms (excluding the ground truth)."""
        return len(self.synonyms)

    def names(self):
        """Ground truth followed by the synonyms."""
        return (self.ground_truth_name,) + self.synonyms

    def __str__(self):
        return '%d %s: %s' % (self.class_index, self.ground_truth_name, ', '.join(self.synonyms))


@dataclass(frozen=True)
class PromptTemplate:
    """Renders "<prefix><name><terminator>"."""
    context_prefix: str = 'A photo of '
    terminator: str = '.'

    def render(self, name):
        text = self.context_prefix + name + self.terminator
        if not text:
            raise InvalidPool('Template renders an empty prompt')
        return text


DEFAULT_TEMPLATE = PromptTemplate()


@dataclass(frozen=True)
class PromptSet:
    """
    The m+1 candidate prompts of one class. Index 0 is the ground truth.
    """
    class_index: int
    prompts: tuple = field(default_factory=tuple)

    def __len__(self):
        return len(self.prompts)


def _iter_entries(text, path):
    """
    Yields (line, entry) for each element of the top-level JSON array in text.
    """
    try:
        json.loads(text)
    except json.JSONDecodeError as e:
        raise PoolIngestError(path, e.lineno, e.msg)
    decoder = json.JSONDecoder()
    idx = text.index('[') if text.lstrip().startswith('[') else -1
    if idx < 0:
        raise PoolIngestError(path, 1, 'Top level must be an array')
    idx += 1
    while True:
        while idx < len(text) and text[idx] in ' \t\r\n,':
            idx += 1
        if idx >= len(text) or text[idx] == ']':
            return
        entry, end = decoder.raw_decode(text, idx)
        yield text.count('\n', 0, idx) + 1, entry
        idx = end


def parse_pools(text, path='<string>', known_classes=VOC_CLASSES):
    """
    Parse synonym file contents into a dict, indexed by class index, of SynonymPools.
    If known_classes is not None, every entry must name one of them at its index.
    Raises PoolIngestError, with the offending line.
    """
    pools = {}
    names = set()
    for line, entry in _iter_entries(text, path):
        if not isinstance(entry, dict):
            raise PoolIngestError(path, line, 'Entry is not an object')
        try:
            name = entry['class']
            index = entry['class_index']
        except KeyError as e:
            raise PoolIngestError(path, line, 'Missing key %s' % e)
        synonyms = entry.get('synonyms', [])
        if not isinstance(name, str) or not isinstance(index, int) or not isinstance(synonyms, list):
            raise PoolIngestError(path, line, 'Badly typed entry for "%s"' % name)
        if known_classes is not None:
            if name not in known_classes:
                raise PoolIngestError(path, line, 'Unknown class "%s"' % name)
            if index >= len(known_classes) or known_classes[index] != name:
                raise PoolIngestError(path, line, 'Class "%s" does not have index %d' % (name, index))
        if index in pools or name in names:
            raise PoolIngestError(path, line, 'Duplicate entry for class "%s"' % name)
        for s in synonyms:
            if not isinstance(s, str) or not s.strip():
                raise PoolIngestError(path, line, 'Empty synonym for class "%s"' % name)
        try:
            pools[index] = SynonymPool(class_index=index,
                                       ground_truth_name=name,
                                       synonyms=synonyms,
                                       corpus_tag=entry.get('corpus', DEFAULT_CORPUS))
        except InvalidPool as e:
            raise PoolIngestError(path, line, str(e))
        names.add(name)
    return dict(sorted(pools.items()))


def load_pools(path, known_classes=VOC_CLASSES):
    """
    Read a synonym file. Returns a dict, indexed by class index, of SynonymPools.
    """
    with open(path, encoding='utf-8') as f:
        text = f.read()
    pools = parse_pools(text, str(path), known_classes)
    logger.debug('Loaded %d synonym pools from %s', len(pools), path)
    return pools


def build_prompt_set(pool, template=DEFAULT_TEMPLATE):
    """The ground-truth prompt followed by one prompt per synonym."""
    return PromptSet(class_index=pool.class_index,
                     prompts=tuple(template.render(n) for n in pool.names()))


def truncate_pool(pool, m_max):
    """Keep only the first m_max synonyms."""
    if m_max < 0:
        raise InvalidPoolSize('Cannot keep %d synonyms' % m_max)
    return SynonymPool(class_index=pool.class_index,
                       ground_truth_name=pool.ground_truth_name,
                       synonyms=pool.synonyms[:m_max],
                       corpus_tag=pool.corpus_tag)


def pool_size_to_m(pool_size):
    """
    Pool sizes count the ground-truth name, so pool_size 1 means no synonyms.
    """
    if pool_size < 1:
        raise InvalidPoolSize('Pool size must be at least 1, got %d' % pool_size)
    return pool_size - 1


def pools_for_classes(pools, class_names, pool_size=None):
    """
    Re-index pools to match a dataset's class list, optionally truncating them.
    A class without a pool gets a ground-truth-only one.
    """
    by_name = {p.ground_truth_name: p for p in pools.values()}
    result = {}
    for k, name in enumerate(class_names):
        p = by_name.get(name)
        if p is None:
            logger.warning('No synonym pool for class "%s", using the class name alone', name)
            p = SynonymPool(class_index=k, ground_truth_name=name)
        else:
            p = SynonymPool(class_index=k,
                            ground_truth_name=name,
                            synonyms=p.synonyms,
                            corpus_tag=p.corpus_tag)
        if pool_size is not None:
            p = truncate_pool(p, pool_size_to_m(pool_size))
        result[k] = p
    return result
