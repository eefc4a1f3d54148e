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
Ingested synonym pools, stored per corpus.
"""

import logging

from django.core.exceptions import ValidationError
from django.db import models, transaction
from django.utils.translation import gettext as _

from pole.prompts import SynonymPool

logger = logging.getLogger(__name__)


def validate_not_blank(value):
    """
    Names and synonyms must contain something other than whitespace.
    """
    if not value.strip():
        raise ValidationError(_(u'Names cannot be blank'))


class Category(models.Model):
    """
    One class of one synonym corpus.
    """
    MAX_NAME_LENGTH = 40
    MAX_CORPUS_LENGTH = 30

    corpus = models.CharField(max_length=MAX_CORPUS_LENGTH)
    class_index = models.PositiveSmallIntegerField()
    name = models.CharField(max_length=MAX_NAME_LENGTH,
                            validators=[validate_not_blank])

    class Meta:
        verbose_name_plural = 'Categories'
        ordering = ['corpus', 'class_index']
        # One entry per class per corpus
        unique_together = (('corpus', 'class_index'),
                           ('corpus', 'name'))

    def pool(self):
        """Returns the SynonymPool for this Category."""
        return SynonymPool(class_index=self.class_index,
                           ground_truth_name=self.name,
                           synonyms=[s.word for s in self.synonym_set.all()],
                           corpus_tag=self.corpus)

    def __str__(self):
        return u'%s (%s)' % (self.name, self.corpus)


class Synonym(models.Model):
    """
    One candidate name for a Category. Rank orders them as in the file.
    """
    category = models.ForeignKey(Category, on_delete=models.CASCADE)
    rank = models.PositiveSmallIntegerField()
    word = models.CharField(max_length=Category.MAX_NAME_LENGTH,
                            validators=[validate_not_blank])

    class Meta:
        ordering = ['category', 'rank']
        unique_together = (('category', 'rank'),
                           ('category', 'word'))

    def __str__(self):
        return self.word


def store_pools(pools):
    """
    Replace the stored pools of each corpus found in pools.
    pools is a dict, indexed by class index, of SynonymPools.
    Returns the number of Categories created.
    """
    corpora = {p.corpus_tag for p in pools.values()}
    with transaction.atomic():
        Category.objects.filter(corpus__in=corpora).delete()
        for p in pools.values():
            c = Category.objects.create(corpus=p.corpus_tag,
                                        class_index=p.class_index,
                                        name=p.ground_truth_name)
            for rank, word in enumerate(p.synonyms):
                Synonym.objects.create(category=c, rank=rank, word=word)
    logger.info('Stored %d pools for corpus %s', len(pools), ', '.join(sorted(corpora)))
    return len(pools)


def pools_from_database(corpus):
    """
    Returns a dict, indexed by class index, of the stored SynonymPools of corpus.
    """
    return {c.class_index: c.pool()
            for c in Category.objects.filter(corpus=corpus).prefetch_related('synonym_set')}
