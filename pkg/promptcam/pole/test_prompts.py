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


import json
import os
import tempfile
from io import StringIO

from django.conf import settings
from django.core.management import call_command
from django.core.management.base import CommandError
from django.test import SimpleTestCase, TestCase

from pole.models import Category, Synonym, pools_from_database, store_pools
from pole.prompts import DEFAULT_TEMPLATE, InvalidPool, InvalidPoolSize, PoolIngestError
from pole.prompts import PromptTemplate, SynonymPool, VOC_CLASSES, build_prompt_set
from pole.prompts import load_pools, parse_pools, pool_size_to_m, pools_for_classes, truncate_pool


def entry(name, index, synonyms):
    return {'class': name, 'class_index': index, 'synonyms': synonyms}


class SynonymFileTests(SimpleTestCase):

    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cls.pools = load_pools(settings.POLE_SYNONYM_FILE)

    def test_twenty_pools(self):
        self.assertEqual(len(self.pools), 20)
        self.assertEqual([p.ground_truth_name for p in self.pools.values()], list(VOC_CLASSES))
        for k, p in self.pools.items():
            with self.subTest(cls=p.ground_truth_name):
                self.assertEqual(p.class_index, k)
                self.assertEqual(p.m, 3)
                self.assertEqual(p.corpus_tag, 'chatgpt')

    def test_spot_checks(self):
        self.assertEqual(self.pools[7].names(), ('cat', 'feline', 'kitty', 'tomcat'))
        self.assertEqual(self.pools[0].names(), ('aeroplane', 'aircraft', 'airplane', 'plane'))
        self.assertEqual(self.pools[19].names(), ('tv monitor', 'television', 'display screen', 'flat screen'))


class ParsePoolsTests(SimpleTestCase):

    def test_unknown_class_line(self):
        text = '[\n' + json.dumps(entry('aeroplane', 0, ['plane'])) + ',\n' + \
               json.dumps(entry('zebra', 1, ['horse'])) + '\n]'
        with self.assertRaises(PoolIngestError) as cm:
            parse_pools(text, 'x.json')
        self.assertEqual(cm.exception.line, 3)
        self.assertIn('x.json:3', str(cm.exception))

    def test_wrong_index(self):
        text = json.dumps([entry('bicycle', 0, [])])
        self.assertRaises(PoolIngestError, parse_pools, text)

    def test_duplicate_synonym(self):
        text = '[\n' + json.dumps(entry('cat', 7, ['kitty', 'kitty'])) + '\n]'
        with self.assertRaises(PoolIngestError) as cm:
            parse_pools(text)
        self.assertEqual(cm.exception.line, 2)

    def test_empty_synonym(self):
        text = json.dumps([entry('cat', 7, ['kitty', '  '])])
        self.assertRaises(PoolIngestError, parse_pools, text)

    def test_self_synonym(self):
        text = json.dumps([entry('cat', 7, ['cat'])])
        self.assertRaises(PoolIngestError, parse_pools, text)

    def test_duplicate_class(self):
        text = json.dumps([entry('cat', 7, []), entry('cat', 7, ['kitty'])])
        self.assertRaises(PoolIngestError, parse_pools, text)

    def test_bad_json(self):
        with self.assertRaises(PoolIngestError) as cm:
            parse_pools('[\n{"class": "cat",\n')
        self.assertIsNotNone(cm.exception.line)

    def test_not_an_array(self):
        self.assertRaises(PoolIngestError, parse_pools, json.dumps(entry('cat', 7, [])))

    def test_any_classes(self):
        text = json.dumps([entry('red', 0, ['crimson']), entry('blue', 1, [])])
        pools = parse_pools(text, known_classes=None)
        self.assertEqual(pools[0].names(), ('red', 'crimson'))
        self.assertEqual(pools[1].m, 0)


class PromptTests(SimpleTestCase):

    def test_render(self):
        self.assertEqual(DEFAULT_TEMPLATE.render('cat'), 'A photo of cat.')
        self.assertEqual(PromptTemplate('a ', '!').render('dog'), 'a dog!')

    def test_build_prompt_set(self):
        pool = SynonymPool(7, 'cat', ('feline', 'kitty', 'tomcat'))
        prompts = build_prompt_set(pool)
        self.assertEqual(prompts.prompts, ('A photo of cat.', 'A photo of feline.',
                                           'A photo of kitty.', 'A photo of tomcat.'))
        self.assertEqual(prompts.class_index, 7)

    def test_ground_truth_only(self):
        prompts = build_prompt_set(SynonymPool(2, 'bird'))
        self.assertEqual(len(prompts), 1)
        self.assertEqual(prompts.prompts[0], 'A photo of bird.')

    def test_invalid_pool(self):
        self.assertRaises(InvalidPool, SynonymPool, 0, '')
        self.assertRaises(InvalidPool, SynonymPool, -1, 'cat')

    def test_truncate(self):
        pool = SynonymPool(7, 'cat', ('feline', 'kitty', 'tomcat'))
        self.assertEqual(truncate_pool(pool, 0).names(), ('cat',))
        self.assertEqual(truncate_pool(pool, 2).names(), ('cat', 'feline', 'kitty'))
        self.assertEqual(truncate_pool(pool, 10), pool)
        self.assertRaises(InvalidPoolSize, truncate_pool, pool, -1)

    def test_pool_size(self):
        self.assertEqual(pool_size_to_m(1), 0)
        self.assertEqual(pool_size_to_m(4), 3)
        self.assertRaises(InvalidPoolSize, pool_size_to_m, 0)

    def test_pools_for_classes(self):
        pools = load_pools(settings.POLE_SYNONYM_FILE)
        with self.assertLogs('pole.prompts', level='WARNING'):
            mine = pools_for_classes(pools, ['cat', 'unicorn', 'dog'], pool_size=2)
        self.assertEqual(mine[0].names(), ('cat', 'feline'))
        self.assertEqual(mine[0].class_index, 0)
        self.assertEqual(mine[1].names(), ('unicorn',))
        self.assertEqual(mine[2].class_index, 2)


class IngestTests(TestCase):

    def test_store_and_rebuild(self):
        pools = load_pools(settings.POLE_SYNONYM_FILE)
        self.assertEqual(store_pools(pools), 20)
        self.assertEqual(Category.objects.count(), 20)
        self.assertEqual(Synonym.objects.count(), 60)
        self.assertEqual(pools_from_database('chatgpt'), pools)

    def test_replace(self):
        pools = load_pools(settings.POLE_SYNONYM_FILE)
        store_pools(pools)
        store_pools({7: pools[7]})
        self.assertEqual(Category.objects.count(), 1)
        self.assertEqual(pools_from_database('chatgpt'), {7: pools[7]})
        self.assertEqual(pools_from_database('other'), {})

    def test_command(self):
        out = StringIO()
        call_command('ingest-synonyms', stdout=out)
        self.assertEqual(Category.objects.filter(corpus='chatgpt').count(), 20)
        self.assertIn('cat: feline, kitty, tomcat', out.getvalue())

    def test_command_dry_run(self):
        call_command('ingest-synonyms', '--dry-run', stdout=StringIO())
        self.assertFalse(Category.objects.exists())

    def test_command_bad_file(self):
        with tempfile.TemporaryDirectory() as d:
            path = os.path.join(d, 'bad.json')
            with open(path, 'w') as f:
                f.write('[\n{"class": "zebra", "class_index": 0, "synonyms": []}\n]')
            with self.assertRaises(CommandError) as cm:
                call_command('ingest-synonyms', path, stdout=StringIO())
        self.assertEqual(cm.exception.returncode, 2)
        self.assertIn('bad.json:2', str(cm.exception))
        self.assertFalse(Category.objects.exists())
