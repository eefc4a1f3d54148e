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


import filecmp
import json
import math
import os
import tempfile

import numpy as np
import torch
from django.test import SimpleTestCase

from pole.datasets import augment, epoch_generator, iterate_batches, load_toy_dataset, stack_batch
from pole.pseudo_labels import BACKGROUND
from pole.toy_data import LABELS_FILE, class_colour, draw_disk, make_toy_dataset, toy_class_names
from pole.toy_data import write_toy_dataset


class ToyDataTests(SimpleTestCase):

    def test_single(self):
        dataset = make_toy_dataset(1, 1, 32, seed=0)
        self.assertEqual(len(dataset), 1)
        sample, mask = dataset[0]
        self.assertEqual(sample.label.tolist(), [1.0])
        self.assertEqual(mask.present_labels(), [1])
        self.assertEqual(sample.size, (32, 32))

    def test_labels_match_masks(self):
        for sample, mask in make_toy_dataset(20, 4, 32, seed=3):
            with self.subTest(sample=sample.id):
                self.assertEqual([k + 1 for k in sample.present_classes()], mask.present_labels())
                self.assertLessEqual(len(sample.present_classes()), 3)

    def test_blob_colours(self):
        names = toy_class_names(3)
        for sample, mask in make_toy_dataset(5, 3, 32, seed=1):
            image = (sample.pixels * 255).round().byte().permute(1, 2, 0).numpy()
            for label in mask.present_labels():
                pixels = image[mask.labels == label]
                self.assertTrue((pixels == class_colour(names[label - 1])).all())
            # The background has no colour
            bg = image[mask.labels == BACKGROUND]
            self.assertTrue((bg[:, 0] == bg[:, 1]).all())
            self.assertTrue((bg[:, 1] == bg[:, 2]).all())

    def test_same_seed_same_files(self):
        names = toy_class_names(3)
        with tempfile.TemporaryDirectory() as a, tempfile.TemporaryDirectory() as b:
            write_toy_dataset(make_toy_dataset(6, 3, 32, seed=5), names, a)
            write_toy_dataset(make_toy_dataset(6, 3, 32, seed=5), names, b)
            for sub in ('images', 'masks'):
                match, mismatch, errors = filecmp.cmpfiles(os.path.join(a, sub), os.path.join(b, sub),
                                                           sorted(os.listdir(os.path.join(a, sub))),
                                                           shallow=False)
                self.assertEqual(len(match), 6)
                self.assertEqual(mismatch + errors, [])
            self.assertTrue(filecmp.cmp(os.path.join(a, LABELS_FILE), os.path.join(b, LABELS_FILE),
                                        shallow=False))

    def test_different_seed(self):
        a = make_toy_dataset(4, 3, 32, seed=0)
        b = make_toy_dataset(4, 3, 32, seed=1)
        self.assertFalse(all(torch.equal(x[0].pixels, y[0].pixels) for x, y in zip(a, b)))

    def test_disk_area(self):
        for r in (2, 4, 8, 13):
            with self.subTest(r=r):
                mask = draw_disk(np.zeros((40, 40), dtype=np.uint8), 20, 20, r, 3)
                count = int((mask == 3).sum())
                self.assertLessEqual(abs(count - math.pi * r * r), 2 * math.pi * (r + 1))
                self.assertEqual(set(np.unique(mask)), {0, 3})

    def test_invalid(self):
        self.assertRaises(ValueError, make_toy_dataset, 0, 3, 32, 0)
        self.assertRaises(ValueError, make_toy_dataset, 4, 0, 32, 0)
        self.assertRaises(ValueError, make_toy_dataset, 4, 3, 8, 0)

    def test_class_names(self):
        self.assertEqual(toy_class_names(3), ['aeroplane', 'bicycle', 'bird'])
        self.assertEqual(toy_class_names(22)[-2:], ['class20', 'class21'])


class DatasetTests(SimpleTestCase):

    def test_round_trip(self):
        names = toy_class_names(3)
        dataset = make_toy_dataset(5, 3, 32, seed=2)
        with tempfile.TemporaryDirectory() as d:
            write_toy_dataset(dataset, names, d)
            with open(os.path.join(d, LABELS_FILE)) as f:
                self.assertEqual(json.load(f)['classes'], names)
            loaded_names, loaded = load_toy_dataset(d)
        self.assertEqual(loaded_names, names)
        for (s, m), (t, n) in zip(dataset, loaded):
            self.assertEqual(s.id, t.id)
            self.assertTrue(torch.equal(s.label, t.label))
            self.assertTrue(torch.allclose(s.pixels, t.pixels))
            self.assertTrue(np.array_equal(m.labels, n.labels))

    def test_batches_depend_on_epoch(self):
        dataset = make_toy_dataset(10, 3, 32, seed=2)
        order = lambda epoch: [s.id for b in iterate_batches(dataset, 4, 0, epoch) for s in b]
        self.assertEqual(order(1), order(1))
        self.assertEqual(sorted(order(1)), sorted(s.id for s, _ in dataset))
        self.assertNotEqual(order(1), order(2))
        sizes = [len(b) for b in iterate_batches(dataset, 4, 0, 1)]
        self.assertEqual(sizes, [4, 4, 2])

    def test_augment(self):
        pixels = torch.rand(3, 20, 24)
        cropped = augment(pixels, epoch_generator(0, 1), crop_size=16)
        self.assertEqual(tuple(cropped.shape), (3, 16, 16))
        padded = augment(torch.rand(3, 16, 16), epoch_generator(0, 1), crop_size=20)
        self.assertEqual(tuple(padded.shape), (3, 20, 20))
        self.assertTrue(torch.equal(augment(pixels, epoch_generator(0, 1), crop_size=16),
                                    augment(pixels, epoch_generator(0, 1), crop_size=16)))

    def test_stack_batch(self):
        dataset = make_toy_dataset(3, 2, 32, seed=0)
        images, labels = stack_batch([s for s, _ in dataset])
        self.assertEqual(tuple(images.shape), (3, 3, 32, 32))
        self.assertEqual(tuple(labels.shape), (3, 2))
