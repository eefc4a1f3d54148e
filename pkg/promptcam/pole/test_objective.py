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


import math

import torch
from django.test import SimpleTestCase

from pole.adapters import init_adapter
from pole.cam_core import ActivationMaps, ImageSample, ShapeMismatch
from pole.class_selector import select_for_batch, selection_key
from pole.clip_bridge import TEXT, VISUAL, MockEncoderPair
from pole.objective import InvalidLossWeights, LossWeights, MissingSelection, NoSupervision
from pole.objective import batch_objective, contrastive_loss, squash
from pole.prompts import SynonymPool, build_prompt_set

WEIGHTS = LossWeights()


def t(values):
    return torch.tensor(values, dtype=torch.float64)


def reference_loss(s_oo, s_bo, y, alpha=1.0, beta=1.0):
    total = 0.0
    for oo, bo, present in zip(s_oo, s_bo, y):
        if present:
            total -= alpha * math.log((1 + oo) / 2) + beta * math.log(1 - (1 + bo) / 2)
    return total


class ContrastiveLossTests(SimpleTestCase):

    def test_perfect_similarities(self):
        loss = contrastive_loss(t([1., 0.3, 1.]), t([-1., 0.7, -1.]), t([1., 0., 1.]), WEIGHTS)
        self.assertAlmostEqual(float(loss), 0.0, delta=1e-9)

    def test_neutral_similarities(self):
        loss = contrastive_loss(t([0.]), t([0.]), t([1.]), WEIGHTS)
        self.assertAlmostEqual(float(loss), 2 * math.log(2), delta=1e-9)
        self.assertAlmostEqual(float(loss), 1.386294, places=6)

    def test_matches_reference(self):
        g = torch.Generator().manual_seed(0)
        for _ in range(50):
            s_oo = torch.rand(3, generator=g, dtype=torch.float64) * 1.8 - 0.9
            s_bo = torch.rand(3, generator=g, dtype=torch.float64) * 1.8 - 0.9
            y = t([1., 0., 1.]) if float(torch.rand(1, generator=g)) < 0.5 else t([0., 1., 1.])
            w = LossWeights(alpha=0.5, beta=2.0)
            self.assertAlmostEqual(float(contrastive_loss(s_oo, s_bo, y, w)),
                                   reference_loss(s_oo.tolist(), s_bo.tolist(), y.tolist(), 0.5, 2.0),
                                   places=9)

    def test_absent_classes_ignored(self):
        y = t([1., 0.])
        a = contrastive_loss(t([0.2, -1.]), t([0.1, 1.]), y, WEIGHTS)
        b = contrastive_loss(t([0.2, 0.9]), t([0.1, -0.4]), y, WEIGHTS)
        self.assertEqual(float(a), float(b))

    def test_worst_case_finite(self):
        loss = contrastive_loss(t([-1.]), t([1.]), t([1.]), WEIGHTS)
        self.assertTrue(math.isfinite(float(loss)))
        self.assertAlmostEqual(float(loss), -2 * math.log(WEIGHTS.sim_eps), places=9)

    def test_monotonic(self):
        y = t([1.])
        losses = [float(contrastive_loss(t([s]), t([0.]), y, WEIGHTS)) for s in (-0.5, 0., 0.5, 0.9)]
        self.assertEqual(losses, sorted(losses, reverse=True))
        losses = [float(contrastive_loss(t([0.]), t([s]), y, WEIGHTS)) for s in (-0.5, 0., 0.5, 0.9)]
        self.assertEqual(losses, sorted(losses))

    def test_gradient(self):
        g = torch.Generator().manual_seed(1)
        y = t([1., 0., 1., 1.])
        for _ in range(50):
            s_oo = (torch.rand(4, generator=g, dtype=torch.float64) * 1.8 - 0.9).requires_grad_()
            s_bo = (torch.rand(4, generator=g, dtype=torch.float64) * 1.8 - 0.9).requires_grad_()
            self.assertTrue(torch.autograd.gradcheck(lambda a, b: contrastive_loss(a, b, y, WEIGHTS),
                                                     (s_oo, s_bo), eps=1e-3, rtol=1e-4))

    def test_temperature(self):
        w = LossWeights(temperature=0.5)
        self.assertAlmostEqual(float(squash(t([0.]), w)), 0.5)
        self.assertAlmostEqual(float(squash(t([0.5]), w)), 1 / (1 + math.exp(-1)), places=12)
        self.assertAlmostEqual(float(contrastive_loss(t([0.]), t([0.]), t([1.]), w)), 2 * math.log(2), places=9)

    def test_errors(self):
        self.assertRaises(NoSupervision, contrastive_loss, t([0.]), t([0.]), t([0.]), WEIGHTS)
        self.assertRaises(ShapeMismatch, contrastive_loss, t([0.]), t([0., 0.]), t([1.]), WEIGHTS)
        self.assertRaises(InvalidLossWeights, LossWeights, alpha=-1.0)
        self.assertRaises(InvalidLossWeights, LossWeights, sim_eps=0.5)
        self.assertRaises(InvalidLossWeights, LossWeights, temperature=0.0)


class BatchObjectiveTests(SimpleTestCase):

    def setUp(self):
        self.enc = MockEncoderPair(dim=16, seed=0)
        self.pools = {0: SynonymPool(0, 'cat', ('feline',)), 1: SynonymPool(1, 'dog', ('puppy',))}
        self.prompt_sets = {k: build_prompt_set(p) for k, p in self.pools.items()}
        g = torch.Generator().manual_seed(0)
        self.samples = [ImageSample(torch.rand(3, 16, 16, generator=g), t([1., 1.]).float(), 'a'),
                        ImageSample(torch.rand(3, 16, 16, generator=g), t([0., 1.]).float(), 'b')]
        self.maps = [ActivationMaps(torch.rand(2, 2, 2, generator=g), True) for _ in self.samples]

    def selections(self, maps=None):
        records = select_for_batch(self.samples, maps or self.maps, self.pools, enc=self.enc)
        return {selection_key(r): r for r in records}

    def test_pairs_and_reference(self):
        selections = self.selections()
        result = batch_objective(self.samples, self.maps, selections, None, self.enc, WEIGHTS, self.prompt_sets)
        self.assertEqual(result.pairs, [('a', 0), ('a', 1), ('b', 1)])
        per_image = [reference_loss(result.s_oo[:2].tolist(), result.s_bo[:2].tolist(), [1, 1]),
                     reference_loss(result.s_oo[2:].tolist(), result.s_bo[2:].tolist(), [1])]
        self.assertAlmostEqual(float(result.loss), sum(per_image) / 2, places=4)

    def test_full_maps(self):
        # With P = 1 the background image is black, which the mock maps to its offset
        maps = [ActivationMaps(torch.ones(2, 16, 16), True) for _ in self.samples]
        selections = self.selections(maps)
        result = batch_objective(self.samples, maps, selections, None, self.enc, WEIGHTS, self.prompt_sets)
        zero = self.enc.zero_vector()
        for i, (image_id, k) in enumerate(result.pairs):
            prompt = self.prompt_sets[k].prompts[selections[(image_id, k)].chosen_index]
            text = self.enc.encode_prompts([prompt])[0]
            expected = torch.dot(zero, text) / (zero.norm() * text.norm())
            self.assertAlmostEqual(float(result.s_bo[i]), float(expected), places=5)

    def test_gradient_reaches_maps(self):
        values = torch.rand(2, 2, 2).requires_grad_()
        maps = [ActivationMaps(values, True), ActivationMaps(values.detach(), True)]
        selections = self.selections([ActivationMaps(values.detach(), True), maps[1]])
        result = batch_objective(self.samples, maps, selections, None, self.enc, WEIGHTS, self.prompt_sets)
        result.loss.backward()
        self.assertIsNotNone(values.grad)
        self.assertTrue(values.grad.abs().sum() > 0)

    def test_zero_gate_adapters_change_nothing(self):
        selections = self.selections()
        adapters = (init_adapter(16, 4, VISUAL, 0), init_adapter(16, 4, TEXT, 1))
        plain = batch_objective(self.samples, self.maps, selections, None, self.enc, WEIGHTS, self.prompt_sets)
        adapted = batch_objective(self.samples, self.maps, selections, adapters, self.enc, WEIGHTS,
                                  self.prompt_sets)
        self.assertEqual(float(plain.loss), float(adapted.loss))

    def test_deterministic(self):
        selections = self.selections()
        a = batch_objective(self.samples, self.maps, selections, None, self.enc, WEIGHTS, self.prompt_sets)
        b = batch_objective(self.samples, self.maps, selections, None, self.enc, WEIGHTS, self.prompt_sets)
        self.assertEqual(float(a.loss), float(b.loss))

    def test_missing_selection(self):
        selections = self.selections()
        del selections[('b', 1)]
        self.assertRaises(MissingSelection, batch_objective, self.samples, self.maps, selections, None,
                          self.enc, WEIGHTS, self.prompt_sets)
