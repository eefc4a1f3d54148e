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
from django.core.exceptions import ImproperlyConfigured
from django.test import SimpleTestCase

from pole.cam_core import ActivationMaps, AlreadyNormalized, BackboneMismatch, CamNetwork
from pole.cam_core import ClassifierHead, FeatureMap, ImageSample, InvalidSample, ShapeMismatch
from pole.cam_core import TinyBackbone, build_backbone, classification_logits, compute_raw_cam
from pole.cam_core import extract_features, find_backbone, multilabel_soft_margin_loss, sigmoid_normalize


def reference_loss(logits, label):
    total = 0.0
    for z, y in zip(logits.tolist(), label.tolist()):
        s = 1 / (1 + math.exp(-z))
        total -= y * math.log(s) + (1 - y) * math.log(1 - s)
    return total / len(logits)


class ImageSampleTests(SimpleTestCase):

    def test_present_classes(self):
        s = ImageSample(torch.rand(3, 16, 16), torch.tensor([0., 1., 0., 1.]), 'a')
        self.assertEqual(s.present_classes(), [1, 3])
        self.assertEqual(s.num_classes, 4)
        self.assertEqual(s.size, (16, 16))

    def test_too_small(self):
        self.assertRaises(InvalidSample, ImageSample, torch.rand(3, 15, 32), torch.tensor([1.]), 'a')

    def test_no_class(self):
        self.assertRaises(InvalidSample, ImageSample, torch.rand(3, 16, 16), torch.tensor([0., 0.]), 'a')

    def test_not_multi_hot(self):
        self.assertRaises(InvalidSample, ImageSample, torch.rand(3, 16, 16), torch.tensor([0.5, 1.]), 'a')

    def test_non_finite(self):
        pixels = torch.rand(3, 16, 16)
        pixels[0, 3, 3] = float('nan')
        self.assertRaises(InvalidSample, ImageSample, pixels, torch.tensor([1.]), 'a')

    def test_pixel_range(self):
        self.assertRaises(InvalidSample, ImageSample, torch.rand(3, 16, 16) * 255, torch.tensor([1.]), 'a')
        self.assertRaises(InvalidSample, ImageSample, torch.rand(3, 16, 16) - 0.5, torch.tensor([1.]), 'a')
        ImageSample(torch.ones(3, 16, 16), torch.tensor([1.]), 'white')
        ImageSample(torch.zeros(3, 16, 16), torch.tensor([1.]), 'black')


class BackboneTests(SimpleTestCase):

    def test_find_backbone(self):
        self.assertIs(find_backbone('tiny'), TinyBackbone)
        self.assertIsNone(find_backbone('vgg'))
        self.assertRaises(ImproperlyConfigured, build_backbone, 'vgg', 8, 32)

    def test_tiny_stride(self):
        self.assertRaises(ImproperlyConfigured, TinyBackbone, stride=6)

    def test_tiny_seeded(self):
        a = TinyBackbone(stride=8, out_channels=8, seed=3)
        b = TinyBackbone(stride=8, out_channels=8, seed=3)
        c = TinyBackbone(stride=8, out_channels=8, seed=4)
        for pa, pb in zip(a.parameters(), b.parameters()):
            self.assertTrue(torch.equal(pa, pb))
        self.assertFalse(torch.equal(next(a.parameters()), next(c.parameters())))

    def test_seed_leaves_global_rng_alone(self):
        torch.manual_seed(11)
        expected = torch.rand(4)
        torch.manual_seed(11)
        TinyBackbone(seed=0)
        self.assertTrue(torch.equal(torch.rand(4), expected))

    def test_feature_shape(self):
        backbone = TinyBackbone(stride=8, out_channels=8)
        for size in [(16, 16), (20, 33), (64, 48)]:
            with self.subTest(size=size):
                s = ImageSample(torch.rand(3, *size), torch.tensor([1.]), 'x')
                f = extract_features(s, backbone)
                self.assertEqual(f.channels, 8)
                self.assertEqual(tuple(f.values.shape[1:]), tuple(math.ceil(v / 8) for v in size))
                self.assertEqual(f.stride, 8)

    def test_wrong_channels(self):
        backbone = TinyBackbone(stride=8, out_channels=8)
        s = ImageSample(torch.rand(1, 16, 16), torch.tensor([1.]), 'grey')
        self.assertRaises(BackboneMismatch, extract_features, s, backbone)


class LossTests(SimpleTestCase):

    def test_zero_logits(self):
        for y in ([1., 0., 0.], [1., 1., 1.], [0., 1., 0.]):
            with self.subTest(y=y):
                loss = multilabel_soft_margin_loss(torch.zeros(3), torch.tensor(y))
                self.assertAlmostEqual(float(loss), math.log(2), places=6)

    def test_symmetry(self):
        z = torch.tensor([2.0, -1.5, 0.3], dtype=torch.float64)
        y = torch.tensor([1., 0., 1.], dtype=torch.float64)
        self.assertAlmostEqual(float(multilabel_soft_margin_loss(z, y)),
                               float(multilabel_soft_margin_loss(-z, 1 - y)), places=12)

    def test_matches_reference(self):
        g = torch.Generator().manual_seed(0)
        for _ in range(20):
            z = torch.randn(3, generator=g, dtype=torch.float64) * 4
            y = (torch.rand(3, generator=g) > 0.5).double()
            self.assertAlmostEqual(float(multilabel_soft_margin_loss(z, y)), reference_loss(z, y), places=9)

    def test_batch_is_mean(self):
        z = torch.randn(4, 5, dtype=torch.float64)
        y = (torch.rand(4, 5) > 0.5).double()
        per_image = [float(multilabel_soft_margin_loss(z[i], y[i])) for i in range(4)]
        self.assertAlmostEqual(float(multilabel_soft_margin_loss(z, y)), sum(per_image) / 4, places=12)

    def test_shape_mismatch(self):
        self.assertRaises(ShapeMismatch, multilabel_soft_margin_loss, torch.zeros(3), torch.zeros(4))

    def test_gradient(self):
        g = torch.Generator().manual_seed(1)
        for _ in range(50):
            z = (torch.randn(6, generator=g, dtype=torch.float64) * 3).requires_grad_()
            y = (torch.rand(6, generator=g) > 0.5).double()
            self.assertTrue(torch.autograd.gradcheck(lambda t: multilabel_soft_margin_loss(t, y), (z,),
                                                     eps=1e-3, rtol=1e-4))


class ActivationMapTests(SimpleTestCase):

    def test_raw_cam_by_hand(self):
        # Two channels, two classes, one 1x2 feature map
        features = FeatureMap(torch.tensor([[[1., 2.]], [[3., -1.]]]), 8)
        head = ClassifierHead(torch.tensor([[1., 0.], [1., 2.]]))
        maps = compute_raw_cam(features, head)
        self.assertFalse(maps.normalized)
        self.assertTrue(torch.equal(maps.values, torch.tensor([[[4., 1.]], [[6., -2.]]])))

    def test_channel_mismatch(self):
        features = FeatureMap(torch.zeros(3, 2, 2), 8)
        head = ClassifierHead(torch.zeros(4, 2))
        self.assertRaises(ShapeMismatch, compute_raw_cam, features, head)
        self.assertRaises(ShapeMismatch, classification_logits, features, head)

    def test_sigmoid_values(self):
        raw = ActivationMaps(torch.tensor([[[0., 100.], [-100., math.log(3)]]]), normalized=False)
        maps = sigmoid_normalize(raw)
        self.assertTrue(maps.normalized)
        self.assertAlmostEqual(float(maps.values[0, 0, 0]), 0.5)
        self.assertAlmostEqual(float(maps.values[0, 1, 1]), 0.75, places=6)
        self.assertTrue(((maps.values >= 0) & (maps.values <= 1)).all())
        self.assertRaises(AlreadyNormalized, sigmoid_normalize, maps)

    def test_sigmoid_keeps_argmax(self):
        g = torch.Generator().manual_seed(0)
        for _ in range(20):
            raw = ActivationMaps(3 * torch.randn(5, 8, 8, generator=g, dtype=torch.float64), normalized=False)
            maps = sigmoid_normalize(raw)
            self.assertTrue(((maps.values > 0) & (maps.values < 1)).all())
            self.assertTrue(torch.equal(maps.values.flatten(1).argmax(dim=1), raw.values.flatten(1).argmax(dim=1)))
            self.assertTrue(torch.equal(maps.values.argmax(dim=0), raw.values.argmax(dim=0)))

    def test_normalized_range_checked(self):
        self.assertRaises(ValueError, ActivationMaps, torch.full((1, 2, 2), 1.5), True)

    def test_pooling_commutes_with_head(self):
        # The logits are the spatial mean of the raw CAMs
        g = torch.Generator().manual_seed(2)
        features = FeatureMap(torch.randn(8, 5, 7, generator=g, dtype=torch.float64), 8)
        head = ClassifierHead(torch.randn(8, 4, generator=g, dtype=torch.float64))
        raw = compute_raw_cam(features, head)
        self.assertTrue(torch.allclose(raw.values.mean(dim=(1, 2)), classification_logits(features, head),
                                       rtol=1e-12, atol=1e-12))


class CamNetworkTests(SimpleTestCase):

    def test_forward_matches_functions(self):
        backbone = TinyBackbone(stride=4, out_channels=8, seed=5)
        network = CamNetwork(backbone, 3)
        s = ImageSample(torch.rand(3, 32, 32), torch.tensor([1., 0., 1.]), 'a')
        raw, logits = network(s.pixels.unsqueeze(0))
        self.assertEqual(tuple(raw.shape), (1, 3, 8, 8))
        features = extract_features(s, backbone)
        head = network.head_weights()
        self.assertEqual(head.num_classes, 3)
        self.assertTrue(torch.allclose(raw[0], compute_raw_cam(features, head).values, atol=1e-6))
        self.assertTrue(torch.allclose(logits[0], classification_logits(features, head), atol=1e-6))
