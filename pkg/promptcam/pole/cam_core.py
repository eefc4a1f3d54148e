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
This module contains the class activation map machinery:
backbones, the 1x1 classifier head, the multi-label classification loss
and the raw and sigmoid activation maps themselves.
"""

import logging
import math
from abc import ABC, abstractmethod

import torch
import torch.nn as nn
import torch.nn.functional as F
from django.core.exceptions import ImproperlyConfigured

logger = logging.getLogger(__name__)

MIN_IMAGE_SIZE = 16

# Used by the ResNet-50 trunk
IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)


class InvalidSample(ValueError):
    """The pixels or label of an ImageSample are unusable."""
    pass


class ShapeMismatch(ValueError):
    """Two arguments have incompatible shapes."""
    pass


class AlreadyNormalized(ValueError):
    """Sigmoid normalisation was requested for maps that are already normalised."""
    pass


class BackboneMismatch(ImproperlyConfigured):
    """The backbone cannot process the image it was given."""
    pass


class ImageSample():
    """
    One image (C x H x W tensor, values in [0,1]) with its multi-hot label.
    """
    def __init__(self, pixels, label, sample_id):
        if pixels.dim() != 3:
            raise InvalidSample('Image %s should be C x H x W, got shape %s' % (sample_id, tuple(pixels.shape)))
        if min(pixels.shape[1:]) < MIN_IMAGE_SIZE:
            raise InvalidSample('Image %s is smaller than %dx%d' % (sample_id, MIN_IMAGE_SIZE, MIN_IMAGE_SIZE))
        if not torch.isfinite(pixels).all():
            raise InvalidSample('Image %s has non-finite pixels' % sample_id)
        if pixels.min() < 0 or pixels.max() > 1:
            raise InvalidSample('Image %s has pixels outside [0, 1]' % sample_id)
        if label.dim() != 1 or ((label != 0) & (label != 1)).any():
            raise InvalidSample('Label of image %s is not a multi-hot vector' % sample_id)
        if not label.any():
            raise InvalidSample('Image %s has no class present' % sample_id)
        self.pixels = pixels
        self.label = label
        self.id = sample_id

    @property
    def num_classes(self):
        return self.label.shape[0]

    @property
    def size(self):
        """(H, W)"""
        return tuple(self.pixels.shape[1:])

    def present_classes(self):
        """Indices of the classes with label 1, in ascending order."""
        return [int(k) for k in torch.nonzero(self.label).flatten()]

    def __str__(self):
        return self.id


class FeatureMap():
    """
    Backbone output for one image.
    """
    def __init__(self, values, stride):
        if stride < 1:
            raise ShapeMismatch('Stride must be positive, got %d' % stride)
        if values.dim() != 3:
            raise ShapeMismatch('Features should be C x H\' x W\', got shape %s' % str(tuple(values.shape)))
        self.values = values
        self.stride = stride

    @property
    def channels(self):
        return self.values.shape[0]


class ClassifierHead():
    """
    The 1x1 convolution weights, as a C x K matrix.
    """
    def __init__(self, weights):
        if weights.dim() != 2:
            raise ShapeMismatch('Head weights should be C x K, got shape %s' % str(tuple(weights.shape)))
        self.weights = weights

    @property
    def channels(self):
        return self.weights.shape[0]

    @property
    def num_classes(self):
        return self.weights.shape[1]


class ActivationMaps():
    """
    K x H' x W' class activation maps, either raw logits or sigmoid values.
    """
    def __init__(self, values, normalized):
        if values.dim() != 3:
            raise ShapeMismatch('Maps should be K x H\' x W\', got shape %s' % str(tuple(values.shape)))
        if normalized and ((values < 0) | (values > 1)).any():
            raise ValueError('Normalised maps must lie in [0,1]')
        self.values = values
        self.normalized = normalized

    @property
    def num_classes(self):
        return self.values.shape[0]


class Backbone(nn.Module, ABC):
    """
    Feature extractor: B x in_channels x H x W -> B x out_channels x H' x W'
    with H' = ceil(H / stride).
    """
    name = u''
    in_channels = 3

    def __init__(self, stride, out_channels):
        super().__init__()
        self.stride = stride
        self.out_channels = out_channels

    @abstractmethod
    def forward(self, x):
        raise NotImplementedError

    def feature_size(self, size):
        """(H', W') for an image of size (H, W)."""
        return tuple(math.ceil(s / self.stride) for s in size)


class TinyBackbone(Backbone):
    """
    Deterministic stack of 3x3 stride-2 convolutions for desk-scale runs.
    The weights depend only on the seed.
    """
    name = u'tiny'

    def __init__(self, stride=8, out_channels=32, seed=0):
        if stride < 2 or stride & (stride - 1):
            raise ImproperlyConfigured('Tiny backbone stride must be a power of two, got %d' % stride)
        super().__init__(stride, out_channels)
        layers = []
        channels = self.in_channels
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(seed)
            for _ in range(int(math.log2(stride))):
                layers.append(nn.Conv2d(channels, out_channels, kernel_size=3, stride=2, padding=1))
                layers.append(nn.ReLU(inplace=True))
                channels = out_channels
        self.layers = nn.Sequential(*layers)

    def forward(self, x):
        return self.layers(x)


class ResNet50Backbone(Backbone):
    """
    torchvision ResNet-50 trunk with a dilated last stage (output stride 16).
    """
    name = u'resnet50'

    def __init__(self, stride=16, out_channels=2048, seed=0, pretrained=True):
        if stride != 16:
            raise ImproperlyConfigured('ResNet-50 backbone only supports stride 16, got %d' % stride)
        if out_channels != 2048:
            raise ImproperlyConfigured('ResNet-50 backbone has 2048 output channels, got %d' % out_channels)
        super().__init__(stride, out_channels)
        from torchvision.models import resnet50, ResNet50_Weights
        weights = ResNet50_Weights.IMAGENET1K_V1 if pretrained else None
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(seed)
            net = resnet50(weights=weights, replace_stride_with_dilation=[False, False, True])
        self.trunk = nn.Sequential(net.conv1, net.bn1, net.relu, net.maxpool,
                                   net.layer1, net.layer2, net.layer3, net.layer4)
        self.register_buffer('mean', torch.tensor(IMAGENET_MEAN).view(1, 3, 1, 1))
        self.register_buffer('std', torch.tensor(IMAGENET_STD).view(1, 3, 1, 1))

    def forward(self, x):
        return self.trunk((x - self.mean) / self.std)


# All the backbones we support
BACKBONES = [TinyBackbone, ResNet50Backbone]


def find_backbone(name):
    """
    Returns the Backbone class with the given name, or None.
    """
    for b in BACKBONES:
        if b.name == name:
            return b
    return None


def build_backbone(name, stride, channels, seed=0, **kwargs):
    """Instantiate the named backbone or raise ImproperlyConfigured."""
    cls = find_backbone(name)
    if cls is None:
        raise ImproperlyConfigured('Unknown backbone "%s"' % name)
    return cls(stride=stride, out_channels=channels, seed=seed, **kwargs)


class CamNetwork(nn.Module):
    """
    Backbone plus bias-free 1x1 classifier head.
    forward() returns the raw CAMs (B x K x H' x W') and the GAP logits (B x K).
    """
    def __init__(self, backbone, num_classes):
        super().__init__()
        self.backbone = backbone
        self.head = nn.Conv2d(backbone.out_channels, num_classes, kernel_size=1, bias=False)
        self.num_classes = num_classes

    def forward(self, x):
        if x.shape[1] != self.backbone.in_channels:
            raise BackboneMismatch('Backbone expects %d channels, got %d' % (self.backbone.in_channels, x.shape[1]))
        raw = self.head(self.backbone(x))
        return raw, raw.mean(dim=(2, 3))

    def head_weights(self):
        """The head as a ClassifierHead (C x K)."""
        return ClassifierHead(self.head.weight.view(self.num_classes, -1).t())


def extract_features(sample, backbone):
    """
    Run the backbone on one ImageSample and return its FeatureMap.
    """
    if sample.pixels.shape[0] != backbone.in_channels:
        raise BackboneMismatch('Backbone expects %d channels, image %s has %d'
                               % (backbone.in_channels, sample.id, sample.pixels.shape[0]))
    values = backbone(sample.pixels.unsqueeze(0))[0]
    if values.shape[1:] != torch.Size(backbone.feature_size(sample.size)):
        raise BackboneMismatch('Backbone %s produced %s features for a %s image'
                               % (backbone.name, tuple(values.shape[1:]), sample.size))
    return FeatureMap(values, backbone.stride)


def multilabel_soft_margin_loss(logits, label):
    """
    Mean over classes of the per-class logistic loss.
    Takes K logits and a K label vector, or B x K of each (then averaged over B).
    """
    if logits.shape != label.shape:
        raise ShapeMismatch('Logits have shape %s, label has shape %s'
                            % (tuple(logits.shape), tuple(label.shape)))
    if logits.dim() == 1:
        logits = logits.unsqueeze(0)
        label = label.unsqueeze(0)
    return F.multilabel_soft_margin_loss(logits, label.to(logits.dtype))


def _check_channels(features, head):
    if head.channels != features.channels:
        raise ShapeMismatch('Head has %d input channels, features have %d' % (head.channels, features.channels))


def compute_raw_cam(features, head):
    """
    P_k(h, w) = W_k . Z(h, w) for every class k.
    """
    _check_channels(features, head)
    values = torch.einsum('ck,chw->khw', head.weights, features.values)
    return ActivationMaps(values, normalized=False)


def sigmoid_normalize(raw):
    """Elementwise sigmoid of raw maps."""
    if raw.normalized:
        raise AlreadyNormalized('Maps are already normalised')
    return ActivationMaps(torch.sigmoid(raw.values), normalized=True)


def classification_logits(features, head):
    """
    Global average pooling followed by the head projection.
    """
    _check_channels(features, head)
    return features.values.mean(dim=(1, 2)) @ head.weights
