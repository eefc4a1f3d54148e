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
Vision-language encoders, CAM-masked images and their embeddings.

Two kinds of encoder pair are available:
    mock            deterministic colour-statistics encoder for desk-scale runs
    clip-resnet50   OpenAI CLIP RN50 (needs the optional clip package)
    clip-vit-b16    OpenAI CLIP ViT-B/16 (ditto)
"""

import colorsys
import hashlib
import logging
import os
from abc import ABC, abstractmethod

import torch
import torch.nn.functional as F
from django.conf import settings
from django.core.exceptions import ImproperlyConfigured

logger = logging.getLogger(__name__)

VISUAL = 'visual'
TEXT = 'text'
MODALITIES = (VISUAL, TEXT)

FOREGROUND = 'foreground'
BACKGROUND = 'background'

CLIP_MEAN = (0.48145466, 0.4578275, 0.40821073)
CLIP_STD = (0.26862954, 0.26130258, 0.27577711)

# Guards the chromaticity of an all-black image
CHROMA_EPS = 1e-6


class ClassOutOfRange(ValueError):
    """The class index is not covered by the activation maps."""
    pass


class NonFiniteImage(ValueError):
    """An image to encode has NaN or infinite pixels."""
    pass


class EmptyPrompt(ValueError):
    """A prompt to encode is the empty string."""
    pass


class ZeroNormEmbedding(ValueError):
    """An embedding has zero length."""
    pass


class DimensionMismatch(ValueError):
    """Two embeddings have different dimensions."""
    pass


class UnknownEncoder(ImproperlyConfigured):
    """No encoder pair is registered under that name."""
    pass


class EmbeddingVector():
    """
    A length-D visual or text embedding.
    """
    def __init__(self, values, modality):
        if modality not in MODALITIES:
            raise ValueError('Unknown modality %s' % modality)
        if values.dim() != 1:
            raise DimensionMismatch('Embeddings are vectors, got shape %s' % str(tuple(values.shape)))
        if not torch.isfinite(values).all():
            raise ValueError('Embedding has non-finite values')
        if not values.norm() > 0:
            raise ZeroNormEmbedding('Embedding has zero norm')
        self.values = values
        self.modality = modality

    @property
    def dim(self):
        return self.values.shape[0]


class MaskedImage():
    """
    An image multiplied by one class map (foreground) or its complement (background).
    """
    def __init__(self, pixels, polarity, class_index):
        if polarity not in (FOREGROUND, BACKGROUND):
            raise ValueError('Unknown polarity %s' % polarity)
        self.pixels = pixels
        self.polarity = polarity
        self.class_index = class_index


class EncoderPair(ABC):
    """
    A visual and a text encoder emitting vectors of the same length.
    Pixels arrive as B x 3 x H x W in [0,1], are resized to input_size
    and normalised with the encoder's statistics.
    """
    name = u''
    input_size = None
    pixel_mean = (0.0, 0.0, 0.0)
    pixel_std = (1.0, 1.0, 1.0)
    frozen = True

    def __init__(self, dim, cache_dir=None):
        self.dim = dim
        self.cache_dir = cache_dir
        self._text_cache = {}
        self._load_text_cache()

    @abstractmethod
    def _encode_pixels(self, batch):
        """B x 3 x S x S normalised pixels -> B x D."""
        raise NotImplementedError

    @abstractmethod
    def _encode_strings(self, prompts):
        """List of N strings -> N x D."""
        raise NotImplementedError

    @abstractmethod
    def weights(self):
        """Returns a list of all the encoder weight tensors."""
        raise NotImplementedError

    def encode_images(self, batch):
        """
        B x 3 x H x W pixels -> B x D embeddings.
        Gradients flow back to the pixels, never into the encoder weights.
        """
        if self.input_size is not None and tuple(batch.shape[2:]) != (self.input_size, self.input_size):
            batch = F.interpolate(batch, size=(self.input_size, self.input_size),
                                  mode='bilinear', align_corners=False)
        mean = torch.tensor(self.pixel_mean, dtype=batch.dtype, device=batch.device).view(1, 3, 1, 1)
        std = torch.tensor(self.pixel_std, dtype=batch.dtype, device=batch.device).view(1, 3, 1, 1)
        return self._encode_pixels((batch - mean) / std)

    def encode_prompts(self, prompts):
        """
        List of N prompts -> N x D embeddings, cached by exact prompt string.
        """
        missing = [p for p in dict.fromkeys(prompts) if p not in self._text_cache]
        if missing:
            with torch.no_grad():
                embs = self._encode_strings(missing)
            for p, e in zip(missing, embs):
                self._text_cache.setdefault(p, e.detach().clone())
            self._save_text_cache()
        return torch.stack([self._text_cache[p] for p in prompts])

    def checksum(self):
        """SHA-256 over every weight tensor, in order."""
        h = hashlib.sha256()
        for w in self.weights():
            h.update(w.detach().cpu().contiguous().numpy().tobytes())
        return h.hexdigest()

    def _cache_path(self):
        if self.cache_dir is None:
            return None
        return os.path.join(self.cache_dir, 'text_%s.pt' % self.name)

    def _load_text_cache(self):
        path = self._cache_path()
        if path is not None and os.path.exists(path):
            self._text_cache.update(torch.load(path))
            logger.debug('Loaded %d cached text embeddings from %s', len(self._text_cache), path)

    def _save_text_cache(self):
        path = self._cache_path()
        if path is None:
            return
        os.makedirs(self.cache_dir, exist_ok=True)
        tmp = path + '.tmp'
        torch.save(dict(self._text_cache), tmp)
        os.replace(tmp, path)


def prompt_colour(prompt):
    """
    A fully saturated RGB colour derived from the SHA-256 of the prompt,
    quantised to 8 bits per channel (so it can be painted exactly into a PNG).
    """
    digest = hashlib.sha256(prompt.encode('utf-8')).digest()
    hue = int.from_bytes(digest[:8], 'big') / 2.0 ** 64
    return tuple(round(c * 255) / 255.0 for c in colorsys.hsv_to_rgb(hue, 1.0, 1.0))


class MockEncoderPair(EncoderPair):
    """
    Deterministic encoder pair.
    Visual: W . (chromaticity - 1/3) + b, where chromaticity is the per-channel
    mean over the sum of the channel means. Colourless images (black, grey)
    therefore map exactly to b.
    Text: the visual embedding of a uniform image of prompt_colour(prompt).
    W and b only depend on the seed.
    """
    name = u'mock'

    def __init__(self, dim=64, seed=0, cache_dir=None):
        super().__init__(dim, cache_dir=None)
        g = torch.Generator().manual_seed(seed)
        self.projection = torch.randn(dim, 3, generator=g)
        self.offset = 0.05 * torch.randn(dim, generator=g)

    def zero_vector(self):
        """The embedding of any colourless image."""
        return self.offset.clone()

    def _encode_pixels(self, batch):
        means = batch.mean(dim=(2, 3))
        chroma = (means - means.mean(dim=1, keepdim=True)) / (means.sum(dim=1, keepdim=True) + CHROMA_EPS)
        return chroma @ self.projection.to(batch.dtype).t() + self.offset.to(batch.dtype)

    def _encode_strings(self, prompts):
        colours = torch.tensor([prompt_colour(p) for p in prompts])
        return self._encode_pixels(colours.view(-1, 3, 1, 1))

    def weights(self):
        return [self.projection, self.offset]


class ClipEncoderPair(EncoderPair):
    """
    Frozen OpenAI CLIP model. The clip package is imported on first use.
    """
    arch = u''
    pixel_mean = CLIP_MEAN
    pixel_std = CLIP_STD

    def __init__(self, dim=None, seed=0, cache_dir=None, device='cpu'):
        try:
            import clip
        except ImportError:
            raise ImproperlyConfigured('Encoder %s needs the clip package (see requirements.txt)' % self.name)
        self._clip = clip
        self.model, _ = clip.load(self.arch, device=device, download_root=cache_dir)
        self.model.eval()
        for p in self.model.parameters():
            p.requires_grad_(False)
        self.device = device
        self.input_size = self.model.visual.input_resolution
        super().__init__(self.model.text_projection.shape[1], cache_dir=cache_dir)

    def _encode_pixels(self, batch):
        return self.model.encode_image(batch.to(self.device)).float()

    def _encode_strings(self, prompts):
        tokens = self._clip.tokenize(prompts).to(self.device)
        return self.model.encode_text(tokens).float().cpu()

    def weights(self):
        return list(self.model.state_dict().values())


class ClipResNet50(ClipEncoderPair):
    name = u'clip-resnet50'
    arch = u'RN50'


class ClipViTB16(ClipEncoderPair):
    name = u'clip-vit-b16'
    arch = u'ViT-B/16'


# All the encoder pairs we support
ENCODERS = [MockEncoderPair, ClipResNet50, ClipViTB16]


def find_encoder(name):
    """
    Returns the EncoderPair class with the given name, or None.
    """
    for e in ENCODERS:
        if e.name == name:
            return e
    return None


def build_encoder(name, dim=64, seed=0):
    """Instantiate the named encoder pair, caching under POLE_CACHE_DIR."""
    cls = find_encoder(name)
    if cls is None:
        raise UnknownEncoder('Unknown encoder "%s"' % name)
    return cls(dim=dim, seed=seed, cache_dir=settings.POLE_CACHE_DIR)


def upsample_maps(values, size):
    """
    Bilinearly upsample (B x) K x H' x W' maps to size (H, W).
    """
    squeeze = values.dim() == 3
    if squeeze:
        values = values.unsqueeze(0)
    if tuple(values.shape[2:]) != tuple(size):
        values = F.interpolate(values, size=tuple(size), mode='bilinear', align_corners=False)
    return values[0] if squeeze else values


def make_masked_pair(sample, maps, k):
    """
    Returns the (foreground, background) MaskedImages of sample for class k.
    """
    if not maps.normalized:
        raise ValueError('Masking needs sigmoid-normalised maps')
    if not 0 <= k < maps.num_classes:
        raise ClassOutOfRange('Class %d is not in maps for %d classes' % (k, maps.num_classes))
    p = upsample_maps(maps.values[k:k + 1], sample.size)
    fg = sample.pixels * p
    # X - X*P keeps fg + bg within one ulp of X
    bg = sample.pixels - fg
    return MaskedImage(fg, FOREGROUND, k), MaskedImage(bg, BACKGROUND, k)


def encode_image(img, enc):
    """The visual EmbeddingVector of one MaskedImage."""
    if not torch.isfinite(img.pixels).all():
        raise NonFiniteImage('Masked image for class %d has non-finite pixels' % img.class_index)
    return EmbeddingVector(enc.encode_images(img.pixels.unsqueeze(0))[0], VISUAL)


def encode_texts(prompts, enc):
    """One text EmbeddingVector per prompt of a PromptSet, in order."""
    if not prompts.prompts:
        raise EmptyPrompt('Class %d has no prompts' % prompts.class_index)
    for p in prompts.prompts:
        if not p:
            raise EmptyPrompt('Class %d has an empty prompt' % prompts.class_index)
    return [EmbeddingVector(e, TEXT) for e in enc.encode_prompts(list(prompts.prompts))]


def row_cosine(a, b):
    """
    Cosine similarity of matching rows of two N x D tensors.
    """
    if a.shape != b.shape:
        raise DimensionMismatch('Cannot compare %s and %s embeddings' % (tuple(a.shape), tuple(b.shape)))
    return (a * b).sum(dim=-1) / (a.norm(dim=-1) * b.norm(dim=-1))


def cosine_similarity(u, v):
    """
    (u . v) / (|u| |v|) as a float in [-1, 1].
    """
    if u.dim != v.dim:
        raise DimensionMismatch('Cannot compare %d and %d dimensional embeddings' % (u.dim, v.dim))
    nu = u.values.norm()
    nv = v.values.norm()
    if nu == 0 or nv == 0:
        raise ZeroNormEmbedding('Cosine similarity of a zero-norm embedding')
    s = float(torch.dot(u.values, v.values) / (nu * nv))
    return max(-1.0, min(1.0, s))
