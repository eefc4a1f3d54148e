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
Gated residual adapters for the frozen encoder embeddings.

    out = gate * ReLU(v w1) w2 + (1 - gate) * v

gate is a per-dimension vector. It starts at zero for a learnable gate,
so a fresh adapter is the identity.
"""

import logging
import math

import torch
import torch.nn as nn

from pole.clip_bridge import EmbeddingVector, MODALITIES

logger = logging.getLogger(__name__)

GATE_NONE = 'none'
GATE_FIXED = 'fixed'
GATE_LEARNABLE = 'learnable'
GATE_MODES = (GATE_NONE, GATE_FIXED, GATE_LEARNABLE)


class AdapterDimensionMismatch(ValueError):
    """The embedding does not fit the adapter."""
    pass


class InvalidAdapterSize(ValueError):
    """Adapter dimensions must be positive."""
    pass


class GatedAdapter(nn.Module):
    """
    w1 (D x D_h), w2 (D_h x D) and gate (D) for one modality.
    A fixed gate is not trained. clamp_gate restricts the gate to [0,1].
    """
    def __init__(self, w1, w2, gate, modality, gate_mode=GATE_LEARNABLE, clamp_gate=False):
        super().__init__()
        if modality not in MODALITIES:
            raise ValueError('Unknown modality %s' % modality)
        if gate_mode not in (GATE_FIXED, GATE_LEARNABLE):
            raise ValueError('Adapter gate mode must be fixed or learnable, not %s' % gate_mode)
        d, d_h = w1.shape
        if w2.shape != (d_h, d) or gate.shape != (d,):
            raise AdapterDimensionMismatch('Inconsistent adapter shapes %s, %s, %s'
                                           % (tuple(w1.shape), tuple(w2.shape), tuple(gate.shape)))
        self.w1 = nn.Parameter(w1)
        self.w2 = nn.Parameter(w2)
        self.gate = nn.Parameter(gate, requires_grad=(gate_mode == GATE_LEARNABLE))
        self.modality = modality
        self.gate_mode = gate_mode
        self.clamp_gate = clamp_gate

    @property
    def dim(self):
        return self.w1.shape[0]

    @property
    def hidden(self):
        return self.w1.shape[1]

    def effective_gate(self):
        if self.clamp_gate:
            return self.gate.clamp(0.0, 1.0)
        return self.gate

    def forward(self, v):
        """(... x D) -> (... x D)"""
        if v.shape[-1] != self.dim:
            raise AdapterDimensionMismatch('Adapter takes %d dimensions, got %d' % (self.dim, v.shape[-1]))
        g = self.effective_gate()
        return g * (torch.relu(v @ self.w1) @ self.w2) + (1 - g) * v

    def embed(self, v):
        """Adapt one EmbeddingVector."""
        return adapter_forward(v, self)


def adapter_forward(v, p):
    """
    The adapted EmbeddingVector of v under adapter p.
    """
    if v.modality != p.modality:
        raise AdapterDimensionMismatch('A %s adapter cannot refine a %s embedding' % (p.modality, v.modality))
    return EmbeddingVector(p(v.values), v.modality)


def init_adapter(D, D_h, modality, seed, gate_mode=GATE_LEARNABLE, gate_value=0.0, clamp_gate=False):
    """
    New GatedAdapter with uniform fan-in weights from the seed.
    A learnable gate starts at zero, a fixed one at gate_value.
    """
    if D <= 0 or D_h <= 0:
        raise InvalidAdapterSize('Adapter needs positive dimensions, got %d and %d' % (D, D_h))
    g = torch.Generator().manual_seed(seed)
    b1 = 1.0 / math.sqrt(D)
    b2 = 1.0 / math.sqrt(D_h)
    w1 = (torch.rand(D, D_h, generator=g) * 2 - 1) * b1
    w2 = (torch.rand(D_h, D, generator=g) * 2 - 1) * b2
    start = gate_value if gate_mode == GATE_FIXED else 0.0
    gate = torch.full((D,), float(start))
    return GatedAdapter(w1, w2, gate, modality, gate_mode=gate_mode, clamp_gate=clamp_gate)


def default_hidden(D):
    """A D/4 bottleneck."""
    return max(1, D // 4)


def make_adapter_pair(D, hidden=None, gate_mode=GATE_LEARNABLE, gate_value=0.0, clamp_gate=False, seed=0):
    """
    Returns the shared (visual, text) adapters, or (None, None) for gate mode none.
    """
    if gate_mode not in GATE_MODES:
        raise ValueError('Unknown gate mode %s' % gate_mode)
    if gate_mode == GATE_NONE:
        return None, None
    if hidden is None:
        hidden = default_hidden(D)
    # The two adapters never share initial weights
    visual = init_adapter(D, hidden, 'visual', seed, gate_mode, gate_value, clamp_gate)
    text = init_adapter(D, hidden, 'text', seed + 1, gate_mode, gate_value, clamp_gate)
    logger.debug('Adapters: D=%d, hidden=%d, gate %s', D, hidden, gate_mode)
    return visual, text
