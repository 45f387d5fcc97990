"""
Two kinds of attention
======================

The backbone alternates two blocks. One attends across channels (MDTA), the
other across pixels inside overlapping windows (OCA). This script prints the
shape of each attention map for a small feature map.
"""

import numpy as np

from xrestormer import ModelConfig, build_model, count_parameters
from xrestormer.attention import MdtaParams, OcaParams, mdta_forward, oca_forward
from xrestormer.tensor import Tensor, no_grad

rng = np.random.default_rng(0)
x = Tensor(rng.standard_normal((1, 48, 32, 32)).astype(np.float32))

# channel attention: one C/h x C/h matrix per head, whatever the image size
with no_grad():
    _, attn = mdta_forward(x, MdtaParams.create(48, 1, rng), return_attention=True)
print("MDTA attention", attn.shape)  # (1, 1, 48, 48)

# window attention: 8x8 query windows look at 12x12 key windows (overlap 0.5)
with no_grad():
    _, attn = oca_forward(x, OcaParams.create(48, 1, rng, window=8, overlap=0.5, head_dim=16),
                          return_attention=True)
print("OCA attention ", attn.shape)  # (16 windows, 1 head, 64 queries, 144 keys)

# rows are probability distributions
print("row sums within", float(np.abs(attn.data.sum(-1) - 1).max()))

# the published configuration, counted in closed form
cfg = ModelConfig()
print(f"full model: {count_parameters(cfg):,} parameters")
print(f"TSAB-only variant: {count_parameters(ModelConfig(ssab_enabled=False)):,} parameters")

tiny = build_model(ModelConfig.tiny(), seed=0)
print(f"tiny model: {tiny.num_parameters():,} parameters, blocks per stage:",
      {name: len(s.blocks) for name, s in tiny.stages.items()})
