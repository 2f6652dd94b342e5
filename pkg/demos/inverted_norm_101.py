"""
Inverted normalization in a few lines
=====================================

The affine step runs first and the standardization second, so whatever
gamma and beta do, every instance leaves the layer with zero mean and
(almost) unit variance.  Affine dropout swaps gamma for ones and beta for
zeros at random on each forward pass.
"""

import numpy as np

from inorm.invnorm import AffineMasks, InvertedNormParams, NormalInit, init_affine, inorm_forward, sample_masks
from inorm.rng import Purpose, RngStream

x = np.random.default_rng(0).normal(3.0, 2.0, size=(4, 6))

# gamma ~ N(1, 0.3), beta ~ N(0, 0.3)
gamma, beta = init_affine(6, NormalInit(0.3, 0.3), RngStream(0, Purpose.INIT))
params = InvertedNormParams(gamma, beta, p=0.3)

# %%
# Each forward pass draws one keep/drop bit for gamma and one for beta
for run in range(5):
    masks = sample_masks(params, RngStream(0, Purpose.DROPOUT_MASK, 0, run))
    y, _ = inorm_forward(x, params, masks)
    print(f"pass {run}: keep gamma={int(masks.m_gamma)} keep beta={int(masks.m_beta)}  "
          f"row means {np.round(y.mean(axis=1), 12) + 0.0}  first row {np.round(y[0], 3)}")

# %%
# Scaling the input changes nothing once beta is dropped
no_beta = AffineMasks(np.array(1.0), np.array(0.0))
exact = InvertedNormParams(gamma, beta, eps=0.0)
y1, _ = inorm_forward(x, exact, no_beta)
y2, _ = inorm_forward(25.0 * x, exact, no_beta)
print("max difference after scaling the input by 25:", np.abs(y1 - y2).max())
