"""
Layers and their gradients
==========================

The autoencoder is built from four numpy operations: convolution, ReLU,
sigmoid and nearest-neighbour upsampling. Each one has a hand-written
backward pass. Here we run a small convolution forward and backward and
compare its gradient with central finite differences.
"""
import numpy as np

from caepad import tensor as T

rng = np.random.default_rng(0)

# A 3-channel 8x8 input and a stride-2 convolution with 4 output channels.
x = rng.normal(size=(3, 8, 8))
conv = T.ConvParams(rng.normal(size=(4, 3, 3, 3)) * 0.3, np.zeros(4), stride=2, padding=1)
y = T.conv2d_forward(x, conv)
print("output shape", y.shape)

###############################################################################
# Backward pass against a random upstream gradient. The scalar we
# differentiate is ``sum(y * probe)``.
probe = rng.normal(size=y.shape)
gx, gw, gb = T.conv2d_backward(x, conv, probe)

eps = 1e-5
numeric = np.zeros_like(conv.weights)
for idx in np.ndindex(conv.weights.shape):
    old = conv.weights[idx]
    conv.weights[idx] = old + eps
    up = np.sum(T.conv2d_forward(x, conv) * probe)
    conv.weights[idx] = old - eps
    down = np.sum(T.conv2d_forward(x, conv) * probe)
    conv.weights[idx] = old
    numeric[idx] = (up - down) / (2 * eps)

print("max |analytic - numeric| for the weights:", np.abs(gw - numeric).max())

###############################################################################
# Upsampling by 2 copies each pixel into a 2x2 block; its backward pass sums
# each block back into one pixel.
small = np.arange(4.0).reshape(1, 2, 2)
print(T.upsample_nearest(small, 2)[0])
print(T.upsample_backward(np.ones((1, 4, 4)), 2)[0])
