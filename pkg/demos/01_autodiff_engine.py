"""
The tensor engine: gradients, layers and a tiny training run
=============================================================

Everything the three networks need (dense, 3x3 convolution, 2x2 max pooling,
LSTM, mean squared error and Adam) lives in ``vtmap.neuralcore``.
"""

import numpy as np

from vtmap import neuralcore as nc

rng = np.random.default_rng(0)

# A parameter is a Tensor that collects gradients. Graphs are built by simply
# calling ops; ``backward`` walks them in reverse.
w = nc.Tensor(rng.normal(size=(3, 5)), requires_grad=True)
b = nc.Tensor(np.zeros(3), requires_grad=True)
x = rng.normal(size=(8, 5))
y = rng.normal(size=(8, 3))
loss = nc.mse_loss(nc.dense(x, w, b, "relu"), y)
nc.backward(loss)
print("loss", float(loss.data), "grad shape", w.grad.shape)

# Gradients are checked against central differences in double precision.
err = nc.finite_difference_check(lambda: nc.mse_loss(nc.dense(x, w, b, "relu"), y), [w, b])
print("dense: max relative FD error %.1e" % err)

w_ih = nc.Tensor(rng.normal(size=(16, 3)) * 0.5, requires_grad=True)
w_hh = nc.Tensor(rng.normal(size=(16, 4)) * 0.5, requires_grad=True)
bias = nc.Tensor(np.zeros(16), requires_grad=True)
seq = rng.normal(size=(2, 6, 3))
target = rng.normal(size=(2, 4))
err = nc.finite_difference_check(
    lambda: nc.mse_loss(nc.lstm(seq, w_ih, w_hh, bias, return_sequence=False), target),
    [w_ih, w_hh, bias])
print("lstm:  max relative FD error %.1e" % err)

# Layers bundle parameters; a ModelGraph registers each one once so Adam and
# checkpoints see a flat, ordered parameter list.
model = nc.ModelGraph([
    nc.ConvPool(1, 4, "conv"),          # 3x3 conv + relu + 2x2 pool
    nc.Flatten("flat"),
    nc.Dense(8 * 8 * 4, 1, "linear", "out"),
], kind="custom").init(seed=1)
print("parameters:", model.count_parameters())

# Learn where a bright blob sits (its column, scaled to [0, 1]) in 16x16 images.
cols = rng.uniform(2, 13, size=256)
rows = rng.uniform(2, 13, size=256)
yy, xx = np.mgrid[0:16, 0:16]
images = np.exp(-((xx - cols[:, None, None]) ** 2 + (yy - rows[:, None, None]) ** 2) / 4.0)
images = images[..., None].astype(np.float32)
labels = (cols / 15.0)[:, None]
state = nc.AdamState(model.parameters(), lr=3e-3)
for epoch in range(30):
    for start in range(0, 256, 32):
        batch = slice(start, start + 32)
        loss = nc.mse_loss(model(images[batch]), labels[batch])
        nc.backward(loss)
        nc.adam_step(model.parameters(), state)
    if epoch % 10 == 9:
        with nc.no_grad():
            full = float(nc.mse_loss(model(images), labels).data)
        print(f"epoch {epoch + 1}: mse {full:.5f} (label variance {labels.var():.5f})")
