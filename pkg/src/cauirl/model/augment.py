"""Random horizontal flip and zero-padded random crop for CxHxW rows."""

import numpy as np


def flip_crop(samples: np.ndarray, shape, rng: np.random.Generator, pad: int = 4, flip: bool = True) -> np.ndarray:
    n = samples.shape[0]
    if n == 0 or len(shape) != 3:
        return samples
    c, h, w = shape
    x = samples.reshape(n, c, h, w)
    if flip:
        flips = rng.random(n) < 0.5
        x = np.where(flips[:, None, None, None], x[..., ::-1], x)
    if pad > 0:
        xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
        dy = rng.integers(0, 2 * pad + 1, size=n)
        dx = rng.integers(0, 2 * pad + 1, size=n)
        rows = dy[:, None] + np.arange(h)[None, :]
        cols = dx[:, None] + np.arange(w)[None, :]
        x = xp[np.arange(n)[:, None, None, None], np.arange(c)[None, :, None, None],
               rows[:, None, :, None], cols[:, None, None, :]]
    return x.reshape(n, -1)
