"""Bilinear resize as explicit linear maps, shared by the input-diversity
attack transform and the resize-and-pad defense. Expressing the resize as a
matrix sandwich makes its adjoint (needed to backpropagate through the
diversity transform) a pair of transposed multiplies."""

import numpy as np


def bilinear_matrix(out_len, in_len):
    """Row-stochastic interpolation matrix; exact identity when sizes match."""
    m = np.zeros((out_len, in_len))
    if out_len == 1:
        m[0, 0] = 1.0
        return m
    src = np.arange(out_len) * (in_len - 1) / (out_len - 1)
    lo = np.floor(src).astype(int)
    hi = np.minimum(lo + 1, in_len - 1)
    w = src - lo
    m[np.arange(out_len), lo] += 1.0 - w
    m[np.arange(out_len), hi] += w
    return m


def resize_bilinear(images, out_h, out_w):
    """Resize (N, C, H, W) along the spatial axes."""
    rh = bilinear_matrix(out_h, images.shape[2]).astype(images.dtype)
    rw = bilinear_matrix(out_w, images.shape[3]).astype(images.dtype)
    return rh @ images @ rw.T


def resize_pad_restore(images, r_h, r_w, off_y, off_x, canvas_h, canvas_w):
    """Resize to (r_h, r_w), zero-pad into a canvas at the given offset, and
    resize back to the original spatial shape. Returns (output, adjoint_fn);
    the adjoint maps an output-shaped gradient back to an input-shaped one."""
    n, c, h, w = images.shape
    r1h = bilinear_matrix(r_h, h).astype(images.dtype)
    r1w = bilinear_matrix(r_w, w).astype(images.dtype)
    r2h = bilinear_matrix(h, canvas_h).astype(images.dtype)
    r2w = bilinear_matrix(w, canvas_w).astype(images.dtype)

    resized = r1h @ images @ r1w.T
    canvas = np.zeros((n, c, canvas_h, canvas_w), dtype=images.dtype)
    canvas[:, :, off_y:off_y + r_h, off_x:off_x + r_w] = resized
    out = r2h @ canvas @ r2w.T

    def adjoint(gout):
        gcanvas = r2h.T @ gout.astype(images.dtype) @ r2w
        gresized = gcanvas[:, :, off_y:off_y + r_h, off_x:off_x + r_w]
        return r1h.T @ gresized @ r1w

    return out, adjoint
