"""Slow, loop-level reference transcriptions used as independent oracles.

Nothing here calls into the library's FFT, convolution, segmentation or
metric code; each function is written out from the definitions with
explicit loops so it can cross-check the vectorized implementations.
Only small fixtures (about 8x8) are practical.
"""

import cmath
import math


def _dft2(img):
    H, W = len(img), len(img[0])
    out = [[0j] * W for _ in range(H)]
    for u in range(H):
        for v in range(W):
            acc = 0j
            for y in range(H):
                for x in range(W):
                    acc += img[y][x] * cmath.exp(-2j * math.pi * (u * y / H + v * x / W))
            out[u][v] = acc
    return out


def _shift(grid):
    # move the zero frequency to (H // 2, W // 2)
    H, W = len(grid), len(grid[0])
    return [[grid[(u - H // 2) % H][(v - W // 2) % W] for v in range(W)] for u in range(H)]


def _standardize(grid, eps_std):
    vals = [v for row in grid for v in row]
    n = len(vals)
    mean = sum(vals) / n
    std = math.sqrt(sum((v - mean) ** 2 for v in vals) / n)
    return [[(v - mean) / (std + eps_std) for v in row] for row in grid]


def visual_loss(hr, sr, eps_std=1e-8):
    """Mean over frequencies of the squared difference of normalized log(1 + |shifted DFT|)."""
    def spectrum(img):
        s = _shift(_dft2(img))
        return _standardize([[math.log(1.0 + abs(c)) for c in row] for row in s], eps_std)

    a, b = spectrum(hr), spectrum(sr)
    H, W = len(a), len(a[0])
    total = 0.0
    for u in range(H):
        for v in range(W):
            total += (a[u][v] - b[u][v]) ** 2
    return total / (H * W)


def _conv_same(chans, kernels, stride):
    """Zero-padded cross-correlation; ``kernels[o][c]`` is a k x k list."""
    C, H, W = len(chans), len(chans[0]), len(chans[0][0])
    k = len(kernels[0][0])
    r = k // 2
    Ho, Wo = (H + stride - 1) // stride, (W + stride - 1) // stride
    out = []
    for o in range(len(kernels)):
        plane = [[0.0] * Wo for _ in range(Ho)]
        for yo in range(Ho):
            for xo in range(Wo):
                y, x = yo * stride, xo * stride
                acc = 0.0
                for c in range(C):
                    for i in range(k):
                        for j in range(k):
                            yy, xx = y + i - r, x + j - r
                            if 0 <= yy < H and 0 <= xx < W:
                                acc += kernels[o][c][i][j] * chans[c][yy][xx]
                plane[yo][xo] = acc
        out.append(plane)
    return out


def features(img, weights, strides=None, biases=None):
    """tanh conv stack; ``weights[l]`` is nested ``[out][in][k][k]``."""
    h = [img]
    for l, w in enumerate(weights):
        s = 1 if strides is None else strides[l]
        z = _conv_same(h, w, s)
        h = [[[math.tanh(v + (0.0 if biases is None else biases[l][o])) for v in row]
              for row in plane] for o, plane in enumerate(z)]
    return h


def soft_masks(img, centers, temperature):
    out = []
    H, W = len(img), len(img[0])
    masks = [[[0.0] * W for _ in range(H)] for _ in centers]
    for y in range(H):
        for x in range(W):
            v = min(1.0, max(0.0, img[y][x]))
            logits = [-(v - c) ** 2 / temperature for c in centers]
            top = max(logits)
            e = [math.exp(l - top) for l in logits]
            z = sum(e)
            for i in range(len(centers)):
                masks[i][y][x] = e[i] / z
    out.extend(masks)
    return out


def _mse(a, b):
    total, n = 0.0, 0
    for pa, pb in zip(a, b):
        for ra, rb in zip(pa, pb):
            for va, vb in zip(ra, rb):
                total += (va - vb) ** 2
                n += 1
    return total / n


def perceptual_loss(hr, sr, weights, centers, temperature, strides=None,
                    feature_weight=1.0, mask_weight=1.0):
    """Feature MSE plus soft-mask MSE, both averaged over channels and pixels."""
    lf = _mse(features(hr, weights, strides), features(sr, weights, strides))
    lm = _mse(soft_masks(hr, centers, temperature), soft_masks(sr, centers, temperature))
    return feature_weight * lf + mask_weight * lm


def ssim(a, b, peak=1.0, win=8):
    """Uniform-window SSIM, stride 1, population moments, averaged over windows."""
    c1, c2 = (0.01 * peak) ** 2, (0.03 * peak) ** 2
    H, W = len(a), len(a[0])
    n = win * win
    scores = []
    for y in range(H - win + 1):
        for x in range(W - win + 1):
            pa = [a[y + i][x + j] for i in range(win) for j in range(win)]
            pb = [b[y + i][x + j] for i in range(win) for j in range(win)]
            ma, mb = sum(pa) / n, sum(pb) / n
            va = sum((p - ma) ** 2 for p in pa) / n
            vb = sum((p - mb) ** 2 for p in pb) / n
            cov = sum((p - ma) * (q - mb) for p, q in zip(pa, pb)) / n
            scores.append((2 * ma * mb + c1) * (2 * cov + c2) / ((ma * ma + mb * mb + c1) * (va + vb + c2)))
    return sum(scores) / len(scores)


def gaussian_posterior_mean(x_t, abar, mu, sigma2):
    """``E[x0 | x_t]`` for ``x0 ~ N(mu, sigma2)`` and ``x_t = sqrt(abar) x0 + sqrt(1 - abar) e``."""
    return (sigma2 * math.sqrt(abar) * x_t + (1.0 - abar) * mu) / (abar * sigma2 + 1.0 - abar)
