"""Parameterized neural layers: convolution, batch norm, linear projection,
pooling, pixel shuffle, and the alternate upsamplers.

Convolution is cross-correlation (no kernel flip) with zero padding.  The
default forward uses an im2col path; :func:`conv2d_direct` is a slow
loop-based reference the tests compare against.  Padding conventions are
pinned so every kernel in the model preserves or exactly halves/quarters
spatial size: 3x3 -> (1,1), 1x3 -> (0,1), 3x1 -> (1,0), 4x4/s2 -> (1,1),
4x4/s4 -> (0,0), 1x1 -> (0,0).
"""

from __future__ import annotations

import math

import numpy as np

from .tensor import ShapeError, Tensor, _result, tally_mult_adds

__all__ = [
    "Conv2d",
    "DepthwiseConv2d",
    "ConvTranspose2d",
    "BatchNorm2d",
    "Linear",
    "Pool2d",
    "PixelShuffle",
    "conv2d_direct",
    "pixel_shuffle",
    "pixel_unshuffle",
    "upsample_nearest",
    "upsample_bilinear",
    "kaiming_uniform_bound",
    "default_padding",
]

BN_EPS = 1e-5
BN_MOMENTUM = 0.1


def _out_size(size: int, k: int, s: int, p: int) -> int:
    return (size + 2 * p - k) // s + 1


def default_padding(kh: int, kw: int, stride: int = 1) -> tuple[int, int]:
    """The pinned padding convention for the model's kernel set."""
    if (kh, kw) == (1, 1):
        return (0, 0)
    if (kh, kw) == (3, 3):
        return (1, 1)
    if (kh, kw) == (1, 3):
        return (0, 1)
    if (kh, kw) == (3, 1):
        return (1, 0)
    if (kh, kw) == (4, 4):
        return (1, 1) if stride == 2 else (0, 0)
    raise ValueError(f"no default padding for kernel {kh}x{kw}")


def kaiming_uniform_bound(fan_in: int) -> float:
    return math.sqrt(6.0 / fan_in)


# -- im2col machinery ----------------------------------------------------------


def _im2col(x: np.ndarray, kh, kw, sh, sw, ph, pw):
    """(N,C,H,W) -> (N, C*kh*kw, Hout*Wout) patch matrix."""
    n, c, h, w = x.shape
    ho, wo = _out_size(h, kh, sh, ph), _out_size(w, kw, sw, pw)
    xp = np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw))) if (ph or pw) else x
    win = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))
    win = win[:, :, ::sh, ::sw]  # (N, C, Ho, Wo, kh, kw)
    cols = win.transpose(0, 1, 4, 5, 2, 3).reshape(n, c * kh * kw, ho * wo)
    return np.ascontiguousarray(cols), ho, wo


def _col2im(cols: np.ndarray, xshape, kh, kw, sh, sw, ph, pw):
    """Adjoint of _im2col: scatter-add patches back to (N,C,H,W)."""
    n, c, h, w = xshape
    ho, wo = _out_size(h, kh, sh, ph), _out_size(w, kw, sw, pw)
    cols = cols.reshape(n, c, kh, kw, ho, wo)
    xp = np.zeros((n, c, h + 2 * ph, w + 2 * pw), dtype=cols.dtype)
    for i in range(kh):
        for j in range(kw):
            xp[:, :, i : i + sh * ho : sh, j : j + sw * wo : sw] += cols[:, :, i, j]
    return xp[:, :, ph : ph + h, pw : pw + w] if (ph or pw) else xp


# -- convolution ----------------------------------------------------------------


class Conv2d:
    """2-D convolution (cross-correlation) with zero padding."""

    def __init__(self, cin, cout, kernel, stride=(1, 1), padding=None, bias=True, dtype=np.float32):
        if isinstance(kernel, int):
            kernel = (kernel, kernel)
        if isinstance(stride, int):
            stride = (stride, stride)
        self.kernel = kernel
        self.stride = stride
        self.padding = default_padding(*kernel, stride[0]) if padding is None else padding
        self.weight = Tensor(np.zeros((cout, cin, *kernel), dtype=dtype), requires_grad=True)
        self.bias = Tensor(np.zeros(cout, dtype=dtype), requires_grad=True) if bias else None

    def init(self, rng: np.random.Generator) -> None:
        cout, cin, kh, kw = self.weight.shape
        bound = kaiming_uniform_bound(cin * kh * kw)
        self.weight.data[...] = rng.uniform(-bound, bound, self.weight.shape)
        if self.bias is not None:
            self.bias.data[...] = 0.0

    def parameters(self):
        out = {"weight": self.weight}
        if self.bias is not None:
            out["bias"] = self.bias
        return out

    def param_count(self) -> int:
        return self.weight.size + (self.bias.size if self.bias is not None else 0)

    def mult_adds(self, h: int, w: int) -> int:
        cout, cin, kh, kw = self.weight.shape
        (sh, sw), (ph, pw) = self.stride, self.padding
        ho, wo = _out_size(h, kh, sh, ph), _out_size(w, kw, sw, pw)
        return cout * cin * kh * kw * ho * wo

    def forward(self, x: Tensor) -> Tensor:
        cout, cin, kh, kw = self.weight.shape
        if x.data.ndim != 4 or x.shape[1] != cin:
            raise ShapeError(f"conv2d: expected (N,{cin},H,W), got {x.shape}")
        (sh, sw), (ph, pw) = self.stride, self.padding
        n, _, h, w = x.shape
        ho, wo = _out_size(h, kh, sh, ph), _out_size(w, kw, sw, pw)
        if ho < 1 or wo < 1:
            raise ShapeError(f"conv2d: non-positive output size for input {x.shape} kernel {kh}x{kw}")
        tally_mult_adds(n * self.mult_adds(h, w))
        weight, bias = self.weight, self.bias
        cols, _, _ = _im2col(x.data, kh, kw, sh, sw, ph, pw)
        wmat = weight.data.reshape(cout, -1)
        out = np.matmul(wmat, cols).reshape(n, cout, ho, wo)
        if bias is not None:
            out = out + bias.data.reshape(1, cout, 1, 1)

        def backward(g):
            gmat = g.reshape(n, cout, ho * wo)
            gw = np.einsum("ncl,nkl->ck", gmat, cols).reshape(weight.shape)
            gcols = np.matmul(wmat.T, gmat)
            gx = _col2im(gcols, x.shape, kh, kw, sh, sw, ph, pw)
            if bias is None:
                return gx, gw
            return gx, gw, gmat.sum(axis=(0, 2))

        parents = (x, weight) if bias is None else (x, weight, bias)
        return _result(out, parents, backward)

    __call__ = forward


def conv2d_direct(x: np.ndarray, weight: np.ndarray, bias, stride, padding) -> np.ndarray:
    """Loop-based reference convolution (forward only, for cross-checking)."""
    n, cin, h, w = x.shape
    cout, _, kh, kw = weight.shape
    (sh, sw), (ph, pw) = stride, padding
    ho, wo = _out_size(h, kh, sh, ph), _out_size(w, kw, sw, pw)
    xp = np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    out = np.zeros((n, cout, ho, wo), dtype=x.dtype)
    for b in range(n):
        for co in range(cout):
            for i in range(ho):
                for j in range(wo):
                    patch = xp[b, :, i * sh : i * sh + kh, j * sw : j * sw + kw]
                    out[b, co, i, j] = np.sum(patch * weight[co])
            if bias is not None:
                out[b, co] += bias[co]
    return out


class DepthwiseConv2d:
    """Per-channel convolution (the MobileNetv2 depthwise 3x3)."""

    def __init__(self, channels, kernel=(3, 3), stride=(1, 1), padding=None, bias=True, dtype=np.float32):
        if isinstance(kernel, int):
            kernel = (kernel, kernel)
        if isinstance(stride, int):
            stride = (stride, stride)
        self.channels = channels
        self.kernel = kernel
        self.stride = stride
        self.padding = default_padding(*kernel, stride[0]) if padding is None else padding
        self.weight = Tensor(np.zeros((channels, *kernel), dtype=dtype), requires_grad=True)
        self.bias = Tensor(np.zeros(channels, dtype=dtype), requires_grad=True) if bias else None

    def init(self, rng: np.random.Generator) -> None:
        kh, kw = self.kernel
        bound = kaiming_uniform_bound(kh * kw)
        self.weight.data[...] = rng.uniform(-bound, bound, self.weight.shape)
        if self.bias is not None:
            self.bias.data[...] = 0.0

    def parameters(self):
        out = {"weight": self.weight}
        if self.bias is not None:
            out["bias"] = self.bias
        return out

    def param_count(self) -> int:
        return self.weight.size + (self.bias.size if self.bias is not None else 0)

    def mult_adds(self, h: int, w: int) -> int:
        kh, kw = self.kernel
        (sh, sw), (ph, pw) = self.stride, self.padding
        ho, wo = _out_size(h, kh, sh, ph), _out_size(w, kw, sw, pw)
        return self.channels * kh * kw * ho * wo

    def forward(self, x: Tensor) -> Tensor:
        c = self.channels
        if x.data.ndim != 4 or x.shape[1] != c:
            raise ShapeError(f"depthwise conv: expected (N,{c},H,W), got {x.shape}")
        kh, kw = self.kernel
        (sh, sw), (ph, pw) = self.stride, self.padding
        n, _, h, w = x.shape
        ho, wo = _out_size(h, kh, sh, ph), _out_size(w, kw, sw, pw)
        if ho < 1 or wo < 1:
            raise ShapeError(f"depthwise conv: non-positive output size for input {x.shape}")
        tally_mult_adds(n * self.mult_adds(h, w))
        weight, bias = self.weight, self.bias
        cols, _, _ = _im2col(x.data, kh, kw, sh, sw, ph, pw)
        cols = cols.reshape(n, c, kh * kw, ho * wo)
        out = np.einsum("nckl,ck->ncl", cols, weight.data.reshape(c, -1)).reshape(n, c, ho, wo)
        if bias is not None:
            out = out + bias.data.reshape(1, c, 1, 1)

        def backward(g):
            gmat = g.reshape(n, c, ho * wo)
            gw = np.einsum("ncl,nckl->ck", gmat, cols).reshape(weight.shape)
            gcols = np.einsum("ncl,ck->nckl", gmat, weight.data.reshape(c, -1))
            gx = _col2im(gcols.reshape(n, c * kh * kw, ho * wo), x.shape, kh, kw, sh, sw, ph, pw)
            if bias is None:
                return gx, gw
            return gx, gw, gmat.sum(axis=(0, 2))

        parents = (x, weight) if bias is None else (x, weight, bias)
        return _result(out, parents, backward)

    __call__ = forward


class ConvTranspose2d:
    """Transposed convolution; output size = (H-1)*s - 2p + k."""

    def __init__(self, cin, cout, kernel, stride, padding, bias=True, dtype=np.float32):
        if isinstance(kernel, int):
            kernel = (kernel, kernel)
        if isinstance(stride, int):
            stride = (stride, stride)
        if isinstance(padding, int):
            padding = (padding, padding)
        self.kernel, self.stride, self.padding = kernel, stride, padding
        self.weight = Tensor(np.zeros((cin, cout, *kernel), dtype=dtype), requires_grad=True)
        self.bias = Tensor(np.zeros(cout, dtype=dtype), requires_grad=True) if bias else None

    def init(self, rng: np.random.Generator) -> None:
        cin, cout, kh, kw = self.weight.shape
        bound = kaiming_uniform_bound(cin * kh * kw)
        self.weight.data[...] = rng.uniform(-bound, bound, self.weight.shape)
        if self.bias is not None:
            self.bias.data[...] = 0.0

    def parameters(self):
        out = {"weight": self.weight}
        if self.bias is not None:
            out["bias"] = self.bias
        return out

    def param_count(self) -> int:
        return self.weight.size + (self.bias.size if self.bias is not None else 0)

    def mult_adds(self, h: int, w: int) -> int:
        cin, cout, kh, kw = self.weight.shape
        return cin * cout * kh * kw * h * w

    def forward(self, x: Tensor) -> Tensor:
        cin, cout, kh, kw = self.weight.shape
        if x.data.ndim != 4 or x.shape[1] != cin:
            raise ShapeError(f"conv_transpose: expected (N,{cin},H,W), got {x.shape}")
        (sh, sw), (ph, pw) = self.stride, self.padding
        n, _, h, w = x.shape
        ho = (h - 1) * sh - 2 * ph + kh
        wo = (w - 1) * sw - 2 * pw + kw
        if ho < 1 or wo < 1:
            raise ShapeError("conv_transpose: non-positive output size")
        tally_mult_adds(n * self.mult_adds(h, w))
        weight, bias = self.weight, self.bias
        wmat = weight.data.reshape(cin, cout * kh * kw)
        xmat = x.data.reshape(n, cin, h * w)
        cols = np.einsum("ck,ncl->nkl", wmat, xmat)
        out = _col2im(cols, (n, cout, ho, wo), kh, kw, sh, sw, ph, pw)
        if bias is not None:
            out = out + bias.data.reshape(1, cout, 1, 1)

        def backward(g):
            gcols, _, _ = _im2col(g, kh, kw, sh, sw, ph, pw)
            gx = np.einsum("ck,nkl->ncl", wmat, gcols).reshape(x.shape)
            gw = np.einsum("ncl,nkl->ck", xmat, gcols).reshape(weight.shape)
            if bias is None:
                return gx, gw
            return gx, gw, g.sum(axis=(0, 2, 3))

        parents = (x, weight) if bias is None else (x, weight, bias)
        return _result(out, parents, backward)

    __call__ = forward


# -- batch norm -----------------------------------------------------------------


class BatchNorm2d:
    """Channelwise batch normalization with running statistics.

    Train mode normalizes by (biased) batch statistics and updates
    running stats as running <- (1-m)*running + m*batch; eval mode is a
    deterministic affine map through the running stats.
    """

    def __init__(self, channels, eps=BN_EPS, momentum=BN_MOMENTUM, dtype=np.float32):
        self.channels = channels
        self.eps = eps
        self.momentum = momentum
        self.gamma = Tensor(np.ones(channels, dtype=dtype), requires_grad=True)
        self.beta = Tensor(np.zeros(channels, dtype=dtype), requires_grad=True)
        self.running_mean = np.zeros(channels, dtype=dtype)
        self.running_var = np.ones(channels, dtype=dtype)
        self.training = True

    def init(self, rng: np.random.Generator) -> None:
        self.gamma.data[...] = 1.0
        self.beta.data[...] = 0.0
        self.running_mean[...] = 0.0
        self.running_var[...] = 1.0

    def parameters(self):
        return {"gamma": self.gamma, "beta": self.beta}

    def buffers(self):
        return {"running_mean": self.running_mean, "running_var": self.running_var}

    def param_count(self) -> int:
        return 2 * self.channels

    def mult_adds(self, h: int, w: int) -> int:
        return 0

    def forward(self, x: Tensor) -> Tensor:
        c = self.channels
        if x.data.ndim != 4 or x.shape[1] != c:
            raise ShapeError(f"batchnorm: expected (N,{c},H,W), got {x.shape}")
        n, _, h, w = x.shape
        gamma, beta = self.gamma, self.beta
        if self.training:
            m = n * h * w
            if m < 2:
                raise ShapeError("batchnorm train mode needs n*h*w >= 2")
            mu = x.data.mean(axis=(0, 2, 3))
            var = x.data.var(axis=(0, 2, 3))
            self.running_mean[...] = (1 - self.momentum) * self.running_mean + self.momentum * mu
            self.running_var[...] = (1 - self.momentum) * self.running_var + self.momentum * var
        else:
            mu = self.running_mean.astype(x.dtype)
            var = self.running_var.astype(x.dtype)
        ivstd = 1.0 / np.sqrt(var + self.eps)
        xhat = (x.data - mu.reshape(1, c, 1, 1)) * ivstd.reshape(1, c, 1, 1)
        out = gamma.data.reshape(1, c, 1, 1) * xhat + beta.data.reshape(1, c, 1, 1)
        training = self.training

        def backward(g):
            ggamma = (g * xhat).sum(axis=(0, 2, 3))
            gbeta = g.sum(axis=(0, 2, 3))
            gxhat = g * gamma.data.reshape(1, c, 1, 1)
            iv = ivstd.reshape(1, c, 1, 1)
            if not training:
                return gxhat * iv, ggamma, gbeta
            m = n * h * w
            sum_gxhat = gxhat.sum(axis=(0, 2, 3), keepdims=True)
            sum_gxhat_xhat = (gxhat * xhat).sum(axis=(0, 2, 3), keepdims=True)
            gx = iv / m * (m * gxhat - sum_gxhat - xhat * sum_gxhat_xhat)
            return gx, ggamma, gbeta

        return _result(out, (x, gamma, beta), backward)

    __call__ = forward


# -- linear ---------------------------------------------------------------------


class Linear:
    """Affine map over the last axis of a (B, L, Din) view."""

    def __init__(self, din, dout, bias=True, dtype=np.float32):
        self.weight = Tensor(np.zeros((dout, din), dtype=dtype), requires_grad=True)
        self.bias = Tensor(np.zeros(dout, dtype=dtype), requires_grad=True) if bias else None

    def init(self, rng: np.random.Generator) -> None:
        dout, din = self.weight.shape
        bound = kaiming_uniform_bound(din)
        self.weight.data[...] = rng.uniform(-bound, bound, self.weight.shape)
        if self.bias is not None:
            self.bias.data[...] = 0.0

    def parameters(self):
        out = {"weight": self.weight}
        if self.bias is not None:
            out["bias"] = self.bias
        return out

    def param_count(self) -> int:
        return self.weight.size + (self.bias.size if self.bias is not None else 0)

    def forward(self, x: Tensor) -> Tensor:
        weight, bias = self.weight, self.bias
        dout, din = weight.shape
        if x.shape[-1] != din:
            raise ShapeError(f"linear: last axis {x.shape[-1]} != Din {din}")
        tally_mult_adds(int(np.prod(x.shape[:-1])) * din * dout)
        out = np.matmul(x.data, weight.data.T)
        if bias is not None:
            out = out + bias.data

        def backward(g):
            gx = np.matmul(g, weight.data)
            g2 = g.reshape(-1, dout)
            gw = g2.T @ x.data.reshape(-1, din)
            if bias is None:
                return gx, gw
            return gx, gw, g2.sum(axis=0)

        parents = (x, weight) if bias is None else (x, weight, bias)
        return _result(out, parents, backward)

    __call__ = forward


# -- pooling --------------------------------------------------------------------


class Pool2d:
    """Max or average pooling, no padding."""

    def __init__(self, kind="max", kernel=(2, 2), stride=(2, 2)):
        if kind not in ("max", "avg"):
            raise ValueError(f"pool kind must be max or avg, got {kind!r}")
        if isinstance(kernel, int):
            kernel = (kernel, kernel)
        if isinstance(stride, int):
            stride = (stride, stride)
        self.kind, self.kernel, self.stride = kind, kernel, stride

    def parameters(self):
        return {}

    def param_count(self) -> int:
        return 0

    def mult_adds(self, h: int, w: int) -> int:
        return 0

    def forward(self, x: Tensor) -> Tensor:
        kh, kw = self.kernel
        sh, sw = self.stride
        n, c, h, w = x.shape
        ho, wo = _out_size(h, kh, sh, 0), _out_size(w, kw, sw, 0)
        if ho < 1 or wo < 1:
            raise ShapeError(f"pool: non-positive output size for input {x.shape}")
        cols, _, _ = _im2col(x.data, kh, kw, sh, sw, 0, 0)
        cols = cols.reshape(n, c, kh * kw, ho * wo)
        if self.kind == "max":
            arg = cols.argmax(axis=2)
            out = np.take_along_axis(cols, arg[:, :, None, :], axis=2)[:, :, 0, :]

            def backward(g):
                gcols = np.zeros_like(cols)
                np.put_along_axis(gcols, arg[:, :, None, :], g.reshape(n, c, 1, ho * wo), axis=2)
                return (_col2im(gcols.reshape(n, c * kh * kw, ho * wo), x.shape, kh, kw, sh, sw, 0, 0),)

        else:
            out = cols.mean(axis=2)

            def backward(g):
                gcols = np.broadcast_to(
                    g.reshape(n, c, 1, ho * wo) / (kh * kw), (n, c, kh * kw, ho * wo)
                ).astype(g.dtype)
                return (_col2im(gcols.reshape(n, c * kh * kw, ho * wo), x.shape, kh, kw, sh, sw, 0, 0),)

        return _result(out.reshape(n, c, ho, wo), (x,), backward)

    __call__ = forward


# -- pixel shuffle ----------------------------------------------------------------


def pixel_shuffle(x: Tensor, r: int) -> Tensor:
    """(N, C*r^2, H, W) -> (N, C, H*r, W*r); a bijection on elements."""
    n, c, h, w = x.shape
    if c % (r * r) != 0:
        raise ShapeError(f"pixel_shuffle: channels {c} not divisible by r^2={r * r}")
    co = c // (r * r)
    data = x.data.reshape(n, co, r, r, h, w).transpose(0, 1, 4, 2, 5, 3).reshape(n, co, h * r, w * r)

    def backward(g):
        gi = g.reshape(n, co, h, r, w, r).transpose(0, 1, 3, 5, 2, 4).reshape(x.shape)
        return (gi,)

    return _result(np.ascontiguousarray(data), (x,), backward)


def pixel_unshuffle(x: Tensor, r: int) -> Tensor:
    """Inverse of pixel_shuffle: (N, C, H*r, W*r) -> (N, C*r^2, H, W)."""
    n, c, hr, wr = x.shape
    if hr % r != 0 or wr % r != 0:
        raise ShapeError(f"pixel_unshuffle: spatial {hr}x{wr} not divisible by r={r}")
    h, w = hr // r, wr // r
    data = x.data.reshape(n, c, h, r, w, r).transpose(0, 1, 3, 5, 2, 4).reshape(n, c * r * r, h, w)

    def backward(g):
        gi = g.reshape(n, c, r, r, h, w).transpose(0, 1, 4, 2, 5, 3).reshape(x.shape)
        return (gi,)

    return _result(np.ascontiguousarray(data), (x,), backward)


class PixelShuffle:
    def __init__(self, r: int):
        self.r = r

    def parameters(self):
        return {}

    def param_count(self) -> int:
        return 0

    def forward(self, x: Tensor) -> Tensor:
        return pixel_shuffle(x, self.r)

    __call__ = forward


# -- fixed upsamplers ---------------------------------------------------------------


def upsample_nearest(x: Tensor, r: int) -> Tensor:
    """Each source pixel becomes an r x r block."""
    if r < 1:
        raise ShapeError("upsample factor must be >= 1")
    n, c, h, w = x.shape
    data = np.repeat(np.repeat(x.data, r, axis=2), r, axis=3)

    def backward(g):
        return (g.reshape(n, c, h, r, w, r).sum(axis=(3, 5)),)

    return _result(data, (x,), backward)


def _bilinear_axis_weights(src: int, dst: int, dtype):
    """Half-pixel-center (align_corners=false) source indices and weights."""
    pos = (np.arange(dst, dtype=np.float64) + 0.5) * (src / dst) - 0.5
    pos = np.clip(pos, 0, src - 1)
    i0 = np.floor(pos).astype(np.intp)
    i1 = np.minimum(i0 + 1, src - 1)
    frac = (pos - i0).astype(dtype)
    return i0, i1, frac


def upsample_bilinear(x: Tensor, r: int) -> Tensor:
    """Bilinear interpolation with half-pixel centers."""
    if r < 1:
        raise ShapeError("upsample factor must be >= 1")
    n, c, h, w = x.shape
    h0, h1, fh = _bilinear_axis_weights(h, h * r, x.dtype)
    w0, w1, fw = _bilinear_axis_weights(w, w * r, x.dtype)
    fh_ = fh.reshape(1, 1, -1, 1)
    fw_ = fw.reshape(1, 1, 1, -1)
    # separable: interpolate rows, then columns
    rows = x.data[:, :, h0, :] * (1 - fh_) + x.data[:, :, h1, :] * fh_
    data = rows[:, :, :, w0] * (1 - fw_) + rows[:, :, :, w1] * fw_

    def backward(g):
        grows = np.zeros((n, c, h * r, w), dtype=g.dtype)
        np.add.at(grows, (slice(None), slice(None), slice(None), w0), g * (1 - fw_))
        np.add.at(grows, (slice(None), slice(None), slice(None), w1), g * fw_)
        gx = np.zeros(x.shape, dtype=g.dtype)
        np.add.at(gx, (slice(None), slice(None), h0, slice(None)), grows * (1 - fh_))
        np.add.at(gx, (slice(None), slice(None), h1, slice(None)), grows * fh_)
        return (gx,)

    return _result(data, (x,), backward)
