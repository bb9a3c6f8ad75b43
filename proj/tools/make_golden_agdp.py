#!/usr/bin/env python3
"""Writes the golden AGDP fixtures and their reference outputs.

Independent of the C++ reader: layout and forward pass are reimplemented
here with numpy. Usage: make_golden_agdp.py OUTPUT_DIR
"""
import struct
import sys
import zlib
from pathlib import Path

import numpy as np

FC, CONV, LRELU, BN, SIGMOID, UPSAMPLE = 1, 2, 3, 4, 5, 6


def f32(a):
    return np.asarray(a, dtype="<f4").tobytes()


def encode(input_shape, layers, scale_cap=None):
    out = bytearray(b"AGDP")
    out += struct.pack("<II", 1, len(layers))
    out += struct.pack("<III", *input_shape)
    out += struct.pack("<B", 1 if scale_cap is not None else 0)
    if scale_cap is not None:
        out += struct.pack("<d", scale_cap)
    for kind, p in layers:
        out += struct.pack("<B", kind)
        if kind == FC:
            w, b = p["w"], p["b"]
            out += struct.pack("<II", w.shape[1], w.shape[0]) + f32(w) + f32(b)
        elif kind == CONV:
            w, b = p["w"], p["b"]
            o, i, k, _ = w.shape
            out += struct.pack("<IIII", i, o, k, p["pad"]) + f32(w) + f32(b)
        elif kind == LRELU:
            out += struct.pack("<d", p["slope"])
        elif kind == BN:
            out += struct.pack("<Id", len(p["gamma"]), p["eps"])
            for key in ("gamma", "beta", "mean", "var"):
                out += f32(p[key])
        elif kind == UPSAMPLE:
            out += struct.pack("<I", p["factor"])
    out += struct.pack("<I", zlib.crc32(bytes(out)) & 0xFFFFFFFF)
    return bytes(out)


def conv2d(x, w, b, pad):
    c, h, wd = x.shape
    o, _, k, _ = w.shape
    xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad)))
    oh, ow = h + 2 * pad - k + 1, wd + 2 * pad - k + 1
    y = np.empty((o, oh, ow))
    for i in range(oh):
        for j in range(ow):
            patch = xp[:, i:i + k, j:j + k]
            y[:, i, j] = np.tensordot(w, patch, axes=([1, 2, 3], [0, 1, 2])) + b
    return y


def forward(input_shape, layers, z, scale_cap=None):
    latent = z[:-1] if scale_cap is not None else z
    x = latent.reshape(input_shape).astype(np.float64)
    for kind, p in layers:
        if kind == FC:
            x = (p["w"].astype(np.float64) @ x.reshape(-1) + p["b"]).reshape(-1, 1, 1)
        elif kind == CONV:
            x = conv2d(x, p["w"].astype(np.float64), p["b"].astype(np.float64), p["pad"])
        elif kind == LRELU:
            x = np.where(x > 0, x, p["slope"] * x)
        elif kind == BN:
            g, bt, m, v = (p[k].astype(np.float64)[:, None, None] for k in ("gamma", "beta", "mean", "var"))
            x = g * (x - m) / np.sqrt(v + p["eps"]) + bt
        elif kind == SIGMOID:
            x = 1.0 / (1.0 + np.exp(-x))
        elif kind == UPSAMPLE:
            f = p["factor"]
            x = x.repeat(f, axis=1).repeat(f, axis=2)
    out = x.reshape(-1)
    if scale_cap is not None:
        from math import erfc, sqrt
        out = scale_cap * 0.5 * erfc(-z[-1] / sqrt(2.0)) * out
    return out


def encode_arr1(a):
    a = np.ascontiguousarray(a, dtype="<f8")
    out = bytearray(b"ARR1") + struct.pack("<BB", 0, a.ndim)
    out += struct.pack("<%dQ" % a.ndim, *a.shape) + a.tobytes()
    out += struct.pack("<I", zlib.crc32(bytes(out)) & 0xFFFFFFFF)
    return bytes(out)


def rnd(rng, *shape, scale=0.5):
    return rng.uniform(-scale, scale, size=shape).astype(np.float32)


def conv_fixture(rng):
    layers = [
        (CONV, {"w": rnd(rng, 4, 3, 4, 4), "b": rnd(rng, 4, scale=0.1), "pad": 3}),
        (BN, {"gamma": 1 + rnd(rng, 4, scale=0.2), "beta": rnd(rng, 4, scale=0.1),
              "mean": rnd(rng, 4, scale=0.1), "var": 1 + rnd(rng, 4, scale=0.2), "eps": 1e-5}),
        (LRELU, {"slope": 0.2}),
        (UPSAMPLE, {"factor": 2}),
        (CONV, {"w": rnd(rng, 2, 4, 3, 3), "b": rnd(rng, 2, scale=0.1), "pad": 1}),
        (LRELU, {"slope": 0.2}),
        (CONV, {"w": rnd(rng, 1, 2, 1, 1), "b": rnd(rng, 1, scale=0.1), "pad": 0}),
        (SIGMOID, {}),
    ]
    return (3, 1, 1), layers, 0.2


def fc_fixture(rng):
    layers = [
        (FC, {"w": rnd(rng, 16, 5), "b": rnd(rng, 16, scale=0.1)}),
        (LRELU, {"slope": 0.2}),
        (FC, {"w": rnd(rng, 12, 16), "b": rnd(rng, 12, scale=0.1)}),
        (BN, {"gamma": 1 + rnd(rng, 12, scale=0.2), "beta": rnd(rng, 12, scale=0.1),
              "mean": rnd(rng, 12, scale=0.1), "var": 1 + rnd(rng, 12, scale=0.2), "eps": 1e-5}),
        (LRELU, {"slope": 0.2}),
        (FC, {"w": rnd(rng, 10, 12), "b": rnd(rng, 10, scale=0.1)}),
        (SIGMOID, {}),
    ]
    return (5, 1, 1), layers, None


def main():
    out_dir = Path(sys.argv[1] if len(sys.argv) > 1 else ".")
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(20240607)
    for name, make in (("golden_conv", conv_fixture), ("golden_fc", fc_fixture)):
        shape, layers, cap = make(rng)
        (out_dir / f"{name}.agdp").write_bytes(encode(shape, layers, cap))
        d = int(np.prod(shape)) + (1 if cap is not None else 0)
        latents = rng.standard_normal((10, d))
        outputs = np.stack([forward(shape, layers, z, cap) for z in latents])
        (out_dir / f"{name}_latents.arr").write_bytes(encode_arr1(latents))
        (out_dir / f"{name}_outputs.arr").write_bytes(encode_arr1(outputs))


if __name__ == "__main__":
    main()
