#!/usr/bin/env python3
# SPDX-License-Identifier: Apache-2.0
"""Regenerate the small synthetic infrared/visible pairs in data/samples.

The scenes are procedural: warm blobs over a cool background for the
infrared channel, and a textured, coloured version of the same layout for
the visible channel. Output is deterministic for a given seed.
"""
import argparse
import pathlib

import numpy as np
from PIL import Image


def scene(rng, size):
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    ir = 0.15 + 0.1 * (yy / size)
    vi = np.zeros((size, size, 3))
    sky = np.array([0.45, 0.55, 0.75])
    ground = np.array([0.35, 0.4, 0.25])
    horizon = size * rng.uniform(0.35, 0.6)
    mask = (yy < horizon)[..., None]
    vi += mask * sky + (~mask) * ground
    # ground texture
    freq = rng.uniform(0.3, 0.8)
    vi += (~mask) * (0.08 * np.sin(freq * xx + 0.5 * yy))[..., None]
    for _ in range(rng.integers(2, 5)):
        cy, cx = rng.uniform(horizon, size - 8), rng.uniform(8, size - 8)
        r = rng.uniform(4, 10)
        d2 = (yy - cy) ** 2 + (xx - cx) ** 2
        ir += rng.uniform(0.4, 0.7) * np.exp(-d2 / (2 * r * r))
        body = d2 < r * r
        vi[body] = rng.uniform(0.1, 0.6, size=3)
    # a building edge visible in both modalities
    x0 = int(rng.uniform(0.1, 0.5) * size)
    w = int(rng.uniform(0.15, 0.3) * size)
    top = int(horizon - rng.uniform(10, 25))
    vi[top:int(horizon), x0:x0 + w] = [0.6, 0.6, 0.62]
    ir[top:int(horizon), x0:x0 + w] += 0.1
    vi += rng.normal(0, 0.01, size=vi.shape)
    ir += rng.normal(0, 0.01, size=ir.shape)
    return np.clip(ir, 0, 1), np.clip(vi, 0, 1)


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default=str(pathlib.Path(__file__).resolve().parent.parent / "data" / "samples"))
    ap.add_argument("--count", type=int, default=3)
    ap.add_argument("--size", type=int, default=96)
    ap.add_argument("--seed", type=int, default=2024)
    args = ap.parse_args()

    rng = np.random.default_rng(args.seed)
    out = pathlib.Path(args.out)
    (out / "ir").mkdir(parents=True, exist_ok=True)
    (out / "vi").mkdir(parents=True, exist_ok=True)
    for i in range(args.count):
        ir, vi = scene(rng, args.size)
        name = f"scene{i + 1:02d}.png"
        Image.fromarray(np.round(ir * 255).astype(np.uint8), mode="L").save(out / "ir" / name)
        Image.fromarray(np.round(vi * 255).astype(np.uint8), mode="RGB").save(out / "vi" / name)


if __name__ == "__main__":
    main()
