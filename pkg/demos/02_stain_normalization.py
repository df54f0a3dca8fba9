"""
Colour normalisation of a toy slide: match tissue LAB statistics to a reference
"""

import tempfile
from pathlib import Path

import numpy as np

from ppgl_dispatch import stain
from ppgl_dispatch.cases import StainStats

rng = np.random.default_rng(0)

## Build a 64x64 slide in LAB: a pinkish blob of tissue on a near-white background
yy, xx = np.mgrid[:64, :64]
blob = (yy - 32) ** 2 + (xx - 30) ** 2 < 22 ** 2
lab = np.stack([rng.normal(58, 6, (64, 64)), rng.normal(22, 4, (64, 64)), rng.normal(-6, 4, (64, 64))], -1)
lab[~blob] = (96.0, 0.0, 0.0)
slide = stain.lab_to_rgb(lab)

## Tissue is whatever is darker than L* = 85
mask = stain.tissue_mask(slide)
print("tissue fraction", mask.mean().round(3))
print("source", stain.compute_stain_stats(stain.rgb_to_lab(slide), mask))

## Align to a paler, bluer reference
target = StainStats(mean_l=64.0, mean_a=14.0, mean_b=-12.0, std_l=5.0, std_a=3.5, std_b=3.0)
out = stain.normalize(slide, target, epsilon=0.0)
print("after ", stain.compute_stain_stats(stain.rgb_to_lab(out), mask))

## Background pixels are mapped by the same affine transform, then clamped to white
print("corner pixel", slide[0, 0].round(3), "->", out[0, 0].round(3))

## PNG round trip, as used by the command line
png = Path(tempfile.mkdtemp()) / "normalized.png"
stain.write_png(out, png)
print("wrote", png, stain.read_png(png).shape)
