"""Reference MATLAB-style bicubic resizes, computed with basicsr's port of imresize.

Run with basicsr/utils/matlab_functions.py importable (the module only needs
numpy and torch). Prints JSON consumed by the resize tests.
"""
import json
import pathlib
import sys

import numpy as np
from PIL import Image

sys.path.insert(0, sys.argv[1] if len(sys.argv) > 1 else ".")
from matlab_functions import imresize  # noqa: E402

here = pathlib.Path(__file__).resolve().parent
img = np.asarray(Image.open(here.parent / "fixtures" / "natural" / "astronaut.png").convert("RGB"))
crop = img[40:88, 60:108].astype(np.float64) / 255.0
lr = imresize(crop, 1 / 4)
sr = imresize(lr, 4)
odd = img[10:33, 5:42].astype(np.float64) / 255.0
odd_down = imresize(odd, 1 / 4)
print(json.dumps({
    "crop": [40, 60, 48, 48],
    "lr": np.asarray(lr).round(12).tolist(),
    "sr_samples": [[y, x, c, float(sr[y, x, c])] for y, x, c in
                   [(0, 0, 0), (0, 47, 1), (47, 0, 2), (47, 47, 0), (13, 29, 1), (30, 5, 2), (21, 21, 0)]],
    "sr_mean": float(np.mean(sr)),
    "odd_shape": list(odd_down.shape),
    "odd_mean": float(np.mean(odd_down)),
}))
