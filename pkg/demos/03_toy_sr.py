#!/usr/bin/env python3
"""Small end-to-end run: train, then super-resolve with each guidance mix.

Uses a reduced version of configs/toy_sr.yaml so it finishes in a
couple of minutes; run ``irguide train``/``irguide sr`` with the full config for
the real numbers.
"""

import sys
import tempfile

from irguide import experiments as E
from irguide.config import load_config

cfg = load_config(sys.argv[1] if len(sys.argv) > 1 else "configs/toy_sr.yaml")
cfg = cfg.model_copy(update={
    "train": cfg.train.model_copy(update={"iterations": 300}),
    "dataset": cfg.dataset.model_copy(update={"n_train": 8, "n_test": 4}),
})
work = tempfile.mkdtemp(prefix="irguide-demo-")
ckpt = E.run_train(cfg, out=work + "/train")["checkpoint"]

mixes = [(), ("visual",), ("perceptual",), ("visual", "perceptual"),
         ("visual", "perceptual", "data_fidelity")]
for kinds in mixes:
    c = cfg.model_copy(update={"guidance": [g for g in cfg.guidance if g.type in kinds]})
    rows = E.run_sr(c, ckpt, out=f"{work}/sr_{'_'.join(kinds) or 'none'}")["rows"]
    for r in rows:
        if r["image"] == "mean" and (r["method"] != "bicubic" or not kinds):
            print(f"{r['method']:<34s} psnr {r['psnr']:6.2f}  ssim {r['ssim']:.3f}  visual {r['visual_loss']:.3f}")
print("outputs in", work)
