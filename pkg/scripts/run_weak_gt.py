"""Synthetic scenes through weak ground truth and back out of the decoder.

    python3 scripts/run_weak_gt.py --faces 1 5 20 --seed 100
"""

import argparse
import time

import numpy as np

from faceretarget import grid_codec as gc
from faceretarget import morphable_model as mm
from faceretarget import scene as sc
from faceretarget.detection_eval import average_precision


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--faces", type=int, nargs="+", default=[1, 5, 20])
    parser.add_argument("--seed", type=int, default=100)
    parser.add_argument("--threshold", type=float, default=0.5)
    args = parser.parse_args()

    codec = gc.GridCodec(mm.generate_synthetic_tensor(42), 288.0)
    print(f"{'faces':>5} {'decoded':>7} {'worst fit':>10} {'worst lm':>10} {'AP':>5} {'time':>7}")
    for n in args.faces:
        start = time.perf_counter()
        scene = sc.synth_scene(n, args.seed + n, codec=codec)
        weak = sc.weak_gt_generate([f.landmarks for f in scene.faces], codec=codec)
        boxes = codec.decode_grid(weak.grid, args.threshold)
        worst = 0.0
        for f in scene.faces:
            worst = max(worst, min(np.sqrt(np.mean(np.sum((b.landmarks - f.landmarks) ** 2, axis=1)))
                                   for b in boxes))
        preds = [b.eval_box(codec.cell_px) for b in boxes]
        ap_all = average_precision(preds, [f.box for f in scene.faces])["AP"]
        elapsed = time.perf_counter() - start
        print(f"{n:>5} {len(boxes):>7} {max(weak.rmse):>10.1e} {worst:>10.1e} {ap_all:>5.2f} {elapsed:>6.2f}s")


if __name__ == "__main__":
    main()
