"""Train the desk-size matcher briefly and compare it against ICL.

    python demos/train_and_compare.py [epochs]

Twenty epochs on 200 scenes take about a minute on one core and already
separate the two methods at 30 degrees of initial misalignment.
"""
import sys
import time

import numpy as np
import torch

from linereg import PoseRanges, RunConfig, create_model, evaluate_scene, generate_scene, train


def main(epochs=20):
    torch.set_num_threads(1)
    cfg = RunConfig.desk(epochs=epochs)
    scenes = [generate_scene(11, i) for i in range(200)]
    model = create_model(cfg)
    t0 = time.perf_counter()

    def progress(stats, *_):
        print(f"epoch {stats.epoch:3d}  loss {stats.mean_loss:.4f}  precision@|gt| {stats.precision:.3f}", flush=True)

    train(model, scenes, cfg, on_epoch=progress)
    print(f"trained in {time.perf_counter() - t0:.0f} s")
    model.eval()

    held_out = [generate_scene(13, i, pose_ranges=PoseRanges((0, 31.4), (-2, 2))) for i in range(30)]
    for method in ("net", "icl"):
        errs = [evaluate_scene(method, sc, str(i), cfg, model).rotation_error for i, sc in enumerate(held_out)]
        q1, med, q3 = np.percentile(errs, [25, 50, 75])
        print(f"{method:>4}: rotation error quartiles {q1:.3f} / {med:.3f} / {q3:.3f} deg")


if __name__ == "__main__":
    main(int(sys.argv[1]) if len(sys.argv) > 1 else 20)
