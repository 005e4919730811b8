"""How pose error grows with smooth geometric distortion of the second frame.

For a handful of scenes, distorts the flow pair with a smooth random warp
whose 95th-percentile magnitude is delta_g pixels and reports the median
pose error per level.

    python demos/noise_degradation.py [n_seeds]
"""

import sys

import numpy as np

from geovo.pipeline import PipelineConfig, solve_dense
from geovo.se3 import log_map
from geovo.synthetic import SceneSpec, distort_second_frame, generate_dense_scene

LEVELS = (0.0, 1.0, 2.0, 3.0)


def main(n_seeds=10):
    errors = np.zeros((n_seeds, len(LEVELS)))
    for s in range(n_seeds):
        scene = generate_dense_scene(SceneSpec(seed=s))
        for j, dg in enumerate(LEVELS):
            fwd, bwd = distort_second_frame(scene.flow_fwd, scene.flow_bwd, dg, seed=1000 + s)
            pose = solve_dense(fwd, bwd, scene.inv_depth, scene.intrinsics, PipelineConfig(seed=s)).pose
            errors[s, j] = np.linalg.norm(log_map(pose.inverse() @ scene.pose))
    print("delta_g  median pose error  max")
    for dg, col in zip(LEVELS, errors.T):
        print(f"{dg:7.1f}  {np.median(col):17.3e}  {col.max():.3e}")


if __name__ == "__main__":
    main(int(sys.argv[1]) if len(sys.argv) > 1 else 10)
