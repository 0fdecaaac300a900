"""
How much does a range measurement tell us about where we are?
==============================================================

A 4 m x 4 m room with four ceiling anchors near the corners.  We compare
three views of the same placement: Monte Carlo mutual information, the
position error bound, and the RMSE of an actual multilateration solver fed
with the very same measurements.
"""
import math
import warnings

import numpy as np

from mineloc import NoiseModel, ReferencePlacement, Scene, mc_mi, peb_map, rmse_map, sample_measurements, square_room

room = square_room()
anchors = ReferencePlacement.from_xy([[0.5, 0.5], [3.5, 0.5], [0.5, 3.5], [3.5, 3.5]], room.ref_height)
scene = Scene.build(room, anchors)
print(f"{scene.K} grid cells; every cell sees {scene.vis.counts.min()} anchors")
print(f"upper bound on MI: log K = {math.log(scene.K):.4f} nats\n")

# The same noise level, three shapes.  Uniform noise has bounded support, so
# the posterior can rule cells out completely and MI comes out higher.
for kind in ("gaussian", "uniform_zero_mean", "uniform_biased"):
    noise = NoiseModel(kind, 0.2)
    ms = sample_measurements(scene, noise, D=300, seed=0)
    mi = mc_mi(scene, noise, measurements=ms)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        rm = rmse_map(scene, ms)
    print(f"{kind:18s}  MI {mi.value:.3f} nats ({mi.bits:.2f} bits)   global RMSE {rm.global_rmse:.3f} m")

# The bound depends only on geometry and sigma_r, not on the noise shape.
pm = peb_map(scene, 0.2)
print(f"\nPEB over the room: {np.nanmin(pm.values):.3f} .. {np.nanmax(pm.values):.3f} m, mean {pm.mean:.3f} m")

# Where is MI highest?  Per-cell contributions c_x average to the total.
mi = mc_mi(scene, NoiseModel("gaussian", 0.2), D=300, seed=0)
best = np.argsort(mi.per_cell)[-3:]
print("cells with the most information:", [tuple(scene.grid.xy[i].round(1).tolist()) for i in best])
