"""
Detecting an object in a cluttered scene
========================================

A single view sees about half of the object, surrounded by twice as many
clutter points. The best voted correspondence gives a pose through its two
reference frames; ICP refines it and a coverage check confirms it.
"""

import numpy as np

from corrvote import DetectionParams, detect, estimate_normals, estimate_resolution, make_blob, make_scene
from corrvote.synthetic import VIEWPOINT

model = estimate_normals(make_blob(10000, seed=0), 0.01)
scene, poses = make_scene(shape_seed=0, seed=3)
scene = estimate_normals(scene, 0.01, viewpoint=VIEWPOINT)
res = estimate_resolution(scene)
print(f"scene: {len(scene)} points, resolution {res * 1000:.2f} mm")

for d in detect(model, scene, DetectionParams()):
    dt = np.linalg.norm(d.pose.translation - poses[0].translation)
    cos = (np.trace(d.pose.rotation.T @ poses[0].rotation) - 1) / 2
    print(f"hypothesis rank {d.rank}: coverage {d.coverage:.2f}, accepted {d.accepted}, "
          f"translation error {dt / res:.2f} res, rotation error {np.degrees(np.arccos(min(1, cos))):.2f} deg")

# the same clutter without the object: nothing should be accepted
clutter, _ = make_scene(shape_seed=0, seed=3, include_object=False)
clutter = estimate_normals(clutter, 0.01, viewpoint=VIEWPOINT)
print("clutter only:", [(round(d.coverage, 3), d.accepted) for d in detect(model, clutter, DetectionParams())])
