"""Region-growing oversegmentation on one synthetic frame, rendered as ASCII.

Each printed character is one range-image cell (downsampled in azimuth);
letters cycle through segment ids, '.' is ground/empty.
"""

import numpy as np

from lidarseg.geometry import SensorModel, project
from lidarseg.segmentation import SegmentationParams, segment, segment_centroid
from lidarseg.synth import CorpusSpec, generate_scene, raycast

model = SensorModel()
scene = generate_scene(CorpusSpec(seed=11), frame_seed=11)
cloud = raycast(scene, model, noise_std=0.03, noise_seed=11)
img = project(cloud, model)

params = SegmentationParams()
segs = segment(img, params)
print(f"{len(segs)} segments from {int(img.occupancy.sum())} occupied cells")

sizes = sorted((len(s.cells) for s in segs), reverse=True)
print(f"sizes: largest {sizes[:5]}, smallest {sizes[-3:]}")

label = np.full(img.range_m.shape, -1, dtype=int)
for s in segs:
    label[s.cells[:, 0], s.cells[:, 1]] = s.id

glyphs = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789"
step = max(1, label.shape[1] // 120)
for r in range(0, label.shape[0], 2):
    row = label[r, ::step]
    print("".join("." if v < 0 else glyphs[v % len(glyphs)] for v in row))

for s in segs[:4]:
    print(f"segment {s.id}: {len(s)} cells, centroid cell "
          f"{segment_centroid(s, img)}")
