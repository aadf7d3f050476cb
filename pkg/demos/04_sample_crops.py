"""Extract CNN input crops around segment centroids and print one as ASCII.

Channels: 0 range, 1 intensity, 2 height. The mask shows which cells belong
to the segment itself versus context.
"""

import numpy as np

from lidarseg.geometry import SensorModel, project
from lidarseg.samples import CropParams, extract_frame_samples
from lidarseg.segmentation import SegmentationParams, segment
from lidarseg.synth import CorpusSpec, generate_scene, raycast

model = SensorModel()
scene = generate_scene(CorpusSpec(seed=5), frame_seed=5)
cloud = raycast(scene, model, noise_std=0.03, noise_seed=5)
img = project(cloud, model)
segs = segment(img, SegmentationParams())

p = CropParams()
samples = extract_frame_samples(img, cloud, segs, p)
print(f"{len(samples)} samples of shape {samples[0].data.shape} "
      f"(window {p.window_rows}x{p.window_cols} resized to {p.out_size})")

data = np.stack([s.data for s in samples])
for ch, name in enumerate(("range", "intensity", "height")):
    vals = data[..., ch]
    print(f"channel {ch} ({name}): min {vals.min():.3f} max {vals.max():.3f}")

# biggest segment's crop, range channel, 16 shades
s = max(samples, key=lambda s: s.mask.sum())
shades = " .:-=+*#%@"
crop = s.data[::4, ::2, 0]
lo, hi = crop.min(), crop.max()
for row in crop:
    t = (row - lo) / (hi - lo + 1e-9)
    print("".join(shades[int(v * (len(shades) - 1))] for v in t))
print(f"mask covers {int(s.mask.sum())} of {s.mask.size} cells")
