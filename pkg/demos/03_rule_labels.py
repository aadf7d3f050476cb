"""Auto-label segments with the width/height decision rules and compare the
result against the simulator's ground truth."""

from collections import Counter

from lidarseg.geometry import SensorModel, project
from lidarseg.labels import FINE_CLASSES, fine_id_to_rule_id, RULE_CLASSES
from lidarseg.rules import classify_rules, compute_features
from lidarseg.segmentation import SegmentationParams, segment
from lidarseg.synth import CorpusSpec, generate_scene, majority_vote_labels, raycast

model = SensorModel()
spec = CorpusSpec(seed=21)

agree = 0
total = 0
confusions: Counter = Counter()
for frame in range(6):
    scene = generate_scene(spec, frame_seed=frame)
    cloud = raycast(scene, model, noise_std=spec.noise_std, noise_seed=frame)
    img = project(cloud, model)
    segs = segment(img, SegmentationParams())
    truth = majority_vote_labels(img, cloud, segs)
    for s, fine_id in zip(segs, truth):
        f = compute_features(s, cloud, img)
        rule_name = classify_rules(f)
        true_rule = RULE_CLASSES[fine_id_to_rule_id(int(fine_id))]
        total += 1
        if rule_name == true_rule:
            agree += 1
        else:
            confusions[(true_rule, rule_name)] += 1
        if frame == 0 and s.id < 8:
            print(f"seg {s.id:3d}  w={f.width_m:5.2f} h={f.height_m:5.2f}  "
                  f"rules={rule_name:8s} truth={FINE_CLASSES[fine_id]}")

print(f"\nrules match folded ground truth on {agree}/{total} segments "
      f"({100 * agree / total:.1f}%)")
print("most common confusions (truth -> rules):")
for (t, p), n in confusions.most_common(5):
    print(f"  {t:8s} -> {p:8s} {n}")
