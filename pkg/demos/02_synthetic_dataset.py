"""Build a synthetic reach-then-manipulate dataset and inspect it.

Generates parametric bi-hand trajectories with waypoints at the exact stage
boundaries, writes/reads the JSONL format, computes dataset statistics, scene
splits, and structured QA records.
"""

import json

from handflow.dataio import (
    SplitSpec,
    SyntheticSpec,
    compute_manifest,
    dataset_stats,
    generate_qa,
    generate_synthetic,
    intent_embedding,
    make_splits,
    qa_category_proportions,
    read_samples,
    write_samples,
)
from handflow.trajectory import validate_sample

samples = generate_synthetic(SyntheticSpec(n_scenes=40, goals_per_scene=2), seed=7)
print(f"generated {len(samples)} samples from 40 two-goal scenes")
bad = [v for s in samples for v in validate_sample(s)]
print(f"validation violations: {len(bad)}")

s = samples[0]
print(f"\nsample {s.sample_id}: intent={s.intent!r}")
print(f"  action phrase: {s.action_phrase!r}")
print(f"  past {len(s.past)} states, future {len(s.future)} states")
print(f"  CONTACT at t={s.waypoints.contact.timestamp}s, END at t={s.waypoints.end.timestamp}s")
print(f"  stages: approach {s.stages.approach}, manipulation {s.stages.manipulation}")

write_samples(samples, "/tmp/handflow_demo_dataset.jsonl")
loaded, violations = read_samples("/tmp/handflow_demo_dataset.jsonl")
print(f"\nround-trip: {len(loaded)} samples back, {len(violations)} violations")

stats = dataset_stats(samples)
print("\ndataset statistics:")
for key in ("frac_duration_gt", "frac_displacement_gt", "frac_rotation_gt"):
    print(f"  {key}: {stats[key]:.3f}")

splits = make_splits([s.scene_id for s in samples], SplitSpec(0.64, 0.31, 0.05), seed=0)
print("\nscene splits:", {k: len(v) for k, v in splits.items()})
manifest = compute_manifest([s for s in samples if s.scene_id in set(splits["finetune"])], "demo")
print("position mean:", manifest.pos_mean.round(3), "std:", manifest.pos_std.round(3))

emb_a = intent_embedding("grab the red cup")
emb_b = intent_embedding("grab the blue cup")
emb_c = intent_embedding("open the drawer")
print(f"\nintent embedding cosines: shared-verb {emb_a @ emb_b:.3f}, disjoint {emb_a @ emb_c:.3f}")

qa = generate_qa(samples[0])
print(f"\n{len(qa)} QA records for one sample; proportions "
      f"{json.dumps({k: round(v, 2) for k, v in qa_category_proportions(qa).items()})}")
for rec in qa[:4]:
    print(f"  [{rec.category}] {rec.question!r} -> {rec.answer!r}")
