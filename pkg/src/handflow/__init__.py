"""handflow: stage-aware 6-DoF bi-hand trajectory generation with flow matching.

Library layout:
    geometry    rotation / projection algebra (6D <-> matrix, geodesics, re-anchoring)
    trajectory  bi-hand state, waypoint, stage and sample data model
    metrics     ADE / FDE / DTW / rotation error, best-of-K, waypoint errors
    losses      differentiable training objectives
    nn          autodiff tensors, transformer blocks, AdamW, checkpoints
    flowmatch   the flow-matching motion model (encoder-decoder transformer)
    tokens      waypoint/semantics providers and the rule-based stage annotator
    dataio      dataset serialization, splits, statistics, synthetic data, QA
    harness     train / eval / report orchestration behind the CLI
"""

__version__ = "0.1.0"
