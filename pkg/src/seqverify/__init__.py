"""Sequential multi-frame verification of loop-closure candidates."""

from .density import (
    H0,
    H1,
    DensityPair,
    DistanceSample,
    fit_density_pair,
    kl_divergence,
    llr,
    sample_distances,
)
from .stream import CandidateSet, DescriptorTable, DistanceStream, build_stream, retrieve
from .sprt import (
    ACCEPT,
    REJECT,
    LoopSegment,
    SprtConfig,
    SprtVerdict,
    longest_hit_run,
    max_subsegment,
    thresholds,
    verify,
)
from .conflict import SegmentPool, WindowedResolver, resolve, segments_conflict
from .metrics import (
    EvalReport,
    GroundTruth,
    GtParams,
    decision_tier,
    khit_pr,
    label_ground_truth,
    pairwise_pr,
    segments_from_pairs,
)
from .synth import (
    SyntheticWorld,
    WorldConfig,
    generate_scan_descriptors,
    generate_world,
    sample_distance_datasets,
)
from .pgo import (
    LoopNoise,
    PoseGraph2,
    TrajectoryError,
    ate_rpe,
    build_graph,
    load_g2o,
    optimize,
    save_g2o,
)

__version__ = "0.1.0"
