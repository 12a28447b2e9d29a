"""starvox: star-convex polyhedron geometry for 3D instance detection.

The non-neural core of shape-based nucleus detection in volumetric images:
ray-system generation, polyhedron math, ground-truth encoding, reference
losses, bounds-cascade non-maximum suppression, instance rendering, and
matched-accuracy evaluation.
"""

from ._version import __version__
from .encode import (
    GridSpec,
    object_probability,
    radial_distances,
    reconstruct_labels,
    subsample,
)
from .losses import LossWeights, loss_dist, loss_obj, loss_total
from .matching import IouMatrix, MatchReport, TauReport, accuracy_curve, hungarian_match, iou_matrix
from .nms import (
    CandidateSet,
    NmsConfig,
    NmsStats,
    extract_candidates,
    load_polyset,
    overlap_decision,
    random_candidates,
    run_nms,
    save_polyset,
)
from .polyhedron import (
    ConvexPolytope,
    StarPolyhedron,
    bounding_radius,
    contains,
    convex_hull,
    convex_intersection_volume,
    exact_intersection_volume,
    inscribed_radius,
    kernel,
    rasterize,
    sphere_intersection_volume,
    vertices,
    volume,
)
from .rays import (
    Anisotropy,
    RaySystem,
    equidistant_grid_for,
    equidistant_rays,
    estimate_anisotropy,
    fibonacci_rays,
    median_extents,
    ray_system_from_vectors,
)
from .synth import SceneSpec, generate
from .volumes import (
    DistVolume,
    LabelVolume,
    ScalarVolume,
    VolumeMeta,
    dist_volume,
    label_volume,
    read_volume,
    scalar_volume,
    write_volume,
)
