"""Edge-based untextured object detection and 6-DoF localization.

The pipeline: extract edgels from an image (or simulate them), fold them
into a joint location/orientation distance tensor, scan pre-computed raster
template banks for candidate poses, refine candidates by direct non-linear
minimization over the tensor, and, when one view is not enough, plan the
next camera placement by maximizing the mutual information between a
particle belief over object pose and sampled scene-realization observations.
"""

__version__ = "0.1.0"

from .dcd import DcdTensor, angular_distance_pi, build_dcd, gradient, lookup
from .detection import ObjectCandidate, average_dcd, project_template, scan_candidates
from .edges import (
    EdgelSet,
    GradientDirectionImage,
    detect_edgelets,
    gradient_direction_image,
    load_gray,
)
from .errors import ConfigError, DataError, EdgeposeError
from .geometry import (
    CameraIntrinsics,
    Pose,
    pose_error,
    project,
    projection_jacobian,
    rotation_from_axis_angle,
    transform_point,
)
from .mesh import TriMesh, WireEdge, extract_wire_edges, load_stl, save_stl
from .registration import (
    RegistrationOptions,
    RegistrationProblem,
    RegistrationResult,
    RegistrationView,
    d2co_register,
    evaluate_cost,
    score,
    single_view_problem,
)
from .template import (
    RasterTemplate,
    TemplateBank,
    build_template_bank,
    load_bank,
    make_viewpoint_grid,
    save_bank,
    visible_template,
)
