"""leap3d: 3D semantic pseudo-labels from 2D soft labels and LiDAR.

Per-pixel class probabilities are painted onto projected points, fused
over time into a sparse voxel grid with a Bayesian update, smoothed with
distance-weighted k-nearest averaging, and read back as per-point labels.
"""

from ._kernels import BACKEND as kernel_backend
from .errors import (DimensionError, FormatError, GeometryError, LeapError, ParameterError,
                     TaxonomyError, UndefinedMetricError, ZeroMassError)
from .geometry import CameraIntrinsics, PointCloud, Projection, RigidTransform, project
from .label2d import (MaskedRegion, PixelProbMap, RegionProposal, filter_regions, rasterize,
                      region_class_probs)
from .painting import PaintedCloud, depth_cluster_filter, paint, paint_cloud
from .taxonomy import (IGNORE_LABEL, ClassTaxonomy, PromptMap, clamp_floor, load_taxonomy,
                       normalize)
from .voxelgrid import (SparseVoxelGrid, VoxelRecord, apply_temperature, bayes_update,
                        voxel_key, voxel_keys)

__version__ = "0.1.0"
