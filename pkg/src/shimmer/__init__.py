"""Event-guided atmospheric-turbulence imaging toolkit.

Simulates turbulent long exposures and the event streams a neuromorphic
sensor would emit alongside them, then restores the scene in two classical
steps: event-integral deblurring and variance-guided tilt removal.
"""

from ._kernels import BACKEND, backend
from ._version import __version__
from .errors import (
    ArgumentError,
    FloorError,
    FormatError,
    NumericError,
    ShimmerError,
    SingularityError,
    ValidationError,
)
from .events import (
    Event,
    EventStream,
    ThresholdModel,
    read_events,
    slice_events,
    write_events,
)
from .evsim import SimulatedEvents, event_count_bound, simulate_events
from .formation import (
    AccumSequence,
    BlurMap,
    VarianceMap,
    accumulate,
    blur_map,
    edi_reconstruct,
    event_integral,
    latent_at,
    raw_variance,
    variance_map,
)
from .images import (
    FrameSequence,
    Image,
    load_flow_pfm,
    read_image,
    save_flow_pfm,
    write_image,
)
from .metrics import psnr, ssim
from .restore import (
    FlowSolverParams,
    RestorationReport,
    RestoreConfig,
    deblur,
    estimate_tilt_flow,
    reference_frame,
    restore_pipeline,
    warp_refine,
)
from .rng import Rng
from .turbsim import (
    TiltFlow,
    TurbulenceParams,
    apply_blur,
    apply_tilt,
    gen_tilt_field,
    gen_tilt_sequence,
    render_turbulent,
)
from .dataset import (
    DatasetManifest,
    EvalReport,
    GenConfig,
    gen_dataset,
    load_manifest,
    make_clean_card,
    run_eval,
)

__all__ = [
    "__version__",
    "BACKEND",
    "backend",
    "ShimmerError",
    "ValidationError",
    "ArgumentError",
    "FormatError",
    "NumericError",
    "SingularityError",
    "FloorError",
    "Event",
    "EventStream",
    "ThresholdModel",
    "read_events",
    "write_events",
    "slice_events",
    "Image",
    "FrameSequence",
    "read_image",
    "write_image",
    "save_flow_pfm",
    "load_flow_pfm",
    "Rng",
    "TiltFlow",
    "TurbulenceParams",
    "gen_tilt_field",
    "gen_tilt_sequence",
    "apply_tilt",
    "apply_blur",
    "render_turbulent",
    "SimulatedEvents",
    "simulate_events",
    "event_count_bound",
    "BlurMap",
    "VarianceMap",
    "AccumSequence",
    "event_integral",
    "blur_map",
    "edi_reconstruct",
    "latent_at",
    "accumulate",
    "raw_variance",
    "variance_map",
    "FlowSolverParams",
    "RestoreConfig",
    "RestorationReport",
    "deblur",
    "reference_frame",
    "estimate_tilt_flow",
    "warp_refine",
    "restore_pipeline",
    "psnr",
    "ssim",
    "DatasetManifest",
    "GenConfig",
    "EvalReport",
    "gen_dataset",
    "load_manifest",
    "run_eval",
    "make_clean_card",
]
