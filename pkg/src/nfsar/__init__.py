"""Near-field SAR toolkit: multistatic echo simulation over irregular
scanning geometries, plane-projection compensated FFT reconstruction, an
exact matched-filter reference, and a from-scratch transformer
super-resolution network with its training pipeline."""

__version__ = "0.1.0"

from .echo import EchoCube, RadarConfig, add_awgn, simulate_echo
from .errors import SingularityError, ValidationError
from .geometry import (
    AperturePose,
    ApertureSpec,
    VirtualElement,
    build_aperture,
    perturb_positions,
    virtual_elements,
)
from .metrics import EvalReport, psnr, rmse, time_op
from .recon import (
    bpa_reconstruct,
    empm_compensate,
    empm_reconstruct,
    grid_virtual_samples,
    rma_baseline,
    rma_reconstruct,
)
from .scene import ImageGrid, ReflectivityImage, Scene, SceneSpec, Shape, point_cloud, random_scene, rasterize
from .srvit import ModelConfig, build_model, l1_loss, srvit_forward
from .train import DatasetGenConfig, DatasetRecord, TrainConfig, evaluate, generate_dataset, read_dataset, train_model
