"""Diffeomorphic image registration with bandlimited geodesic shooting.

The data term is either a patch-wise correlation ratio (suited to images
of different modalities) or the sum of squared differences.
"""

from .errors import (
    DivergenceError,
    MetricUndefinedError,
    NiftiParseError,
    NumericalError,
    RegistrationError,
    StepSizeError,
    StructuralError,
    UnsupportedFormatError,
)
from .evaluation import JacobianHistogram, dice, jacobian_determinant, jacobian_histogram, warp_labels
from .fourier import BandlimitedVelocity, FourierOperator, build_operator, fourier_gradient, lift, project
from .geodesic import GeodesicTrajectory, ShootingConfig, backward_adjoint, integrate_inverse_map, shoot_forward
from .nifti import read_displacement, read_labels, read_volume, write_displacement, write_labels, write_volume
from .optimizer import EnergyRecord, RegistrationConfig, RegistrationResult, energy, energy_gradient, minimize
from .phantom import make_phantom
from .raptor import RaptorConfig, patch_cr, patch_cr_gradient, raptor_gradient, raptor_total
from .ssd import SsdConfig, ssd_gradient, ssd_value
from .volume import DisplacementField, LabelMap, Volume, downsample, interpolate, spatial_gradient, upsample_displacement, warp

__version__ = "0.1.0"
