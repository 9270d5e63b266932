"""Mask-guided pixel-pruned deblurring network (inference only)."""
from .deform import DeformDWSpec, deform_dwconv
from .errors import ConfigError, FormatError, MissingWeightError, ShapeError
from .ledger import FlopLedger, flop_report
from .losses import LossWeights, forward_warp, mask_loss, reblur_loss, recon_loss, tv_loss
from .mask import BlurMask, gumbel_mask, predict_probs, threshold_mask
from .motion import DisplacementPair, TrajectoryField, build_deform_offsets, interpolate_quadratic
from .network import DeblurNet, NetworkConfig, analytic_ledger, forward, init_weights
from .pruned import pruned_forward, reparameterize
from .tensor import ConvSpec, conv2d, unfold3
from .weights import WeightStore, load_weights, save_weights

__version__ = "0.1.0"
