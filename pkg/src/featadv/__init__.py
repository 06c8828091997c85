"""Feature adversaries on convolutional networks.

Generate images that stay within a small pixel budget of a source while their
internal representation at a chosen layer moves close to a different guide
image, then quantify the effect with distance, rank, manifold, angular, and
sparsity statistics, and invert representations back to images.
"""

from .adversary import (AdvConfig, AdvResult, feat_fgrad, feature_linear,
                        feature_opt, label_fgrad, label_opt)
from .analysis import (AngularReport, DistanceReport, ManifoldReport,
                       NeighborIndex, NeighborSets, RankReport, SparsityReport,
                       angular_consistency, build_index, distance_ratios,
                       neighbor_sets, ppca_delta_loglik, rank_percentile,
                       rank_report, sparsity_stats)
from .corpus import Corpus, generate_corpus, load_corpus, save_corpus
from .exceptions import (DegenerateInputError, FeatAdvError, FormatError,
                         NoAdversaryError, NumericError, RangeError,
                         ShapeError, SpecError, VersionError)
from .experiment import ExperimentPlan, run_experiment, sample_pairs
from .inversion import InversionConfig, invert_representation
from .io_formats import (load_ppm, load_tensor, save_ppm, save_tensor,
                         tensor_bytes, tensor_from_bytes)
from .network import (ActivationTrace, Network, NetworkSpec, classify,
                      feature_distance_grad, forward_trace, init_network,
                      load_network, refnet32, representation,
                      representation_jvp, representation_vjp, save_network)
from .optim import BoxConstraint, OptResult, lbfgsb_minimize, pixel_box, project_box

__version__ = "1.0.0"
