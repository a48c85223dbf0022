"""Orthogonalized low-rank adapters with a variational Bayesian last layer.

Desk-scale toolkit: a frozen MLP feature extractor carries polar-decomposed
(or vanilla two-factor) low-rank adapters trained by retraction-free landing
steps, feeding a per-class Gaussian last layer trained on a closed-form
Jensen-tightened bound, with optional exact-Hessian Laplace refinement,
Monte Carlo predictive inference, and calibration/geometry diagnostics.
"""

from . import backend
from .adapters import FactorGrads, LoraAdapter, PolarAdapter, stable_rank
from .data import Dataset, SynthSpec, gen_gaussian_mixture, load_jsonl, one_hot, save_jsonl, shift
from .features import FeatureExtractor, ForwardTape
from .laplace import LaplacePosterior, full_hessian, refine
from .metrics import EvalReport, accuracy, ece, jensen_gap_trace, nll, stable_rank_report
from .numerics import Rng, cholesky, logdet_spd, qr_orthonormalize, sample_std_normal, spectral_norm
from .predict import PredictiveDist, evaluate_checkpoint, predict_mc, predict_mean
from .stiefel import StiefelFactor, infeasibility_gradient, landing_field, landing_step, riemannian_component, skew
from .train import CheckpointState, MleHead, TrainConfig, Trainer, train, train_mle_head
from .vbll import JensenLogits, VbllGrads, VbllHead, grads, jensen_logits, kl_to_prior, mc_loss_estimate, surrogate_loss

__version__ = "0.1.0"
