"""Secure summation for distributed gradient descent.

Clients quantize their gradients into Z_{2^m}^d, subtract K
seed-expanded uniform masks, and send the masked vector plus the K
seeds as separate unlinkable messages through an anonymization
network.  The server re-expands every seed, sums all messages, and
recovers the exact aggregate -- and nothing else: linking a mask back
to a masked gradient is a multidimensional subset-sum problem.

The package ships the protocol pieces (``group_math``, ``quantizer``,
``mask``, ``messages``, ``client``, ``server``), a mixnet simulator
with in-process and TCP-loopback transports (``mixnet``), an adversary
toolkit with exact solvers and hardness experiments (``adversary``),
the DP extension for the aggregate (``dp``), and a training harness
plus CLI (``harness``, ``expconfig``, ``cli``).
"""

from .group_math import GroupVector, add, deserialize, from_sequence, gsum, serialize, sub
from .quantizer import QuantizationParams, clip_linf, dequantize_sum, quantize
from .mask import MaskSet, Seed, expand, make_mask_set, sample_seeds, seed_bits
from .messages import RoundConfig, RoundMessage, config_digest, decode_config, encode_config
from .client import Client, ClientPolicy, prepare_round, verify_round_config
from .server import ModelState, RoundLedger, Server, aggregate, aggregate_group, update_model
from .mixnet import AdversaryView, AnonymousChannel, LatencyModel, Mixnet
from .adversary import (
    DsssInstance,
    DsssResult,
    dsss_decide,
    exhaustive_decide,
    gradient_recovery_attack,
    injectivity_experiment,
    leakage_forward,
    mitm_decide,
    quasirandomness_experiment,
    recover_features,
)
from .dp import DpParams, clip_l2, gaussian_sigma, local_dp_noise
from .expconfig import ExperimentConfig, dumps_config, load_config, loads_config
from .harness import TrainingResult, make_dataset, run_training
from .errors import (
    ConfigRejected,
    DataError,
    EquivocationError,
    ProtocolError,
    ReconstructionFailed,
    RoundVoid,
    SolverSizeError,
    TrainingDiverged,
)

__version__ = "0.1.0"
