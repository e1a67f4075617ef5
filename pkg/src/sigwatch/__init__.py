"""Open-set RF emitter surveillance on synthetic bursts.

Pipeline: synthesize impaired emitter bursts and feature tensors
(:mod:`sigwatch.synth`), train small dense classifiers
(:mod:`sigwatch.nn`) with an optional cosine-matching head
(:mod:`sigwatch.zerobias`), convert a trained model into a binary
abnormality detector (:mod:`sigwatch.detect`), feed its 0/1 stream into
sequential change detectors (:mod:`sigwatch.seq`), and grow the
classifier with new classes without old training data
(:mod:`sigwatch.ewc`). The CLI (:mod:`sigwatch.cli`) wires these into
reproducible experiments.
"""

__version__ = "0.1.0"

from .detector import (
    BernoulliModel,
    BinaryDetector,
    CutoffProfile,
    build_profile,
    detect,
    detect_stream,
    estimate_rates,
    predict_rates_from_accuracy,
)
from .ewc import (
    IncrementalConfig,
    Strategy,
    concat_fingerprints,
    ewc_loss,
    fisher_information,
    incremental_train,
    init_fingerprint,
    stabilize,
)
from .nn import (
    DenseLayer,
    DivergenceError,
    Network,
    TrainConfig,
    accuracy,
    build_network,
    forward,
    gradient_check,
    load_model,
    save_model,
    train,
)
from .seq import (
    CusumDetector,
    DelayStats,
    EwmaDetector,
    WindowDetector,
    cusum_step,
    ewma_step,
    llr,
    simulate_delay,
    sweep,
    window_step,
)
from .synth import (
    Burst,
    Dataset,
    EmitterProfile,
    FeatureTensor,
    extract_features,
    make_dataset,
    synth_burst,
)
from .zerobias import ZeroBiasHead, convert_head, coverage_ratio, embed, export_latent, match

__all__ = [name for name in dir() if not name.startswith("_")]
