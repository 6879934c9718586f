"""stainlab: paired-image cGAN pipeline for computational staining and destaining."""

__version__ = "0.1.0"

from .errors import ConfigError, ContractError, DataError, StainlabError, TrainingError
from .losses import (
    LossBreakdown,
    LossWeights,
    cc_penalty,
    combined_generator_loss,
    discriminator_loss,
    generator_adv_loss,
    l1_loss,
    pearson_cc,
)
from .metrics import MetricsReport, evaluate, ssim, tile_boundary_discontinuity
from .networks import (
    DiscriminatorSpec,
    GeneratorSpec,
    build_discriminator,
    build_generator,
    generator_forward,
)
from .patches import (
    ExtractionConfig,
    PatchPair,
    SlidePairRecord,
    enumerate_windows,
    extract_manifest,
    extract_pairs,
    read_manifest,
    split_manifest,
    tissue_fraction,
    write_manifest,
)
from .stitching import IdentityModel, StitchPlan, coverage_map, infer_slide
from .synth import SynthConfig, generate_corpus, generate_pair, run_cycle_benchmark
from .trainer import (
    PatchDataset,
    TrainConfig,
    Trainer,
    augment,
    load_generator,
    train,
    train_secondary_stainer,
)

__all__ = [name for name in dir() if not name.startswith("_")]
