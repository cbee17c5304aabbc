"""Wave-encoded parallel-imaging simulation, unrolled model-based
reconstruction, and quantitative tissue mapping, all on plain numpy."""

__version__ = "0.1.0"

from .errors import (
    ConfigError,
    CorruptFileError,
    InvalidInputError,
    NumericalFailureError,
    PipelineError,
    WavemodlError,
)
from .volume import (
    FREQUENCY,
    IMAGE,
    CoilSensitivities,
    ComplexVolume,
    MultiCoilData,
    fft_centered,
    inner_product,
)
from .wave import (
    GAMMA_BAR_HZ_PER_T,
    WaveGradientSpec,
    WaveOperator,
    WavePsf,
    gradient_moment,
    make_wave_psf,
    wave_adjoint,
    wave_forward,
)
from .sampling import (
    AccelSpec,
    SamplingPattern,
    full_mask,
    make_caipi_mask,
    make_multicontrast_pattern,
)
from .phantom import (
    Ellipsoid,
    PhantomSpec,
    TissueMap,
    TissueProperties,
    make_coil_sensitivities,
    make_phantom,
    simulate_acquisition,
)
from .solvers import CgConfig, cg_normal_solve, dc_update, wave_caipi_recon
from .modl import (
    ConvLayer,
    ConvNetParams,
    ModlParams,
    TrainConfig,
    TrainSample,
    denoise,
    init_modl_params,
    modl_reconstruct,
    train,
    train_step,
)
from .qalas import (
    QALAS_CONTRAST_WEIGHTS,
    Dictionary,
    ParameterMaps,
    QalasTiming,
    SynthSequence,
    build_dictionary,
    fit_parameter_maps,
    qalas_signal,
    synthesize_contrast,
)
from .metrics import (
    GFactorConfig,
    GFactorResult,
    gfactor_map,
    nrmse,
    roi_box_regression,
)
from .fileio import (
    read_checkpoint,
    read_volume,
    write_checkpoint,
    write_pgm,
    write_volume,
)
from .config import ExperimentConfig, load_config, parse_config
from .estimators import QalasParameterMapper, WaveModlReconstructor
