"""MetaEformer: load forecasting with purified waveform pools and echo-based
pattern reconstruction inside a transformer encoder-decoder."""

from .autodiff import Parameter, Tensor, default_dtype, no_grad, set_default_dtype
from .data import (AdfResult, LoadSeries, Scaler, ScenarioSpec, Segment, WindowSample,
                   adf_test, generate_scenario, load_csv, make_windows, preset_scenario,
                   split_series, time_marks)
from .decomposition import DecompositionResult, decompose, decompose_batch, moving_average
from .echo import EchoInspector, EchoProjections, EchoSelection, deconstruct, echo_layer, echo_padding, select_top_k
from .errors import ConfigError, FormatError, InputError, ShapeError, StateError
from .model import (ABLATIONS, ForecastOutput, MetaEformer, ModelConfig, load_checkpoint,
                    random_pool, save_checkpoint)
from .pool import (MetaPatternPool, PoolConfig, construct_pool, load_pool,
                   purification_threshold, save_pool, sim, similarity_matrix,
                   slice_waveforms, standardize, update_pool)
from .training import (AdamOptimizer, History, Metrics, TrainConfig, evaluate,
                       mse_loss, run_ablation, train)

__version__ = "0.1.0"
