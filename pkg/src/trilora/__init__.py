"""Three-factor (TriLoRA) and classic LoRA low-rank adapters in numpy."""

__version__ = "0.1.0"

from .adapters import (
    AdapterConfig,
    LoRAAdapter,
    TriLoRAAdapter,
    adapted_forward,
    delta_weight,
    init_lora,
    init_trilora,
    lora_forward,
    merge,
    param_count,
    trilora_forward,
)
from .convert import lora_to_trilora, trilora_to_lora, truncate
from .errors import (
    FormatError,
    NumericalError,
    ParameterError,
    ShapeError,
    TrainingError,
    TriLoRAError,
)
from .grad import (
    backward,
    finite_diff_check,
    lora_backward,
    loss_and_upstream,
    trilora_backward,
)
from .io import load, load_adapter, load_weight, save_adapter, save_weight
from .linalg import (
    SVDResult,
    compact_svd,
    frobenius_norm,
    gaussian_matrix,
    matmul,
    transpose,
    truncation_error,
)
from .train import (
    PlantedTask,
    TrainConfig,
    TrainReport,
    adam_step,
    make_planted_task,
    sgd_step,
    train_adapter,
)
