from .functional import softmax, softmax_cross_entropy, sgd_step
from .gradcheck import finite_diff_check, function_grad_check
from .layers import (
    Conv2d,
    ConvBlock,
    Dense,
    GlobalAvgPool,
    Layer,
    ReLU,
    RSoftmax,
    Sequential,
    ShapeError,
    SplitAttention,
    rsoftmax,
)
