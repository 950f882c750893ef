from .autodiff import (
    NumericDomainError,
    ShapeError,
    Tensor,
    add,
    affine,
    bce_with_logits,
    conv2d,
    cosine_similarity_matrix,
    flatten,
    mask_diagonal,
    maxpool2,
    no_grad,
    relu,
    scale,
    sigmoid,
    softmax_cross_entropy,
    weighted_sum,
)
from .checkpoint import Checkpoint, CheckpointError, load_checkpoint, save_checkpoint
from .gradcheck import GradCheckError, GradCheckReport, grad_check
from .optim import Adam, AdamState, adam_step
