from .gradcheck import ProbeError, grad_check, numeric_gradients
from .sparse import SparseMatrix
from .tensor import (
    BACKWARD_RULES,
    ContractError,
    DegenerateRowError,
    DimensionError,
    Tensor,
    add,
    backward,
    constant,
    cosine_rows,
    diag,
    div,
    exp,
    log,
    logsumexp_rows,
    matmul,
    mean,
    mul,
    neg,
    relu,
    row_sum,
    spmm,
    sub,
    sum,
    take,
    take_rows,
    tensor,
    transpose,
)
