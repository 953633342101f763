"""Hot numeric kernels, dispatched to numba or numpy by ``DPIID_NUMBA``."""

from .._backend import USE_NUMBA
from . import _np, _nb

_impl = _nb if USE_NUMBA else _np

log_prior_batch = _impl.log_prior_batch
log_lik_batch = _impl.log_lik_batch
log_weight_ratio_batch = _impl.log_weight_ratio_batch
sample_alloc_batch = _impl.sample_alloc_batch
tmcmc_chunk = _impl.tmcmc_chunk
imh_scan = _impl.imh_scan

log_stick_weights = _np.log_stick_weights

__all__ = [
    "log_prior_batch",
    "log_lik_batch",
    "log_weight_ratio_batch",
    "sample_alloc_batch",
    "tmcmc_chunk",
    "imh_scan",
    "log_stick_weights",
]
