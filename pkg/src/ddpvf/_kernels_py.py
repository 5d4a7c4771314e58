"""Pure numpy log-likelihood kernel, used when the compiled one is unavailable."""

import numpy as np

from .distributions import _ddpvf_log_terms, _inverse_log_laplace, _log_expit


def loglik_terms(time, event, lin_alpha, lin_beta, lin_cure, code, gamma, sigma2,
                 log_time=None):
    """Per-subject log-likelihood contributions from the three linear predictors.

    ``log_time`` is accepted for signature parity with the compiled kernel.
    """
    s_inf = _inverse_log_laplace(_log_expit(lin_cure), code, gamma, sigma2)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        log_surv, log_dens = _ddpvf_log_terms(
            time, np.exp(lin_alpha), -np.asarray(lin_beta), s_inf, code, gamma, sigma2)
    return np.where(np.asarray(event) > 0, log_dens, log_surv)


def loglik_sum(time, event, lin_alpha, lin_beta, lin_cure, code, gamma, sigma2,
               log_time=None):
    return float(np.sum(loglik_terms(time, event, lin_alpha, lin_beta, lin_cure,
                                     code, gamma, sigma2)))
