"""Dual filter inference for hidden Markov models.

The forward filter computes next-token probabilities by Bayes' rule; the dual
filter computes the same quantities as a constant minus a weighted sum of
encoded past tokens, with weights from an optimal control problem.  This
package provides both, the exact enumeration machinery used to check the
duality identities, and an experiment harness.
"""

__version__ = "0.1.0"

from .errors import (DualFilterError, NumericalError, ValidationError)  # noqa: E402
from .hmm import (HmmModel, SamplePath, validate_model, sample_path, sample_paths,  # noqa: E402
                  random_stochastic_matrix, homotopy_transition, circulant_permutation,
                  eigen_spectrum, second_eigenvalue_magnitude, alpha_for_lambda2)
from .forward import forward_filter, forward_step, predict  # noqa: E402
from .dual_filter import (init_rho, project_normalize, layer_map, iterate,  # noqa: E402
                          single_shot, predict_all, error_metric, error_trace, control_trace)
from .kernels import BACKEND  # noqa: E402

__all__ = [
    "DualFilterError", "NumericalError", "ValidationError",
    "HmmModel", "SamplePath", "validate_model", "sample_path", "sample_paths",
    "random_stochastic_matrix", "homotopy_transition", "circulant_permutation",
    "eigen_spectrum", "second_eigenvalue_magnitude", "alpha_for_lambda2",
    "forward_filter", "forward_step", "predict",
    "init_rho", "project_normalize", "layer_map", "iterate", "single_shot",
    "predict_all", "error_metric", "error_trace", "control_trace", "BACKEND",
]
