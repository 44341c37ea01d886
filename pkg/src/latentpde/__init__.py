"""Lattice PDE trajectories, patch tokenization, observability
certificates, and linear latent forecasting."""

from .errors import (DataFormatError, DegenerateStatisticError, DivergenceError,
                     LatentPdeError, NonObservableError, ParameterError)
from .random_fields import (GrfParams, build_conductivity, periodic_matern_covariance,
                            sample_matern_field)
from .lattice_ops import (GridSpec, build_difference, build_modified_laplacian,
                          build_tokenizer_matrix, build_wave_generator, load_operator,
                          save_operator)
from .solvers import (EtdrkCoefficients, Trajectory, etdrk_coefficients, simulate_kse1d,
                      simulate_kse2d, simulate_linear, step_forward_euler)
from .tokenizer import (build_histories, build_reconstruction_pairs, sliding_histories,
                        tokenize, tokenize_trajectory)
from .observability import (LieLogDetSeries, ObservabilityReport, annihilation_witness,
                            empirical_lie_logdet, hautus_test, kalman_observability_matrix,
                            linear_reconstruct_initial_state, observability_gramian,
                            rank_test)
from .learners import (LinearMap, TrainConfig, fit_least_squares, fit_sgd, fit_superres,
                       history_sweep, mse_loss_and_grad)
from .rollout_metrics import (CorrelationSeries, RolloutResult, autoregressive_rollout,
                              correlation_ensemble_stats, full_pipeline_rollout,
                              nearest_subvideo_distance, residue_norms,
                              temporal_correlation)
from .dataset import (DatasetManifest, apply_normalization, compute_normalization,
                      export_frame_image, generate_dataset, generate_trajectory,
                      invert_normalization, load_all, load_manifest, load_trajectory,
                      read_csv, tokenize_dataset, write_csv, write_dataset)
from . import cli

__version__ = "0.1.0"
