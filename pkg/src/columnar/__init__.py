"""Columnar point-pattern analysis: summaries, cluster models, conditional z-models and envelope tests."""
from .core import (Window, PointPattern, InteractionRegion, RngStream, L3_WINDOW, L5_WINDOW,
                   pairwise_min_distance, read_pattern, read_window, write_pattern, write_window)
from .models import (ClusterModelParams, DppSpectralConfig, simulate_csr, simulate_thomas,
                     simulate_jinc_dpp, simulate_dtpp, simulate_plcpp, simulate_dlcpp)
from .mrf import MrfModelSpec, ConditionalState, mh_sample_z
from .summaries import (k_est, l_est, pcf_est, cylk_est, f_est, g_nn_est, j_est, concat_for_gerl)
from .fitting import (thomas_k_theory, thomas_pcf_theory, jinc_dpp_pcf_theory, dtpp_pcf_theory,
                      ContrastConfig, min_contrast_fit, MpleFitConfig, mple_fit)
from .envelopes import CurveSet, EnvelopeResult, erl_measure, gerl_test, run_envelope_pipeline

__version__ = "0.1.0"
