"""Federated DP-SGD simulation with two-stage norm-based client sampling."""

from .client import Client, GradientRelease, NormRelease
from .dp import PrivacyLedger, calibrate_noise_multiplier, rdp_to_dp
from .models import Dataset, FederatedProblem, Objective, make_federated_problem
from .sampling import RoundPlan, SamplingConfig
from .server import RunConfig, compare_uniform_vs_locks, run, schedule_T_for_dimension

__version__ = "0.1.0"
