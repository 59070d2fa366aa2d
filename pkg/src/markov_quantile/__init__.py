"""Markov-quantile processes for families of one-dimensional marginals.

Measures are stored by exact piecewise-linear quantile functions, couplings by
kernels on the level space ]0, 1[, and the Markov-quantile process by products
of the averaging kernels that the atoms of the marginals induce on levels.
"""
import os as _os

if _os.environ.get("MQ_THREADS", "").isdigit():
    # BLAS pools read these once, when numpy is first imported
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        _os.environ.setdefault(_var, _os.environ["MQ_THREADS"])

from .measure import (Atom, AtomInfo, RealMeasure, Segment, dirac, from_mixture, make_measure,
                      sto_leq, stoinf, stosup, uniform, w2)
from .kernel import (Invalid, LevelCoupling, LevelDensity, LevelKernel, MarkovChainLaw,
                     RealCoupling, coupling_cdf, fd_cdf, increasing_kernel, kernel_apply,
                     kernel_compose, kernel_transpose, lo_leq, losup_couplings,
                     pushforward_coupling, quantile_coupling, rho)
from .families import (AtomicLevelSet, ExplicitFamily, ParametricFamily, TimeInterval,
                       family_from_json, time_reversed)
from .levels import Indeterminate, L_finite, L_interval, NoConvergence, ell_of, essential
from .mq import (ProcessHandle, jump_rates, markov_check, mq_coupling, process_fd_cdf,
                 simulate)
from .action import Partition, action, disp_ensemble, energy, energy_limit, path_energy

__all__ = [
    "Atom",
    "AtomInfo",
    "RealMeasure",
    "Segment",
    "dirac",
    "from_mixture",
    "make_measure",
    "sto_leq",
    "stoinf",
    "stosup",
    "uniform",
    "w2",
    "Invalid",
    "LevelCoupling",
    "LevelDensity",
    "LevelKernel",
    "MarkovChainLaw",
    "RealCoupling",
    "coupling_cdf",
    "fd_cdf",
    "increasing_kernel",
    "kernel_apply",
    "kernel_compose",
    "kernel_transpose",
    "lo_leq",
    "losup_couplings",
    "pushforward_coupling",
    "quantile_coupling",
    "rho",
    "AtomicLevelSet",
    "ExplicitFamily",
    "ParametricFamily",
    "TimeInterval",
    "family_from_json",
    "time_reversed",
    "Indeterminate",
    "L_finite",
    "L_interval",
    "NoConvergence",
    "ell_of",
    "essential",
    "ProcessHandle",
    "jump_rates",
    "markov_check",
    "mq_coupling",
    "process_fd_cdf",
    "simulate",
    "Partition",
    "action",
    "disp_ensemble",
    "energy",
    "energy_limit",
    "path_energy",
]

__version__ = "0.1.0"
