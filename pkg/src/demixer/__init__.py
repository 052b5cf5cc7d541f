"""Variational ground states of two-species contact-interacting Bose gases.

Continuous matrix product states (cMPS) are optimized at fixed per-species
densities; the package extracts normal-mode velocities, interspecies
fluctuations and correlation functions across the mixing/demixing transition,
with an exact Lieb-Liniger solver as reference.
"""
from .bethe import lieb_liniger, reference_energy
from .cmps import AssembledState, CmpsPair, CmpsSingle, assemble, parameter_count
from .errors import (ConfigError, DemixerError, DensityTargetError, GaugeViolation,
                     InvalidParameters, NoTransitionInRange, NonInjectiveState, OracleError,
                     SpectralError, StencilError)
from .luttinger import (TransitionReport, VelocityPoint, demixed_diagnostics, locate_transition,
                        velocities, weak_coupling_estimate)
from .observables import FieldParams, ObservableSet, correlation_curve, measure
from .optimize import GroundStateResult, OptimizerConfig, minimize

__version__ = "0.1.0"
