"""Transient heat conduction in voxelized FFF specimens and calibration of
the convective boundary parameters against measured heating curves."""
from .calibration import (CalibrationProblem, Case, ExperimentTrace, FitResult, cost, fit,
                          sweep, synthetic_trace, validate)
from .config import RunConfig, emit_config, load_sample, parse_config
from .mesostructure import (AIR, PLA, FilamentSection, InfillSpec, Pattern, SampleMeasurement,
                            VoidGeometry, VoxelGrid, build_continuum_grid, build_infill_grid,
                            build_void_grid, coarsen, fractions_from_measurement,
                            void_fraction_from_a)
from .thermal import (AIR_PROPS, PLA_PROPS, MaterialProperties, ProbeSeries, TemperatureField,
                      ThermalScenario, assemble, run_transient, steady_state)

__version__ = "0.1.0"
