"""Time-domain coupled acoustic/elastic simulation and time-reversal imaging."""
from .scene import (FluidMaterial, InclusionLayout, InclusionSpec, SceneSpec, SolidMaterial,
                    SraSpec, builtin_presets, default_t_final, desk_scene, material_at)
from .mesh import Mesh, DofMap, build_dofmap, generate_mesh, sample_points
from .assembly import OperatorSet, assemble_operators, assemble_sources
from .stepper import CenteredScheme, FieldState, energy, run, stable_dt, step
from .forward import (FieldMovie, RickerSource, TraceRecord, add_noise, ricker, run_incident,
                      run_total, scattered)
from .reversal import TRProblem, build_tr_problem, impose_dirichlet, run_reversed
from .imaging import (ImageField, PeakReport, aggregate_probes, find_peaks, region_peak, rtm,
                      rtm_percentage, rtm_sum)
from .config import Experiment
from .pipeline import Pipeline, TimingPlan, plan_timing

__version__ = "0.1.0"
