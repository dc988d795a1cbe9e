"""Slow-to-start traffic model: exact simulation via coalescing walks, continuum oracles and statistics."""
__version__ = "0.1.0"

from .errors import DomainError, ParameterError, WindowError
from .model import (DepartureClocks, InitialConfig, MarkedPointSet, ModelParams, ScheduleTable, build_schedule,
                    generate_initial, jam_configuration, naive_simulate, replay_jams, trajectory)
from .rng import RngStream, StreamTag, derive_stream, replica_seed, sample_exponential, sample_poisson_points
from .walks import (LeaveTimes, WalkFamily, build_walks, car_state, check_equivalence, jams_from_walks,
                    leave_times, moving_positions, stopped_at)

__all__ = [
    "DomainError", "ParameterError", "WindowError", "DepartureClocks", "InitialConfig", "MarkedPointSet",
    "ModelParams", "ScheduleTable", "build_schedule", "generate_initial", "jam_configuration", "naive_simulate",
    "replay_jams", "trajectory", "RngStream", "StreamTag", "derive_stream", "replica_seed", "sample_exponential",
    "sample_poisson_points", "LeaveTimes", "WalkFamily", "build_walks", "car_state", "check_equivalence",
    "jams_from_walks", "leave_times", "moving_positions", "stopped_at",
]
