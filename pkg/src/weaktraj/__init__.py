"""Guiding, Bohmian and weak-measurement trajectories of a driven 2D oscillator.

All wavefunctions are exact Gaussian superpositions built on Ermakov
amplitude/phase pairs; numerical grids appear only in checks and quadrature.
"""

__version__ = "0.1.0"

from .ermakov import (  # noqa: E402
    GuidingTrajectory,
    OscillatorParams,
    backward_trajectory,
    integrate_ermakov,
    potential,
    state_at,
)
from .errors import (  # noqa: E402
    AmplitudeCollapse,
    CausticError,
    IncompatiblePostselection,
    OutOfRange,
    ParseError,
    SingularRegion,
    StepFailure,
    UnassignedRecord,
    ValidationError,
)
from .wavepacket import (  # noqa: E402
    GaussianBranch,
    Superposition,
    density,
    evaluate,
    grad_log_density,
    make_superposition,
    propagator_1d,
)
