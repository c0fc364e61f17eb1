"""Learning linear dynamical systems from censored observations."""
from .sets import (
    AxisBox,
    EmptySet,
    FullSpace,
    HalfSpace,
    Intersection,
    ObservableSet,
    SetSchedule,
    TwoSlab,
    UnionOfHalfSpaces,
    contains,
    make_chasing_schedule,
    make_static_schedule,
)
from .simulator import (
    CensoredTrajectory,
    PairedDataset,
    SystemSpec,
    extract_pairs,
    gramian,
    error_gramian_norm,
    simulate,
    split_pairs,
)
from .estimator import ConfidenceEllipsoid, SonSgConfig, learn_censored_lds, son_sg, warmup

__version__ = "0.1.0"
