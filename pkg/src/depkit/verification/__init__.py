from .domains import Box, LinearConstraint, propagate_interval, tighten_box
from .octagon import (
    Octagon,
    bound_linear_form,
    octagon_from_constraints,
    propagate_octagon,
    strong_closure,
)
from .verify import (
    COUNTEREXAMPLE,
    PROVED,
    UNKNOWN,
    Verdict,
    VerificationProblem,
    argmax_risk,
    find_counterexample,
    load_problem,
    verify,
    verify_any,
)

__all__ = [
    "Box",
    "LinearConstraint",
    "Octagon",
    "Verdict",
    "VerificationProblem",
    "PROVED",
    "COUNTEREXAMPLE",
    "UNKNOWN",
    "argmax_risk",
    "bound_linear_form",
    "find_counterexample",
    "load_problem",
    "octagon_from_constraints",
    "propagate_interval",
    "propagate_octagon",
    "strong_closure",
    "tighten_box",
    "verify",
    "verify_any",
]
