"""Exception types raised by the depkit engines."""


class DepkitError(Exception):
    """Base class; the CLI maps every subclass to exit code 2."""

    code = "depkit_error"


class MalformedModel(DepkitError):
    code = "malformed_model"


class MalformedInput(DepkitError):
    code = "malformed_input"


class DimensionMismatch(DepkitError):
    code = "dimension_mismatch"


class NonFiniteWeight(DepkitError):
    code = "non_finite_weight"


class LabelOutOfRange(DepkitError):
    code = "label_out_of_range"


class KOutOfRange(DepkitError):
    code = "k_out_of_range"


class InvalidItem(DepkitError):
    code = "invalid_item"


class NoFeasibleAssignment(DepkitError):
    code = "no_feasible_assignment"


class EmptyDomain(DepkitError):
    code = "empty_domain"


class LayerNotMonitorable(DepkitError):
    code = "layer_not_monitorable"


class BadParameters(DepkitError):
    code = "bad_parameters"


class EmptyDataset(DepkitError):
    code = "empty_dataset"
