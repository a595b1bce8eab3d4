"""One-degree-of-freedom plants used for hand-checkable scenarios."""

from pbsmc.errors import ParameterRangeError
from pbsmc.mech_ph import MechanicalModel


def scalar_model(mass: float = 1.0, damping: float = 0.0, gain: float = 1.0) -> MechanicalModel:
    """M = mass, D0 = damping, G0 = gain."""
    if not mass > 0:
        raise ParameterRangeError(f"mass must be positive, got {mass}")
    if not damping >= 0:
        raise ParameterRangeError(f"damping must be >= 0, got {damping}")
    return MechanicalModel.constant([[mass]], [[damping]], [[gain]], name="scalar")
