"""Error types and run flags shared across the library."""


class IsswalkError(Exception):
    """Base class for all library errors."""


class DimensionMismatch(IsswalkError):
    pass


class SingularConstraintBlock(IsswalkError):
    """J_h D^-1 J_h^T is numerically singular (cond > 1e12)."""


class DecouplingSingular(IsswalkError):
    """Stacked decoupling matrix is numerically singular (cond > 1e10)."""


class ChartSingular(IsswalkError):
    """Transverse/zero coordinate chart is rank deficient at this state."""


class NotHurwitz(IsswalkError):
    """Lyapunov solve requested for a matrix with an eigenvalue in the closed RHP."""


class Underactuated(IsswalkError):
    """Operation requires a fully actuated model."""


class InsufficientSampling(IsswalkError):
    """Trace sample spacing too coarse for a derivative-based check."""


class SchemaMismatch(IsswalkError):
    """CSV columns do not match the expected schema for this plot kind."""


class ConfigError(IsswalkError):
    """Config file missing, unparsable, or failing validation."""


class MapUndefined(IsswalkError):
    """Poincare map evaluation failed (no impact or integration blowup)."""


class JacobianIncomplete(IsswalkError):
    """A finite-difference probe of the Poincare map failed."""


class GaitUnstable(IsswalkError):
    """Zero-disturbance decay fit gave a contraction factor >= 1."""


class FitFailed(IsswalkError):
    """Gait fit did not reach the required residual tolerances."""


# Non-fatal conditions are reported as string flags on results/traces rather
# than raised, so a rollout can keep going and record what happened.
FLAG_NEGATIVE_NORMAL_IMPULSE = "NegativeNormalImpulse"
FLAG_PHASE_OUT_OF_RANGE = "PhaseOutOfRange"
FLAG_IK_DIVERGED = "IkDiverged"
FLAG_NO_IMPACT = "NoImpact"
FLAG_INTEGRATION_BLOWUP = "IntegrationBlowup"
FLAG_NEWTON_DIVERGED = "NewtonDiverged"
FLAG_TORQUE_SATURATED = "TorqueSaturated"
FLAG_GRF_CONE_VIOLATION = "GrfConeViolation"
