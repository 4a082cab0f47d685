"""Disturbance injection: continuous input noise, impact velocity kicks,
controller clock distortion, and model-parameter scaling.

All randomness is derived from the spec's seed so rollouts are reproducible;
the piecewise-constant noise channel is counter-based (value k depends only
on (seed, k)), which keeps it deterministic under adaptive step sizes.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dynamics import RobotModel, State, project_velocity


@dataclass
class DisturbanceSpec:
    """Configuration of every disturbance channel.

    continuous: "none" | "constant" | "uniform_random" | "sinusoid"
      - constant: ``magnitude`` on every actuated channel
      - uniform_random: iid uniform in [-magnitude, magnitude], held for
        ``hold_dt`` seconds (piecewise constant)
      - sinusoid: magnitude * sin(2 pi freq t + phase_lag) on all channels
    impact_kick: post-touchdown velocity perturbation magnitude (rad/s),
      applied in the new contact's feasible (constraint-null) directions.
    clock_scale / clock_offset: the controller reads
      scale * t_domain + offset instead of the true domain time.
    mass_scale: torso mass/inertia multiplier (applied at model build).
    """

    continuous: str = "none"
    magnitude: float = 0.0
    hold_dt: float = 0.02
    freq: float = 5.0
    phase_lag: float = 0.0
    impact_kick: float = 0.0
    clock_scale: float = 1.0
    clock_offset: float = 0.0
    mass_scale: float = 1.0
    seed: int = 0
    m: int = 4  # actuated channel count

    def __post_init__(self):
        if self.continuous not in ("none", "constant", "uniform_random",
                                   "sinusoid"):
            raise ValueError(f"unknown continuous kind {self.continuous!r}")
        self._hold_idx = -1
        self._hold_val = np.zeros(self.m)
        self._impact_count = 0

    # -- channels -------------------------------------------------------------

    def sample_continuous(self, t: float) -> np.ndarray:
        if self.continuous == "none" or self.magnitude == 0.0:
            return np.zeros(self.m)
        if self.continuous == "constant":
            return np.full(self.m, self.magnitude)
        if self.continuous == "sinusoid":
            return np.full(
                self.m,
                self.magnitude * np.sin(2 * np.pi * self.freq * t
                                        + self.phase_lag),
            )
        k = int(np.floor(t / self.hold_dt))
        if k != self._hold_idx:
            rng = np.random.default_rng([self.seed, k])
            self._hold_idx = k
            self._hold_val = rng.uniform(
                -self.magnitude, self.magnitude, self.m
            )
        return self._hold_val

    def clock_distortion(self) -> tuple[float, float]:
        return self.clock_scale, self.clock_offset

    def perturb_impact(self, model: RobotModel, x_plus: State, cs) -> State:
        """Velocity kick of norm ``impact_kick`` in null(J_h) after impact."""
        if self.impact_kick == 0.0:
            return x_plus
        rng = np.random.default_rng([self.seed, 10_000 + self._impact_count])
        self._impact_count += 1
        v = rng.normal(size=model.n)
        v = project_velocity(model, x_plus.q, v, cs)
        nv = np.linalg.norm(v)
        if nv < 1e-12:
            return x_plus
        return State(x_plus.q, x_plus.qdot + self.impact_kick * v / nv)

    # -- aggregate size ---------------------------------------------------------

    def impact_event_magnitudes(self, n_events: int) -> np.ndarray:
        return np.full(n_events, abs(self.impact_kick))


def d_norm_max(trace, dist: DisturbanceSpec | None = None) -> float:
    """Aggregate disturbance size of a rollout.

    max over continuous samples of the sup-norm deviation from the nominal
    linearizing input, joined with the largest impact-event perturbation.
    """
    dm = 0.0
    if trace.d.size:
        dm = float(np.max(np.abs(trace.d)))
    if dist is not None and dist.impact_kick:
        n_td = sum(1 for e in trace.events if e["kind"] == "touchdown")
        if n_td:
            dm = max(dm, abs(dist.impact_kick))
    return dm
