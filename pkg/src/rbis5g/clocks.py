"""Free-running affine device clocks with timestamping noise."""
from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Optional

import numpy as np

MAX_RATE_PPM = 500
JITTER_DISTS = ("gaussian", "uniform", "none")


@dataclass
class ClockState:
    """Local clock ``C(t) = (1 + rate_ppm * 1e-6) * t + offset_ps``."""

    rate_ppm: float = 0.0
    offset_ps: int = 0
    last_step_at: Optional[int] = None

    def __post_init__(self):
        if abs(self.rate_ppm) > MAX_RATE_PPM:
            raise ValueError(f"|rate_ppm| must be <= {MAX_RATE_PPM}, got {self.rate_ppm}")
        self.offset_ps = int(self.offset_ps)
        self._ppm = Fraction(str(self.rate_ppm))

    @property
    def rate(self) -> Fraction:
        return 1 + self._ppm / 1_000_000

    def ideal(self, true_time: int) -> int:
        """Noise-free reading at ``true_time``, rounded to the nearest ps."""
        return true_time + round(self._ppm * true_time / 1_000_000) + self.offset_ps


@dataclass(frozen=True)
class TimestampModel:
    jitter_sigma: float = 0.0
    jitter_dist: str = "none"
    outlier_prob: float = 0.0
    outlier_magnitude: float = 0.0

    def __post_init__(self):
        if self.jitter_dist not in JITTER_DISTS:
            raise ValueError(f"jitter_dist must be one of {JITTER_DISTS}, got {self.jitter_dist!r}")
        if self.jitter_sigma < 0:
            raise ValueError("jitter_sigma must be >= 0")
        if not 0.0 <= self.outlier_prob <= 1.0:
            raise ValueError("outlier_prob must lie in [0, 1]")
        if self.outlier_magnitude < 0:
            raise ValueError("outlier_magnitude must be >= 0")

    def draw(self, rng: Optional[np.random.Generator]) -> int:
        noise = 0.0
        if self.jitter_dist != "none" and self.jitter_sigma > 0:
            if self.jitter_dist == "gaussian":
                noise = rng.normal(0.0, self.jitter_sigma)
            else:
                # same standard deviation as the gaussian setting
                half = self.jitter_sigma * np.sqrt(3.0)
                noise = rng.uniform(-half, half)
        if self.outlier_prob > 0 and rng.random() < self.outlier_prob:
            noise += self.outlier_magnitude if rng.random() < 0.5 else -self.outlier_magnitude
        return int(round(noise))


NO_NOISE = TimestampModel()


def read_clock(clock: ClockState, ts_model: TimestampModel, true_time: int,
               rng: Optional[np.random.Generator] = None) -> int:
    """Local timestamp in ps taken at ``true_time``, including timestamping noise."""
    if true_time < 0:
        raise ValueError("true_time must be non-negative")
    return clock.ideal(true_time) + ts_model.draw(rng)


def step_clock(clock: ClockState, delta: int, at: int) -> ClockState:
    """Jump the clock offset by ``delta`` ps; the rate is left alone."""
    clock.offset_ps += int(delta)
    clock.last_step_at = at
    return clock


def true_offset(master: ClockState, slave: ClockState, true_time: int) -> int:
    """Ground-truth ``C_R(t) - C_S(t)`` without timestamping noise."""
    return master.ideal(true_time) - slave.ideal(true_time)
