"""Geometry of the latent/pixel layout and the named parameter profiles."""
from __future__ import annotations

from dataclasses import dataclass

from .prc import PrcParams


@dataclass(frozen=True)
class Geometry:
    """Latent dims (f_l, c_l, h_l, w_l) plus temporal/spatial compression ratios."""

    f_l: int = 16
    c_l: int = 4
    h_l: int = 16
    w_l: int = 16
    d_t: int = 4
    d_s: int = 8
    channels: int = 1

    def __post_init__(self):
        for name in ("f_l", "c_l", "h_l", "w_l", "d_t", "d_s", "channels"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if (self.d_s * self.d_s) % self.c_l:
            raise ValueError("c_l must divide d_s * d_s")
        if (self.d_s * self.d_s // self.c_l) % 2:
            raise ValueError("each channel needs an even number of pixels per block")

    @property
    def n(self) -> int:
        return self.c_l * self.h_l * self.w_l

    @property
    def frames(self) -> int:
        return self.f_l * self.d_t

    @property
    def height(self) -> int:
        return self.h_l * self.d_s

    @property
    def width(self) -> int:
        return self.w_l * self.d_s

    @property
    def latent_dims(self) -> tuple[int, int, int, int]:
        return (self.f_l, self.c_l, self.h_l, self.w_l)

    @property
    def video_dims(self) -> tuple[int, int, int, int]:
        return (self.frames, self.height, self.width, self.channels)


@dataclass(frozen=True)
class Profile:
    name: str
    geometry: Geometry
    params: PrcParams


PROFILES = {
    "desk": Profile("desk", Geometry(), PrcParams()),
    # n = 16 * 32 * 32 = 16384 per frame group, 512-bit messages.
    "paper-scale": Profile(
        "paper-scale",
        Geometry(c_l=16, h_l=32, w_l=32),
        PrcParams(n=16384, msg_len=512, rand_len=64),
    ),
}


def get_profile(name: str) -> Profile:
    try:
        return PROFILES[name]
    except KeyError:
        raise ValueError(f"unknown profile {name!r}; choose from {sorted(PROFILES)}") from None
