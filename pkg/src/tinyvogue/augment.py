"""Stochastic semantics-preserving image perturbations.

Transforms apply in a fixed order (hflip, vflip, rotation, jitter, noise) and
only when the instance's declared safe set admits them. One clamp to [0, 1]
happens at the end, after noise.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ContractError

TRANSFORM_KINDS = ("hflip", "vflip", "rot90", "rot180", "rot270", "color-jitter", "gaussian-noise")

# the order perturb applies transform groups in; recorded in run manifests
APPLY_ORDER = ("hflip", "vflip", "rotation", "color-jitter", "gaussian-noise")

ROTATION_DEGREES = (90, 180, 270)


@dataclass
class AugmentSpec:
    p_hflip: float = 0.5
    p_vflip: float = 0.5
    rotation_set: tuple = (90, 180, 270)
    p_rotate: float = 0.5
    jitter_magnitude: float = 0.03
    noise_sigma: float = 0.4

    def validate(self, min_channel_separation=0.94):
        for name in ("p_hflip", "p_vflip", "p_rotate"):
            p = getattr(self, name)
            if not (0.0 <= p <= 1.0):
                raise ConfigError(f"{name} must lie in [0, 1], got {p}")
        rots = tuple(self.rotation_set)
        if len(set(rots)) != len(rots) or any(r not in ROTATION_DEGREES for r in rots):
            raise ConfigError(f"rotation_set must be a duplicate-free subset of {ROTATION_DEGREES}")
        if self.jitter_magnitude < 0:
            raise ConfigError("jitter_magnitude must be >= 0")
        if self.jitter_magnitude >= min_channel_separation / 2.0:
            raise ConfigError(
                f"jitter_magnitude {self.jitter_magnitude} reaches half the minimum palette "
                f"channel separation ({min_channel_separation / 2.0}); labels would not survive")
        if self.noise_sigma < 0:
            raise ConfigError("noise_sigma must be >= 0")
        return self

    @classmethod
    def identity(cls):
        """A spec under which perturb returns the input unchanged."""
        return cls(p_hflip=0.0, p_vflip=0.0, rotation_set=(), p_rotate=0.0,
                   jitter_magnitude=0.0, noise_sigma=0.0)


def _check_image(image):
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[2] != 3:
        raise ContractError(f"expected an (H, W, 3) image, got shape {image.shape}")
    if image.min() < 0.0 or image.max() > 1.0:
        raise ContractError("image values must lie in [0, 1]")
    return image


def perturb(image, spec, safe_transforms, stream, trace=None):
    """Produce a perturbed copy of image.

    Each transform fires stochastically per spec, and only if its kind appears
    in safe_transforms. Flip and rotation gate draws are consumed whenever the
    kind is safe, even at probability 0; jitter and noise draw only when their
    magnitude is nonzero, and they come last, so sweeping noise_sigma (with
    jitter fixed) reuses the same underlying noise field across sweep points
    under a shared stream. trace, if given, collects the applied operations.
    """
    img = _check_image(image).astype(np.float64).copy()
    safe = frozenset(safe_transforms)
    unknown = safe - set(TRANSFORM_KINDS)
    if unknown:
        raise ContractError(f"unknown transform kinds in safe set: {sorted(unknown)}")

    def record(*op):
        if trace is not None:
            trace.append(op)

    if "hflip" in safe and stream.bernoulli(spec.p_hflip):
        img = img[:, ::-1, :].copy()
        record("hflip")
    if "vflip" in safe and stream.bernoulli(spec.p_vflip):
        img = img[::-1, :, :].copy()
        record("vflip")
    allowed_rots = [r for r in spec.rotation_set if f"rot{r}" in safe]
    if allowed_rots and stream.bernoulli(spec.p_rotate):
        deg = allowed_rots[int(stream.integers(0, len(allowed_rots)))]
        img = np.rot90(img, deg // 90).copy()
        record("rotate", deg)
    if "color-jitter" in safe and spec.jitter_magnitude > 0:
        shift = np.array([
            spec.jitter_magnitude * (2.0 * stream.uniform() - 1.0) for _ in range(3)
        ])
        img = img + shift[None, None, :]
        record("color-jitter", *shift.tolist())
    if "gaussian-noise" in safe and spec.noise_sigma > 0:
        img = img + spec.noise_sigma * stream.normal(size=img.shape)
        record("gaussian-noise", spec.noise_sigma)
    return np.clip(img, 0.0, 1.0)


def apply_named_transform(image, kind, stream=None, *, jitter_magnitude=0.03, noise_sigma=0.4):
    """Apply exactly one transform kind, unconditionally.

    The stochastic kinds (color-jitter, gaussian-noise) require a stream.
    Used by semantics-preservation checks that exercise each declared kind.
    """
    img = _check_image(image).astype(np.float64).copy()
    if kind == "hflip":
        return img[:, ::-1, :].copy()
    if kind == "vflip":
        return img[::-1, :, :].copy()
    if kind in ("rot90", "rot180", "rot270"):
        return np.rot90(img, int(kind[3:]) // 90).copy()
    if kind == "color-jitter":
        if stream is None:
            raise ContractError(f"{kind} requires an rng stream")
        shift = np.array([jitter_magnitude * (2.0 * stream.uniform() - 1.0) for _ in range(3)])
        return np.clip(img + shift[None, None, :], 0.0, 1.0)
    if kind == "gaussian-noise":
        if stream is None:
            raise ContractError(f"{kind} requires an rng stream")
        return np.clip(img + noise_sigma * stream.normal(size=img.shape), 0.0, 1.0)
    raise ContractError(f"unknown transform kind {kind!r}; expected one of {TRANSFORM_KINDS}")


def describe(spec):
    """Canonical one-line rendering; parse() inverts it exactly."""
    rots = "+".join(str(r) for r in spec.rotation_set) if spec.rotation_set else "none"
    return (f"hflip={spec.p_hflip!r} vflip={spec.p_vflip!r} rot={rots}@{spec.p_rotate!r} "
            f"jitter={spec.jitter_magnitude!r} sigma={spec.noise_sigma!r}")


def parse(text):
    parts = text.split()
    if len(parts) != 5:
        raise ContractError(f"malformed augment description: {text!r}")
    fields = {}
    for part in parts:
        key, _, value = part.partition("=")
        fields[key] = value
    try:
        rot_spec, _, p_rot = fields["rot"].partition("@")
        rotation_set = () if rot_spec == "none" else tuple(int(r) for r in rot_spec.split("+"))
        return AugmentSpec(
            p_hflip=float(fields["hflip"]), p_vflip=float(fields["vflip"]),
            rotation_set=rotation_set, p_rotate=float(p_rot),
            jitter_magnitude=float(fields["jitter"]), noise_sigma=float(fields["sigma"]))
    except (KeyError, ValueError) as exc:
        raise ContractError(f"malformed augment description: {text!r}") from exc
