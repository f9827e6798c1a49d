"""Seeded multi-domain identity datasets and their on-disk manifest format.

An identity is a latent prototype image; a domain is a per-channel affine
style (gain, bias) plus a fixed low-frequency texture field and pixel
noise.  Prototypes depend only on ``(seed, identity)``, so one identity
rendered in two domains differs only by style and noise.

Manifest directory layout::

    manifest.txt   "bridgelab-manifest v1", then "identity,domain,offset" rows
    images.bin     b"BLIM" + u32 h, w, c + little-endian float32 images

``offset`` is the byte offset of the image relative to the end of the
sidecar header.
"""
from __future__ import annotations

import os
import struct
from dataclasses import dataclass, field

import numpy as np

from .checkpoint import atomic_write_bytes
from .errors import DomainError, ParseError

IMAGE_SHAPE = (8, 8, 4)
MANIFEST_HEADER = "bridgelab-manifest v1"
MANIFEST_NAME = "manifest.txt"
BLOB_NAME = "images.bin"
BLOB_MAGIC = b"BLIM"
N_BASIS = 6


@dataclass
class DomainSpec:
    domain_id: int
    gain: np.ndarray
    bias: np.ndarray
    texture_scale: float = 0.0
    noise_std: float = 0.0

    def __post_init__(self):
        self.gain = np.asarray(self.gain, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if (self.gain <= 0).any():
            raise DomainError("gain must be positive")
        if self.texture_scale < 0 or self.noise_std < 0:
            raise DomainError("texture_scale and noise_std must be non-negative")


@dataclass
class Sample:
    image: np.ndarray
    identity: int
    domain_id: int


@dataclass
class Dataset:
    samples: list = field(default_factory=list)

    def __len__(self):
        return len(self.samples)

    def __iter__(self):
        return iter(self.samples)

    @property
    def images(self):
        if not self.samples:
            return np.zeros((0,) + IMAGE_SHAPE, dtype=np.float32)
        return np.stack([s.image for s in self.samples])

    @property
    def identities(self):
        return np.array([s.identity for s in self.samples], dtype=np.int64)

    @property
    def domains(self):
        return np.array([s.domain_id for s in self.samples], dtype=np.int64)

    def __eq__(self, other):
        if not isinstance(other, Dataset) or len(self) != len(other):
            return False
        return all(
            a.identity == b.identity and a.domain_id == b.domain_id
            and a.image.shape == b.image.shape
            and a.image.tobytes() == b.image.tobytes()
            for a, b in zip(self.samples, other.samples)
        )

    def __add__(self, other):
        return Dataset(list(self.samples) + list(other.samples))


def _low_freq_field(rng, shape, n_basis=N_BASIS):
    """Smooth random field: a sum of random-phase cosine waves per channel."""
    h, w, c = shape
    yy, xx = np.meshgrid(np.arange(h) / h, np.arange(w) / w, indexing="ij")
    out = np.zeros(shape)
    for ch in range(c):
        for _ in range(n_basis):
            ky, kx = rng.integers(0, 3, size=2)
            phase = rng.uniform(0, 2 * np.pi)
            amp = rng.normal()
            out[:, :, ch] += amp * np.cos(2 * np.pi * (ky * yy + kx * xx) + phase)
    return out / np.sqrt(n_basis / 2.0)


def prototype(seed, identity, shape=IMAGE_SHAPE):
    """Latent content image of one identity; independent of the domain."""
    rng = np.random.default_rng([int(seed), 1, int(identity)])
    return _low_freq_field(rng, shape)


def texture(seed, domain_id, shape=IMAGE_SHAPE):
    rng = np.random.default_rng([int(seed), 2, int(domain_id)])
    return _low_freq_field(rng, shape)


def render(proto, tex, spec, noise):
    return spec.gain * (proto + spec.texture_scale * tex) + spec.bias + spec.noise_std * noise


def generate_domain(seed, n_ids, n_per_id, spec, id_offset=0, shape=IMAGE_SHAPE,
                    sample_seed=None):
    """Render ``n_ids`` identities (``id_offset`` onwards) ``n_per_id`` times.

    Images are float32.  ``sample_seed`` (default ``seed``) drives only the
    per-sample noise, so one identity can be re-rendered with fresh noise.
    """
    if n_ids < 2 or n_per_id < 2:
        raise DomainError("need at least 2 identities with 2 samples each")
    if len(spec.gain) != shape[2] or len(spec.bias) != shape[2]:
        raise DomainError("gain/bias length must equal the channel count")
    sample_seed = seed if sample_seed is None else sample_seed
    tex = texture(seed, spec.domain_id, shape)
    samples = []
    for k in range(id_offset, id_offset + n_ids):
        proto = prototype(seed, k, shape)
        rng = np.random.default_rng([int(sample_seed), 3, int(spec.domain_id), k])
        for _ in range(n_per_id):
            img = render(proto, tex, spec, rng.normal(size=shape))
            samples.append(Sample(img.astype(np.float32), k, spec.domain_id))
    return Dataset(samples)


def default_specs(seed=0, n_domains=2, channels=IMAGE_SHAPE[2], texture_scale=0.3,
                  noise_std=0.3):
    """Distinct per-channel styles, one per domain, drawn from ``seed``."""
    rng = np.random.default_rng([int(seed), 4])
    specs = []
    for d in range(n_domains):
        gain = np.exp(rng.normal(0.0, 0.5, size=channels))
        bias = rng.normal(0.0, 1.0, size=channels)
        specs.append(DomainSpec(d, gain, bias, texture_scale, noise_std))
    return specs


# ---------------------------------------------------------------------------
# manifest IO
# ---------------------------------------------------------------------------


def write_manifest(dataset, path):
    """Write ``dataset`` into directory ``path`` (both files atomically)."""
    os.makedirs(path, exist_ok=True)
    shape = dataset.samples[0].image.shape if len(dataset) else IMAGE_SHAPE
    lines = [MANIFEST_HEADER]
    chunks = [BLOB_MAGIC, struct.pack("<3I", *shape)]
    offset = 0
    for s in dataset:
        if s.image.shape != shape:
            raise DomainError("all images in a manifest must share one shape")
        raw = np.ascontiguousarray(s.image, dtype="<f4").tobytes()
        lines.append(f"{s.identity},{s.domain_id},{offset}")
        chunks.append(raw)
        offset += len(raw)
    atomic_write_bytes(os.path.join(path, BLOB_NAME), b"".join(chunks))
    atomic_write_bytes(os.path.join(path, MANIFEST_NAME),
                       ("\n".join(lines) + "\n").encode("utf-8"))


def read_manifest(path):
    """Load a dataset directory; any inconsistency raises :class:`ParseError`."""
    mpath = os.path.join(path, MANIFEST_NAME)
    bpath = os.path.join(path, BLOB_NAME)
    try:
        with open(mpath, "rb") as fh:
            text = fh.read().decode("utf-8")
        with open(bpath, "rb") as fh:
            blob = fh.read()
    except UnicodeDecodeError as exc:
        raise ParseError(f"manifest is not utf-8: {exc}") from exc
    if len(blob) < 16 or blob[:4] != BLOB_MAGIC:
        raise ParseError(f"{BLOB_NAME}: missing or bad header")
    shape = struct.unpack("<3I", blob[4:16])
    payload = blob[16:]
    size = 4 * int(np.prod(shape))
    if not text.endswith("\n"):
        raise ParseError("manifest does not end with a newline (truncated?)",
                         line=text.count("\n") + 1)
    lines = text.split("\n")[:-1]
    if not lines or lines[0] != MANIFEST_HEADER:
        raise ParseError(f"expected header {MANIFEST_HEADER!r}", line=1)
    samples = []
    for lineno, line in enumerate(lines[1:], start=2):
        parts = line.split(",")
        if len(parts) != 3:
            raise ParseError(f"expected 3 fields, got {len(parts)}", line=lineno)
        try:
            identity, domain, offset = (int(p) for p in parts)
        except ValueError as exc:
            raise ParseError(f"non-integer field: {line!r}", line=lineno) from exc
        if offset < 0 or offset % size or offset + size > len(payload):
            raise ParseError(f"image offset {offset} outside the sidecar blob", line=lineno)
        img = np.frombuffer(payload[offset:offset + size], dtype="<f4").reshape(shape)
        samples.append(Sample(img.astype(np.float32), identity, domain))
    if len(samples) * size != len(payload):
        raise ParseError(
            f"{len(samples)} records cover {len(samples) * size} of {len(payload)} blob bytes",
            line=len(lines),
        )
    return Dataset(samples)
