"""Spatial description backends: one fixed-length vector per sub-aperture view.

The production extractor (a pretrained face CNN's first fully-connected
layer) lives outside this package; backends here either look up externally
computed vectors or compute deterministic stand-ins.  All backends are
frozen at description time."""

import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import kernels

EMBED_MAGIC = b"LFEM"
EMBED_VERSION = 1


class DescriptorError(Exception):
    pass


@dataclass
class SpatialDescription:
    values: np.ndarray
    dim: int = 0

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 1:
            raise DescriptorError(f"description must be 1-D, got {self.values.shape}")
        if not np.all(np.isfinite(self.values)):
            raise DescriptorError("description contains non-finite entries")
        self.dim = self.values.shape[0]


class EmbeddingFileBackend:
    """Exact-key lookup of externally computed vectors, keyed (image_id, u, v)."""

    def __init__(self, path):
        self.index, self.dim = load_embedding_file(path)

    def describe(self, pixels, image_id, u, v):
        key = (image_id, u, v)
        if key not in self.index:
            raise DescriptorError(f"embedding file has no record for {key}")
        return SpatialDescription(self.index[key].astype(np.float64))


class RandomProjectionBackend:
    """Seeded linear projection of the flattened [0,1] pixels, no bias."""

    def __init__(self, input_h, input_w, out_dim, seed):
        rng = np.random.default_rng([seed, 0x9E37])
        n = input_h * input_w * 3
        self.input_h = input_h
        self.input_w = input_w
        self.dim = out_dim
        self.proj = rng.standard_normal((out_dim, n)) / np.sqrt(n)

    def describe(self, pixels, image_id=None, u=None, v=None):
        if pixels.shape != (self.input_h, self.input_w, 3):
            raise DescriptorError(
                f"expected {self.input_h}x{self.input_w}x3 view, got {pixels.shape}"
            )
        flat = pixels.astype(np.float64).reshape(-1) / 255.0
        return SpatialDescription(self.proj @ flat)


class ToyCnnBackend:
    """Small frozen conv net (2 conv + pool stages, 1 dense) with seeded weights.

    A learned-texture stand-in for the external extractor; never trained."""

    def __init__(self, input_h, input_w, out_dim, seed, conv_channels=(8, 16),
                 kernel_size=3):
        rng = np.random.default_rng([seed, 0xC44])
        self.input_h = input_h
        self.input_w = input_w
        self.dim = out_dim
        k = kernel_size
        c0, c1 = conv_channels
        self.w1 = rng.standard_normal((c0, k, k, 3)) / np.sqrt(k * k * 3)
        self.b1 = np.zeros(c0)
        self.w2 = rng.standard_normal((c1, k, k, c0)) / np.sqrt(k * k * c0)
        self.b2 = np.zeros(c1)
        h, w = input_h, input_w
        h, w = (h - k + 1) // 2, (w - k + 1) // 2
        h, w = (h - k + 1) // 2, (w - k + 1) // 2
        if h < 1 or w < 1:
            raise DescriptorError(
                f"input {input_h}x{input_w} too small for the conv stack"
            )
        n = h * w * c1
        self.w3 = rng.standard_normal((out_dim, n)) / np.sqrt(n)
        self.b3 = np.zeros(out_dim)

    def describe(self, pixels, image_id=None, u=None, v=None):
        if pixels.shape != (self.input_h, self.input_w, 3):
            raise DescriptorError(
                f"expected {self.input_h}x{self.input_w}x3 view, got {pixels.shape}"
            )
        x = pixels.astype(np.float64) / 255.0
        x = np.maximum(kernels.conv2d_valid(x, self.w1, self.b1), 0.0)
        x = kernels.maxpool2(x)
        x = np.maximum(kernels.conv2d_valid(x, self.w2, self.b2), 0.0)
        x = kernels.maxpool2(x)
        return SpatialDescription(self.w3 @ x.reshape(-1) + self.b3)


def describe(backend, pixels, image_id, u, v):
    return backend.describe(pixels, image_id, u, v)


def describe_sequence(backend, array, seq, workers=1):
    """Describe every view in sequence order.

    Fan-out across workers never changes the output: results are collected
    in sequence order regardless of scheduling."""

    def one(pos):
        u, v = pos
        try:
            return backend.describe(array.view(u, v), array.image_id, u, v)
        except DescriptorError as exc:
            raise DescriptorError(f"at position ({u}, {v}): {exc}") from exc

    if workers <= 1:
        return [one(pos) for pos in seq.positions]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(one, seq.positions))


def save_embedding_file(path, records, dim):
    """Write the binary embedding file.

    Layout (little-endian): magic ``LFEM``, u32 version, u32 dim, u32 count,
    then per record u16 id-length, UTF-8 image_id, u8 u, u8 v, dim f32 values.
    """
    records = list(records)
    with open(path, "wb") as fh:
        fh.write(EMBED_MAGIC)
        fh.write(struct.pack("<III", EMBED_VERSION, dim, len(records)))
        for (image_id, u, v), values in records:
            values = np.asarray(values, dtype="<f4")
            if values.shape != (dim,):
                raise DescriptorError(
                    f"record {(image_id, u, v)} has dim {values.shape}, expected {dim}"
                )
            ident = image_id.encode("utf-8")
            fh.write(struct.pack("<H", len(ident)))
            fh.write(ident)
            fh.write(struct.pack("<BB", u, v))
            fh.write(values.tobytes())


def load_embedding_file(path):
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != EMBED_MAGIC:
        raise DescriptorError(f"{path}: bad magic {data[:4]!r}")
    version, dim, count = struct.unpack_from("<III", data, 4)
    if version != EMBED_VERSION:
        raise DescriptorError(f"{path}: unsupported version {version}")
    index = {}
    off = 16
    for _ in range(count):
        (id_len,) = struct.unpack_from("<H", data, off)
        off += 2
        image_id = data[off : off + id_len].decode("utf-8")
        off += id_len
        u, v = struct.unpack_from("<BB", data, off)
        off += 2
        values = np.frombuffer(data, dtype="<f4", count=dim, offset=off).copy()
        off += 4 * dim
        index[(image_id, u, v)] = values
    if off != len(data):
        raise DescriptorError(f"{path}: {len(data) - off} trailing bytes")
    return index, dim
