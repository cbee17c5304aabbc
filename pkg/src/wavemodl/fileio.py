"""Binary containers for volumes and model checkpoints, plus PGM previews.

Volume files carry a fixed little-endian header (magic, format version,
element type, dimensions, per-axis domain tags) followed by the raw payload
with the first axis fastest. Checkpoints serialize every learnable array at
full double precision together with a free-form JSON metadata block, so a
write/read cycle reproduces the model bit for bit.
"""

import json
import struct
from dataclasses import dataclass

import numpy as np

from .errors import CorruptFileError, InvalidInputError
from .modl import ConvLayer, ConvNetParams, ModlParams
from .volume import FREQUENCY, IMAGE, ComplexVolume

VOLUME_MAGIC = b"WMDL"
VOLUME_VERSION = 1
CHECKPOINT_MAGIC = b"WMCK"
CHECKPOINT_VERSION = 1

DTYPE_COMPLEX64 = 1
DTYPE_FLOAT32 = 2
DTYPE_INT32 = 3

_DTYPES = {
    DTYPE_COMPLEX64: np.dtype("<c8"),
    DTYPE_FLOAT32: np.dtype("<f4"),
    DTYPE_INT32: np.dtype("<i4"),
}

_TAG_NONE = 2
_TAG_CODES = {IMAGE: 0, FREQUENCY: 1, None: _TAG_NONE}
_TAG_NAMES = {0: IMAGE, 1: FREQUENCY, _TAG_NONE: None}


def _dtype_code_for(arr):
    if np.iscomplexobj(arr):
        return DTYPE_COMPLEX64
    if np.issubdtype(arr.dtype, np.floating):
        return DTYPE_FLOAT32
    if np.issubdtype(arr.dtype, np.integer) or arr.dtype == bool:
        return DTYPE_INT32
    raise InvalidInputError(f"unsupported array dtype {arr.dtype}")


@dataclass(frozen=True)
class VolumeRecord:
    """Decoded volume file: payload array, axis domain tags, element code."""

    data: np.ndarray
    domains: tuple
    dtype_code: int

    def to_complex_volume(self):
        if self.data.ndim != 3:
            raise InvalidInputError(
                f"record is {self.data.ndim}-D, a volume needs 3 axes"
            )
        domains = tuple(IMAGE if d is None else d for d in self.domains)
        return ComplexVolume(self.data.astype(np.complex128), domains)


def write_volume(path, data, domains=None):
    """Write an array (or ComplexVolume) to the volume container format.

    Complex input is stored as complex64, floats as float32, integers and
    booleans as int32. Domain tags default to untagged unless given or
    carried by a ComplexVolume.
    """
    if isinstance(data, ComplexVolume):
        if domains is None:
            domains = data.domains
        data = data.data
    arr = np.asarray(data)
    if arr.ndim < 1 or arr.ndim > 8:
        raise InvalidInputError(f"array rank {arr.ndim} is outside 1..8")
    code = _dtype_code_for(arr)
    if domains is None:
        domains = (None,) * arr.ndim
    domains = tuple(domains)
    if len(domains) != arr.ndim:
        raise InvalidInputError(
            f"{len(domains)} domain tags for a {arr.ndim}-D array"
        )
    tags = bytes(_TAG_CODES[d] for d in domains)
    payload = np.asfortranarray(arr.astype(_DTYPES[code])).tobytes(order="F")
    header = (
        VOLUME_MAGIC
        + struct.pack("<HHI", VOLUME_VERSION, code, arr.ndim)
        + struct.pack(f"<{arr.ndim}I", *arr.shape)
        + tags
    )
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(payload)


def _read_exact(fh, n, path, what):
    buf = fh.read(n)
    if len(buf) != n:
        raise CorruptFileError(
            f"{path}: truncated while reading {what}: expected {n} bytes, "
            f"got {len(buf)}"
        )
    return buf


def read_volume(path):
    """Read a volume container; structural problems raise CorruptFileError."""
    with open(path, "rb") as fh:
        magic = _read_exact(fh, 4, path, "magic")
        if magic != VOLUME_MAGIC:
            raise CorruptFileError(f"{path}: bad magic {magic!r}")
        version, code, ndim = struct.unpack("<HHI", _read_exact(fh, 8, path, "header"))
        if version != VOLUME_VERSION:
            raise CorruptFileError(
                f"{path}: format version {version} not supported "
                f"(expected {VOLUME_VERSION})"
            )
        if code not in _DTYPES:
            raise CorruptFileError(f"{path}: unknown element type code {code}")
        if not 1 <= ndim <= 8:
            raise CorruptFileError(f"{path}: implausible rank {ndim}")
        dims = struct.unpack(f"<{ndim}I", _read_exact(fh, 4 * ndim, path, "dims"))
        if any(d < 1 for d in dims):
            raise CorruptFileError(f"{path}: non-positive dimension in {dims}")
        tag_bytes = _read_exact(fh, ndim, path, "domain tags")
        if any(t not in _TAG_NAMES for t in tag_bytes):
            raise CorruptFileError(f"{path}: unknown domain tag in {tag_bytes!r}")
        dtype = _DTYPES[code]
        count = int(np.prod(dims))
        expected = count * dtype.itemsize
        payload = fh.read(expected + 1)
        if len(payload) < expected:
            raise CorruptFileError(
                f"{path}: truncated payload: expected {expected} bytes, "
                f"got {len(payload)}"
            )
        if len(payload) > expected:
            raise CorruptFileError(f"{path}: trailing bytes after payload")
    data = np.frombuffer(payload, dtype=dtype).reshape(dims, order="F")
    domains = tuple(_TAG_NAMES[t] for t in tag_bytes)
    return VolumeRecord(data, domains, code)


# ---------------------------------------------------------------------------
# checkpoints

def _pack_net(net):
    out = [struct.pack("<dI", net.leaky_slope, len(net.layers))]
    for layer in net.layers:
        cout, cin, kh, kw = layer.weights.shape
        out.append(struct.pack("<4I", cout, cin, kh, kw))
        out.append(layer.weights.astype("<f8").tobytes())
        out.append(layer.bias.astype("<f8").tobytes())
    return b"".join(out)


def _unpack_net(fh, path):
    slope, n_layers = struct.unpack("<dI", _read_exact(fh, 12, path, "net header"))
    if n_layers < 1 or n_layers > 64:
        raise CorruptFileError(f"{path}: implausible layer count {n_layers}")
    layers = []
    for _ in range(n_layers):
        cout, cin, kh, kw = struct.unpack(
            "<4I", _read_exact(fh, 16, path, "layer header")
        )
        wbytes = _read_exact(fh, cout * cin * kh * kw * 8, path, "layer weights")
        bbytes = _read_exact(fh, cout * 8, path, "layer bias")
        w = np.frombuffer(wbytes, dtype="<f8").reshape(cout, cin, kh, kw).copy()
        b = np.frombuffer(bbytes, dtype="<f8").copy()
        layers.append(ConvLayer(w, b))
    return ConvNetParams(tuple(layers), float(slope))


def write_checkpoint(path, params, metadata=None):
    """Serialize a ModlParams (exact float64) with a JSON metadata block."""
    if not isinstance(params, ModlParams):
        raise InvalidInputError("params must be a ModlParams")
    meta = json.dumps(metadata or {}, sort_keys=True).encode()
    blob = (
        CHECKPOINT_MAGIC
        + struct.pack("<HI", CHECKPOINT_VERSION, params.n_outer)
        + struct.pack("<dd", params.lambda1_raw, params.lambda2_raw)
        + _pack_net(params.d_image)
        + _pack_net(params.d_kspace)
        + struct.pack("<I", len(meta))
        + meta
    )
    with open(path, "wb") as fh:
        fh.write(blob)


def read_checkpoint(path):
    """Read a checkpoint; returns (ModlParams, metadata dict)."""
    with open(path, "rb") as fh:
        magic = _read_exact(fh, 4, path, "magic")
        if magic != CHECKPOINT_MAGIC:
            raise CorruptFileError(f"{path}: bad magic {magic!r}")
        version, n_outer = struct.unpack("<HI", _read_exact(fh, 6, path, "header"))
        if version != CHECKPOINT_VERSION:
            raise CorruptFileError(
                f"{path}: checkpoint version {version} not supported "
                f"(expected {CHECKPOINT_VERSION})"
            )
        l1, l2 = struct.unpack("<dd", _read_exact(fh, 16, path, "lambdas"))
        d_image = _unpack_net(fh, path)
        d_kspace = _unpack_net(fh, path)
        (meta_len,) = struct.unpack("<I", _read_exact(fh, 4, path, "metadata length"))
        meta_raw = _read_exact(fh, meta_len, path, "metadata")
        if fh.read(1):
            raise CorruptFileError(f"{path}: trailing bytes after metadata")
    try:
        metadata = json.loads(meta_raw.decode()) if meta_len else {}
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CorruptFileError(f"{path}: bad metadata block: {exc}") from exc
    params = ModlParams(d_image, d_kspace, l1, l2, int(n_outer))
    return params, metadata


# ---------------------------------------------------------------------------
# PGM previews

def write_pgm(path, image):
    """Write a 2-D real image as binary PGM, min-max windowed to 0..255."""
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 2:
        raise InvalidInputError(f"PGM preview needs a 2-D image, got {img.ndim}-D")
    if not np.all(np.isfinite(img)):
        raise InvalidInputError("PGM preview image has non-finite values")
    lo, hi = float(img.min()), float(img.max())
    if hi > lo:
        scaled = np.round((img - lo) / (hi - lo) * 255.0)
    else:
        scaled = np.zeros_like(img)
    body = scaled.astype(np.uint8).tobytes()
    header = f"P5\n{img.shape[1]} {img.shape[0]}\n255\n".encode()
    with open(path, "wb") as fh:
        fh.write(header + body)


def write_slice_preview(path, volume, axis=0, index=None):
    """Preview one magnitude slice of a 3-D volume (default: center slice)."""
    arr = volume.data if isinstance(volume, ComplexVolume) else np.asarray(volume)
    if arr.ndim != 3:
        raise InvalidInputError("slice preview needs a 3-D volume")
    if index is None:
        index = arr.shape[axis] // 2
    sl = [slice(None)] * 3
    sl[axis] = index
    write_pgm(path, np.abs(arr[tuple(sl)]))
