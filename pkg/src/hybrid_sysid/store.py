"""On-disk formats: dataset manifests, run configs and model bundles.

Manifest and config files are tab-separated text with ``#`` comment lines.
Model bundles are binary::

    magic "HSYSBNDL" | u32 version | u64 meta length | meta (JSON, UTF-8)
    | u64 payload length | payload (little-endian float64) | u32 CRC32

The CRC covers every byte before it. All writes go to a temporary file that
is renamed into place.
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
import tempfile
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import lstm as _lstm
from .pipeline import HybridPredictor, WindowingConfig
from .signal import StandardizationStats
from .spectral import FrfModel

MAGIC = b"HSYSBNDL"
BUNDLE_VERSION = 1
MANIFEST_HEADER = "# hybrid-sysid dataset manifest, format 1"
MANIFEST_COLUMNS = ("path", "kind", "role", "group", "sample_rate", "channels", "scale", "offset")
KINDS = ("noise", "serviceload", "sin", "sweep")
ROLES = ("train", "validation", "test")


class BundleError(ValueError):
    pass


class ChecksumError(BundleError):
    pass


class VersionError(BundleError):
    pass


class ManifestError(ValueError):
    pass


def atomic_write(path: str | Path, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


# --- manifest ---------------------------------------------------------------

@dataclass(frozen=True)
class ManifestEntry:
    path: str
    kind: str
    role: str
    group: str
    sample_rate: float
    channels: tuple[str, ...]
    scale: float = 1.0
    offset: float = 0.0

    def to_line(self) -> str:
        return "\t".join([self.path, self.kind, self.role, self.group, repr(float(self.sample_rate)),
                          ",".join(self.channels), repr(float(self.scale)), repr(float(self.offset))])

    @classmethod
    def from_line(cls, line: str, lineno: int = 0) -> "ManifestEntry":
        parts = line.rstrip("\n").split("\t")
        if len(parts) != len(MANIFEST_COLUMNS):
            raise ManifestError(f"line {lineno}: expected {len(MANIFEST_COLUMNS)} fields, got {len(parts)}")
        try:
            return cls(parts[0], parts[1], parts[2], parts[3], float(parts[4]),
                       tuple(parts[5].split(",")), float(parts[6]), float(parts[7]))
        except ValueError as exc:
            raise ManifestError(f"line {lineno}: {exc}") from None


@dataclass
class DatasetManifest:
    entries: list[ManifestEntry]
    root: Path | None = None        # directory that relative paths resolve against

    @classmethod
    def read(cls, path: str | Path) -> "DatasetManifest":
        return read_manifest(path)

    def resolve(self, entry: ManifestEntry) -> Path:
        p = Path(entry.path)
        return p if p.is_absolute() or self.root is None else self.root / p

    def select(self, role: str | None = None, kind: str | None = None,
               group: str | None = None) -> list[ManifestEntry]:
        return [e for e in self.entries if (role is None or e.role == role)
                and (kind is None or e.kind == kind) and (group is None or e.group == group)]

    def format(self) -> str:
        lines = [MANIFEST_HEADER, "# " + "\t".join(MANIFEST_COLUMNS)]
        lines += [e.to_line() for e in self.entries]
        return "\n".join(lines) + "\n"

    def digest(self) -> str:
        return hashlib.sha256(self.format().encode()).hexdigest()


def parse_manifest(text: str, root: Path | None = None) -> DatasetManifest:
    entries = []
    for i, line in enumerate(text.splitlines(), 1):
        if not line.strip() or line.startswith("#"):
            continue
        entries.append(ManifestEntry.from_line(line, i))
    return DatasetManifest(entries, root)


def read_manifest(path: str | Path) -> DatasetManifest:
    path = Path(path)
    return parse_manifest(path.read_text(encoding="utf-8"), path.parent)


def write_manifest(manifest: DatasetManifest, path: str | Path) -> None:
    atomic_write(path, manifest.format().encode())


def _csv_header(path: Path) -> list[str]:
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip() and not line.startswith("#"):
                return [c.strip() for c in line.strip().split(",")]
    return []


def validate_manifest(manifest: DatasetManifest,
                      require_roles: Sequence[str] = ()) -> DatasetManifest:
    """Check paths, tags, referenced CSV headers and sample rates.

    Raises :class:`ManifestError` describing the first problem found.
    """
    if not manifest.entries:
        raise ManifestError("manifest has no entries")
    seen = set()
    for e in manifest.entries:
        if e.path in seen:
            raise ManifestError(f"duplicate path {e.path!r}")
        seen.add(e.path)
        if e.kind not in KINDS:
            raise ManifestError(f"{e.path}: unknown kind {e.kind!r}")
        if e.role not in ROLES:
            raise ManifestError(f"{e.path}: unknown role {e.role!r}")
        if not e.sample_rate > 0:
            raise ManifestError(f"{e.path}: sample rate must be positive")
    rates = {e.sample_rate for e in manifest.entries}
    if len(rates) > 1:
        raise ManifestError(f"mixed sample rates in one experiment: {sorted(rates)}")
    channels = {e.channels for e in manifest.entries}
    if len(channels) > 1:
        raise ManifestError("entries disagree on the channel list")
    for e in manifest.entries:
        p = manifest.resolve(e)
        if not p.is_file():
            raise ManifestError(f"missing data file {e.path!r} (looked for {p})")
        header = _csv_header(p)
        if header[:1] != ["time"] or tuple(header[1:]) != e.channels:
            raise ManifestError(f"{e.path}: CSV header {header} does not match manifest channels {list(e.channels)}")
    missing = [r for r in require_roles if not manifest.select(role=r)]
    if missing:
        raise ManifestError(f"manifest has no files with role(s) {missing}")
    return manifest


# --- run config --------------------------------------------------------------

def parse_config(text: str) -> dict[str, str]:
    """``key<TAB>value`` lines; ``#`` starts a comment line."""
    out = {}
    for i, line in enumerate(text.splitlines(), 1):
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        parts = line.split("\t", 1)
        if len(parts) != 2 or not parts[0].strip():
            raise ValueError(f"config line {i}: expected 'key<TAB>value'")
        out[parts[0].strip()] = parts[1].strip()
    return out


def read_config(path: str | Path) -> dict[str, str]:
    return parse_config(Path(path).read_text(encoding="utf-8"))


def format_config(config: dict) -> str:
    lines = ["# hybrid-sysid run config"]
    lines += [f"{k}\t{config[k]}" for k in sorted(config)]
    return "\n".join(lines) + "\n"


def config_digest(config: dict) -> str:
    return hashlib.sha256(format_config({k: str(v) for k, v in config.items()}).encode()).hexdigest()


# --- model bundles -------------------------------------------------------------

@dataclass(eq=False)
class ModelBundle:
    predictor: HybridPredictor
    provenance: dict = field(default_factory=dict)

    @property
    def scheme(self) -> str:
        return self.predictor.scheme

    def n_lstm_parameters(self) -> int:
        return 0 if self.predictor.lstm is None else self.predictor.lstm.n_parameters()


def _arrays(p: HybridPredictor) -> list[tuple[str, np.ndarray]]:
    out = []
    if p.frf is not None:
        out += [("frf.frequencies", p.frf.frequencies), ("frf.H.real", p.frf.H.real),
                ("frf.H.imag", p.frf.H.imag)]
    if p.lstm is not None:
        for i, blk in enumerate(p.lstm.blocks):
            out += [(f"lstm.{i}.Wx", blk.Wx), (f"lstm.{i}.Wh", blk.Wh), (f"lstm.{i}.b", blk.b)]
        out += [("lstm.W_fc", p.lstm.W_fc), ("lstm.b_fc", p.lstm.b_fc),
                ("lstm.input_stats.mean", p.lstm.input_stats.mean),
                ("lstm.input_stats.std", p.lstm.input_stats.std),
                ("lstm.output_stats.mean", p.lstm.output_stats.mean),
                ("lstm.output_stats.std", p.lstm.output_stats.std)]
    return out


def encode_bundle(bundle: ModelBundle) -> bytes:
    p = bundle.predictor
    arrays = _arrays(p)
    meta = {
        "version": BUNDLE_VERSION,
        "scheme": p.scheme,
        "input_names": list(p.input_names),
        "output_names": list(p.output_names),
        "windowing": {"length": p.windowing.length, "overlap": p.windowing.overlap,
                      "power": p.windowing.power},
        "frf": None if p.frf is None else {
            "n_freq": int(p.frf.frequencies.size),
            "input_names": list(p.frf.input_names),
            "output_names": list(p.frf.output_names),
            "band_limit": p.frf.band_limit,
            "sample_rate": p.frf.sample_rate,
            "segment_length": p.frf.segment_length,
        },
        "lstm": None if p.lstm is None else {
            "architecture": list(p.lstm.architecture),
            "n_inputs": p.lstm.n_inputs,
            "n_outputs": p.lstm.n_outputs,
            "n_parameters": p.lstm.n_parameters(),
            "input_stats_names": list(p.lstm.input_stats.names),
            "output_stats_names": list(p.lstm.output_stats.names),
        },
        "arrays": [[name, list(a.shape)] for name, a in arrays],
        "provenance": bundle.provenance,
    }
    meta_bytes = json.dumps(meta, sort_keys=True, separators=(",", ":")).encode()
    payload = b"".join(np.ascontiguousarray(a, dtype="<f8").tobytes() for _, a in arrays)
    body = (MAGIC + struct.pack("<I", BUNDLE_VERSION) + struct.pack("<Q", len(meta_bytes)) + meta_bytes
            + struct.pack("<Q", len(payload)) + payload)
    return body + struct.pack("<I", zlib.crc32(body))


def decode_bundle(data: bytes) -> ModelBundle:
    head = len(MAGIC) + 4 + 8
    if len(data) < head + 8 + 4:
        raise ChecksumError("bundle too short; file truncated")
    body, (crc,) = data[:-4], struct.unpack("<I", data[-4:])
    if zlib.crc32(body) != crc:
        raise ChecksumError("bundle checksum mismatch; file corrupted or truncated")
    if data[:len(MAGIC)] != MAGIC:
        raise BundleError("not a model bundle (bad magic)")
    (version,) = struct.unpack("<I", data[len(MAGIC):len(MAGIC) + 4])
    if version != BUNDLE_VERSION:
        raise VersionError(f"unsupported bundle version {version} (expected {BUNDLE_VERSION})")
    (meta_len,) = struct.unpack("<Q", data[len(MAGIC) + 4:head])
    if head + meta_len + 8 > len(body):
        raise BundleError("corrupted meta length field")
    meta = json.loads(body[head:head + meta_len].decode())
    pos = head + meta_len
    (payload_len,) = struct.unpack("<Q", body[pos:pos + 8])
    payload = body[pos + 8:]
    if payload_len != len(payload) or payload_len % 8:
        raise BundleError("corrupted payload length field")
    values = np.frombuffer(payload, dtype="<f8").astype(float)

    arrays, off = {}, 0
    for name, shape in meta["arrays"]:
        n = int(np.prod(shape, dtype=int))
        if off + n > values.size:
            raise BundleError("payload shorter than declared arrays")
        arrays[name] = values[off:off + n].reshape(shape).copy()
        off += n
    if off != values.size:
        raise BundleError("payload longer than declared arrays")

    frf = None
    if meta["frf"] is not None:
        fm = meta["frf"]
        frf = FrfModel(arrays["frf.frequencies"], arrays["frf.H.real"] + 1j * arrays["frf.H.imag"],
                       fm["band_limit"], tuple(fm["input_names"]), tuple(fm["output_names"]),
                       fm["sample_rate"], fm["segment_length"])
    net = None
    if meta["lstm"] is not None:
        lm = meta["lstm"]
        blocks = [_lstm.LstmBlock(arrays[f"lstm.{i}.Wx"], arrays[f"lstm.{i}.Wh"], arrays[f"lstm.{i}.b"])
                  for i in range(len(lm["architecture"]))]
        net = _lstm.LstmNetwork(
            blocks, arrays["lstm.W_fc"], arrays["lstm.b_fc"],
            StandardizationStats(tuple(lm["input_stats_names"]), arrays["lstm.input_stats.mean"],
                                 arrays["lstm.input_stats.std"]),
            StandardizationStats(tuple(lm["output_stats_names"]), arrays["lstm.output_stats.mean"],
                                 arrays["lstm.output_stats.std"]),
        )
        expected = _lstm.parameter_count(lm["architecture"], lm["n_inputs"], lm["n_outputs"])
        if net.n_parameters() != expected or lm["n_parameters"] != expected:
            raise BundleError(f"parameter arrays hold {net.n_parameters()} values, architecture needs {expected}")
    w = meta["windowing"]
    predictor = HybridPredictor(meta["scheme"], tuple(meta["input_names"]), tuple(meta["output_names"]),
                                WindowingConfig(w["length"], w["overlap"], w["power"]), net, frf)
    return ModelBundle(predictor, meta["provenance"])


def save_bundle(bundle: ModelBundle, path: str | Path) -> None:
    atomic_write(path, encode_bundle(bundle))


def load_bundle(path: str | Path) -> ModelBundle:
    return decode_bundle(Path(path).read_bytes())
