"""Synthetic excitations and plants.

Units follow test-rig conventions: forces in kN, displacements in mm, time in
s, masses in kN*s^2/mm, stiffnesses in kN/mm and damping in kN*s/mm.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .signal import MultiChannelSignal, lowpass_fft, write_csv
from .spectral import FrfModel, frf_predict
from .store import DatasetManifest, ManifestEntry, write_manifest

AXES = ("x", "y", "z")
DRIVE = tuple(f"drive_{a}" for a in AXES)
DISP = tuple(f"disp_{a}" for a in AXES)
FORCE = tuple(f"force_{a}" for a in AXES)

KINDS = ("noise", "serviceload", "sin", "sweep")
#: (train, validation, test) shares per data kind
ROLE_SHARES = {
    "noise": (0.85, 0.06, 0.09),
    "serviceload": (0.0, 0.72, 0.28),
    "sin": (0.0, 0.8, 0.2),
    "sweep": (0.0, 0.8, 0.2),
}
GROUPS = {"noise": "N", "serviceload": "SL", "sin": "SIN", "sweep": "SWEEP"}


def derive_seed(root: int, label: str, index: int = 0) -> int:
    """Independent child seed for a named component."""
    ss = np.random.SeedSequence([int(root) & 0xFFFFFFFF, zlib.crc32(label.encode()), int(index)])
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def derive_rng(root: int, label: str, index: int = 0) -> np.random.Generator:
    return np.random.default_rng(derive_seed(root, label, index))


# --- noise -----------------------------------------------------------------

@dataclass(frozen=True)
class NoiseSpec:
    white_limit: float = 20.0
    pink_limit: float = 50.0
    mean_range: tuple[float, float] = (-4.0, 4.0)
    amplitude_range: tuple[float, float] = (0.5, 2.0)
    duration: float = 180.0
    sample_rate: float = 1000.0
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.white_limit < self.pink_limit < self.sample_rate / 2:
            raise ValueError("need 0 < white_limit < pink_limit < sample_rate / 2")
        for lo, hi in (self.mean_range, self.amplitude_range):
            if lo > hi:
                raise ValueError(f"invalid range ({lo}, {hi})")
        if self.duration <= 0:
            raise ValueError("duration must be positive")

    @property
    def n_samples(self) -> int:
        return int(round(self.duration * self.sample_rate))


def noise_spectrum(n: int, sample_rate: float, white_limit: float, pink_limit: float,
                   rng: np.random.Generator) -> np.ndarray:
    """Full Hermitian FFT spectrum: unit magnitude to ``white_limit``, then PSD ~ 1/f."""
    f = np.fft.rfftfreq(n, 1.0 / sample_rate)
    mag = np.zeros(f.size)
    white = (f > 0) & (f <= white_limit)
    pink = (f > white_limit) & (f <= pink_limit)
    mag[white] = 1.0
    mag[pink] = np.sqrt(white_limit / f[pink])
    if n % 2 == 0:
        mag[-1] = 0.0
    half = mag * np.exp(2j * np.pi * rng.random(f.size))
    full = np.zeros(n, dtype=complex)
    full[:f.size] = half
    # negative frequencies mirror the positive ones
    k = np.arange(1, (n + 1) // 2)
    full[n - k] = np.conj(half[k])
    return full


def generate_noise(spec: NoiseSpec, names: Sequence[str] = DRIVE) -> MultiChannelSignal:
    """Mutually independent white-pink noise channels with random mean and peak amplitude."""
    rng = np.random.default_rng(spec.seed)
    n = spec.n_samples
    cols = []
    for _ in names:
        x = np.fft.ifft(noise_spectrum(n, spec.sample_rate, spec.white_limit, spec.pink_limit, rng))
        if np.max(np.abs(x.imag)) > 1e-10 * max(np.max(np.abs(x.real)), 1e-300):
            raise AssertionError("synthesized noise is not real")
        x = x.real
        x = x - x.mean()
        peak = np.max(np.abs(x))
        amp = rng.uniform(*spec.amplitude_range)
        mean = rng.uniform(*spec.mean_range)
        cols.append(mean + (amp / peak) * x if peak > 0 else np.full(n, mean))
    return MultiChannelSignal(spec.sample_rate, tuple(names), np.column_stack(cols))


def lti_respond(frf: FrfModel, excitation: MultiChannelSignal) -> MultiChannelSignal:
    """Response of the linear plant described by ``frf``."""
    return frf_predict(frf, excitation)


def study_plant(sample_rate: float = 200.0, n_freq: int = 2049) -> FrfModel:
    """Coupled 3x3 displacement -> force plant used by the dataset-size study."""
    stiffness = np.array([[1.0, 0.2, 0.1], [0.2, 0.8, 0.15], [0.1, 0.15, 1.2]])
    fn, zeta = 35.0, 0.4

    def response(f):
        r = f / fn
        g = 1.0 / (1.0 - r ** 2 + 2j * zeta * r)
        return g[:, None, None] * stiffness[None]

    return FrfModel.from_response(response, DISP, FORCE, sample_rate, n_freq,
                                  band_limit=min(80.0, sample_rate / 2))


# --- hysteretic rig --------------------------------------------------------

@dataclass(frozen=True)
class RigParams:
    """Three coupled oscillators with Bouc-Wen hysteretic springs.

    Restoring force of channel ``i``::

        R_i = a_i k_i x_i + (1 - a_i) k_i z_i + sum_j coupling_ij sqrt(k_i k_j) x_j

    with ``dz/dt = v - beta |v| |z|^(n-1) z - gamma v |z|^n`` and
    ``beta = gamma = 0.5 / yield^n`` so that ``|z|`` saturates at ``yield``.
    """

    mass: tuple[float, float, float] = (1.0e-4, 1.2e-4, 0.8e-4)
    damping: tuple[float, float, float] = (2.0e-3, 2.0e-3, 2.0e-3)
    stiffness: tuple[float, float, float] = (1.0, 0.8, 1.5)
    yield_amplitude: tuple[float, float, float] = (0.4, 0.4, 0.4)
    smoothness: float = 2.0
    post_yield_ratio: tuple[float, float, float] = (0.25, 0.25, 0.25)
    coupling: tuple[tuple[float, ...], ...] = ((0.0, 0.05, 0.025), (0.05, 0.0, 0.05), (0.025, 0.05, 0.0))
    substeps: int = 8

    def __post_init__(self):
        for name in ("mass", "damping", "stiffness", "yield_amplitude"):
            if np.any(np.asarray(getattr(self, name)) <= 0):
                raise ValueError(f"{name} must be positive")
        c = np.asarray(self.coupling, dtype=float)
        if c.shape != (3, 3) or np.any(np.diag(c) != 0) or not np.allclose(c, c.T):
            raise ValueError("coupling must be a symmetric 3x3 matrix with zero diagonal")
        if np.max(np.abs(np.linalg.eigvals(c))) >= 1:
            raise ValueError("coupling spectral radius must be < 1")
        if self.smoothness < 1 or self.substeps < 1:
            raise ValueError("invalid smoothness or substeps")

    def linearized(self) -> "RigParams":
        """Same rig with hysteresis pushed out of reach and no coupling."""
        return replace(self, yield_amplitude=(1e12,) * 3, coupling=((0.0,) * 3,) * 3)


class RigDiverged(RuntimeError):
    pass


def rig_respond(params: RigParams, drive: MultiChannelSignal | Sequence[MultiChannelSignal]):
    """Integrate the rig for one drive (or several equal-length drives at once).

    The drive is applied directly as force. Returns signals with channels
    ``disp_x..z`` and ``force_x..z`` (total restoring force) sampled like the
    drive.
    """
    single = isinstance(drive, MultiChannelSignal)
    drives = [drive] if single else list(drive)
    if any(d.n_channels != 3 for d in drives):
        raise ValueError("the rig takes exactly three drive channels")
    fs = drives[0].sample_rate
    n = len(drives[0])
    if any(len(d) != n or d.sample_rate != fs for d in drives):
        raise ValueError("batched drives must share length and sample rate")
    f = np.stack([d.data for d in drives])            # (B, n, 3)
    # non-finite states are caught per sample and reported as RigDiverged
    with np.errstate(invalid="ignore", over="ignore"):
        disp, force = _integrate(params, f, 1.0 / fs)
    out = [MultiChannelSignal(fs, DISP + FORCE, np.hstack([disp[b], force[b]]))
           for b in range(len(drives))]
    return out[0] if single else out


def _integrate(p: RigParams, f: np.ndarray, dt_sample: float):
    B, n, _ = f.shape
    s = p.substeps
    h = dt_sample / s
    m = np.asarray(p.mass)
    c = np.asarray(p.damping)
    k = np.asarray(p.stiffness)
    a = np.asarray(p.post_yield_ratio)
    xy = np.asarray(p.yield_amplitude, dtype=float)
    nexp = p.smoothness
    beta = 0.5 / xy ** nexp
    kc = np.asarray(p.coupling) * np.sqrt(np.outer(k, k))

    # drive at every half substep, linear between samples
    t_fine = np.arange(2 * s * (n - 1) + 1) / (2 * s)
    idx = np.arange(n)
    f_fine = np.empty((B, t_fine.size, 3))
    for b in range(B):
        for j in range(3):
            f_fine[b, :, j] = np.interp(t_fine, idx, f[b, :, j])

    def restoring(x, z):
        return a * k * x + (1 - a) * k * z + x @ kc.T

    def deriv(x, v, z, force):
        acc = (force - c * v - restoring(x, z)) / m
        az = np.abs(z)
        dz = v - beta * (np.abs(v) * az ** (nexp - 1) * z + v * az ** nexp)
        return v, acc, dz

    x = np.zeros((B, 3))
    v = np.zeros((B, 3))
    z = np.zeros((B, 3))
    disp = np.empty((B, n, 3))
    force = np.empty((B, n, 3))
    disp[:, 0] = x
    force[:, 0] = restoring(x, z)
    for i in range(n - 1):
        for j in range(s):
            q = 2 * (i * s + j)
            f0, f1, f2 = f_fine[:, q], f_fine[:, q + 1], f_fine[:, q + 2]
            k1 = deriv(x, v, z, f0)
            k2 = deriv(x + 0.5 * h * k1[0], v + 0.5 * h * k1[1], z + 0.5 * h * k1[2], f1)
            k3 = deriv(x + 0.5 * h * k2[0], v + 0.5 * h * k2[1], z + 0.5 * h * k2[2], f1)
            k4 = deriv(x + h * k3[0], v + h * k3[1], z + h * k3[2], f2)
            x = x + h / 6 * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0])
            v = v + h / 6 * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1])
            z = z + h / 6 * (k1[2] + 2 * k2[2] + 2 * k3[2] + k4[2])
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(v)) and np.all(np.isfinite(z))):
            raise RigDiverged(f"integration diverged at sample {i + 1} (t = {(i + 1) * dt_sample:.6g} s)")
        disp[:, i + 1] = x
        force[:, i + 1] = restoring(x, z)
    return disp, force


# --- deterministic drive shapes ----------------------------------------------

SERVICE_LOAD_PEAK = 2.0


def service_load_shape(shape_id: int, n: int, sample_rate: float) -> np.ndarray:
    """Base service-load drive ``(n, 3)``: irregular, amplitude-modulated, peak 2 kN.

    Every shape is a fixed sum of randomly parameterized tones under slow
    envelopes; the parameters come from a fixed seed per ``shape_id``.
    """
    rng = np.random.default_rng(1_000_003 + int(shape_id))
    t = np.arange(n) / sample_rate
    out = np.empty((n, 3))
    for ch in range(3):
        freqs = rng.uniform(0.3, 18.0, 14)
        amps = rng.uniform(0.2, 1.0, 14) / np.sqrt(1.0 + freqs)
        phases = rng.uniform(0, 2 * np.pi, 14)
        env_f = rng.uniform(0.02, 0.15, 14)
        env_p = rng.uniform(0, 2 * np.pi, 14)
        x = np.zeros(n)
        for fq, am, ph, ef, ep in zip(freqs, amps, phases, env_f, env_p):
            env = 0.5 * (1.0 + np.sin(2 * np.pi * ef * t + ep)) ** 2
            x += am * env * np.sin(2 * np.pi * fq * t + ph)
        x -= x.mean()
        out[:, ch] = SERVICE_LOAD_PEAK * x / np.max(np.abs(x))
    return out


def sine_drive(n: int, sample_rate: float, rng: np.random.Generator, spec: NoiseSpec) -> np.ndarray:
    t = np.arange(n) / sample_rate
    cols = []
    for _ in range(3):
        fq = rng.uniform(1.0, spec.white_limit)
        amp = rng.uniform(*spec.amplitude_range)
        mean = rng.uniform(*spec.mean_range)
        cols.append(mean + amp * np.sin(2 * np.pi * fq * t + rng.uniform(0, 2 * np.pi)))
    return np.column_stack(cols)


def sweep_drive(n: int, sample_rate: float, rng: np.random.Generator, spec: NoiseSpec) -> np.ndarray:
    """Linear chirps from 0.5 Hz to the pink limit."""
    t = np.arange(n) / sample_rate
    T = max(t[-1], 1.0 / sample_rate)
    f0, f1 = 0.5, spec.pink_limit
    cols = []
    for _ in range(3):
        amp = rng.uniform(*spec.amplitude_range)
        mean = rng.uniform(*spec.mean_range)
        cols.append(mean + amp * np.sin(2 * np.pi * (f0 * t + 0.5 * (f1 - f0) / T * t ** 2)))
    return np.column_stack(cols)


# --- plants and datasets -----------------------------------------------------

@dataclass
class LtiPlant:
    frf: FrfModel

    @property
    def input_names(self):
        return self.frf.input_names

    def respond(self, drives: Sequence[MultiChannelSignal]) -> list[MultiChannelSignal]:
        return [lti_respond(self.frf, d) for d in drives]


@dataclass
class RigPlant:
    params: RigParams = field(default_factory=RigParams)
    cutoff: float | None = 80.0

    @property
    def input_names(self):
        return DRIVE

    def respond(self, drives: Sequence[MultiChannelSignal]) -> list[MultiChannelSignal]:
        out = rig_respond(self.params, list(drives))
        if self.cutoff is not None and self.cutoff < drives[0].sample_rate / 2:
            out = [lowpass_fft(o, self.cutoff) for o in out]
        return out


def assign_roles(count: int, shares: tuple[float, float, float]) -> list[str]:
    n_train = int(round(shares[0] * count))
    n_val = int(round((shares[0] + shares[1]) * count)) - n_train
    n_test = count - n_train - n_val
    return ["train"] * n_train + ["validation"] * n_val + ["test"] * n_test


@dataclass
class GeneratedFile:
    entry: ManifestEntry
    signal: MultiChannelSignal


def make_drives(kind: str, count: int, seed: int, spec: NoiseSpec, names: Sequence[str],
                scales: Sequence[float] | None = None, offsets: Sequence[float] | None = None):
    """Drive signals plus per-file metadata ``(role, group, scale, offset)``."""
    if kind not in KINDS:
        raise ValueError(f"unknown data kind {kind!r}; expected one of {KINDS}")
    n = spec.n_samples
    fs = spec.sample_rate
    out = []
    roles = assign_roles(count, ROLE_SHARES[kind])
    for i in range(count):
        rng = derive_rng(seed, kind, i)
        scale, offset = 1.0, 0.0
        role, group = roles[i], GROUPS[kind]
        if kind == "noise":
            data = generate_noise(replace(spec, seed=derive_seed(seed, "noise", i)), names).data
        elif kind == "serviceload":
            # shapes 0 and 1 validate, shape 2 tests, as with independent load shapes
            shape_id = i % 3
            role = "test" if shape_id == 2 else "validation"
            scale = float(scales[i % len(scales)]) if scales else float(rng.uniform(0.3, 1.0))
            offset = float(offsets[i % len(offsets)]) if offsets else 0.0
            data = scale * service_load_shape(shape_id, n, fs) + offset
            group = "SL" if offset == 0 else ("SL+" if offset > 0 else "SL-")
        elif kind == "sin":
            data = sine_drive(n, fs, rng, spec)
        else:
            data = sweep_drive(n, fs, rng, spec)
        out.append((MultiChannelSignal(fs, tuple(names), data), role, group, scale, offset))
    return out


def make_dataset(kind: str, plant, count: int, seed: int, out_dir: str | Path | None = None,
                 spec: NoiseSpec | None = None, scales: Sequence[float] | None = None,
                 offsets: Sequence[float] | None = None, role: str | None = None,
                 prefix: str | None = None, output_noise: float = 0.0) -> list[GeneratedFile]:
    """Generate ``count`` excitation/response files for ``plant``.

    With ``out_dir`` the files are written as CSV and appended to
    ``out_dir/manifest.tsv``. ``role`` overrides the default role split.
    ``output_noise`` adds white Gaussian noise of that standard deviation to
    the plant outputs (clean by default).
    """
    spec = spec or NoiseSpec()
    drives = make_drives(kind, count, seed, spec, plant.input_names, scales, offsets)
    responses = plant.respond([d[0] for d in drives])
    if output_noise > 0:
        responses = [r.with_data(r.data + derive_rng(seed, "output-noise:" + kind, i)
                                 .normal(0.0, output_noise, r.data.shape))
                     for i, r in enumerate(responses)]
    files = []
    prefix = prefix or kind
    for i, ((drive, r, group, scale, offset), resp) in enumerate(zip(drives, responses)):
        sig = drive.concat_channels(resp)
        entry = ManifestEntry(
            path=f"{prefix}_{i:04d}.csv", kind=kind, role=role or r, group=group,
            sample_rate=sig.sample_rate, channels=sig.names, scale=scale, offset=offset,
        )
        files.append(GeneratedFile(entry, sig))
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        units = ", ".join(f"{n}={_unit(n)}" for n in files[0].signal.names)
        for gf in files:
            write_csv(gf.signal, out / gf.entry.path,
                      comments=[f"kind={gf.entry.kind} role={gf.entry.role} group={gf.entry.group}",
                                f"units: time=s, {units}"])
        manifest_path = out / "manifest.tsv"
        existing = DatasetManifest.read(manifest_path).entries if manifest_path.exists() else []
        keep = [e for e in existing if e.path not in {f.entry.path for f in files}]
        write_manifest(DatasetManifest(keep + [f.entry for f in files]), manifest_path)
    return files


def _unit(name: str) -> str:
    if name.startswith("disp"):
        return "mm"
    if name.startswith(("force", "drive")):
        return "kN"
    return "-"
