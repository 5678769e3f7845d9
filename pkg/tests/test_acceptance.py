"""One test per acceptance criterion; each prints a PASS/FAIL line with its numbers."""

import numpy as np
import pytest
from conftest import ACCEPTANCE
from lstm_oracle import fd_gradient

from hybrid_sysid import fatigue, lstm, store, synth
from hybrid_sysid.metrics import rms_error
from hybrid_sysid.cli import run_study, spearman
from hybrid_sysid.pipeline import (HybridPredictor, WindowingConfig, channel_mean_rms, fit_predictor,
                                   recombine, window_weights)
from hybrid_sysid.signal import MultiChannelSignal, subsequence_starts
from hybrid_sysid.spectral import FrfModel, estimate_frf, frf_predict


def verdict(n: int, ok: bool, detail: str) -> None:
    line = f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE[n] = line
    print(line)
    assert ok, line


def test_criterion_01_parameter_counts():
    expected = {(10,): 593, (39,): 6828, (23, 23): 6880, (39, 39): 19152}
    got = {a: lstm.parameter_count(a, 3, 3) for a in expected}
    built = {a: lstm.init_network(a, 3, 3, np.random.default_rng(0)).n_parameters() for a in expected}
    verdict(1, got == expected == built, f"counts {list(got.values())} (expected {list(expected.values())})")


def _siso_case(response, seed):
    spec = synth.NoiseSpec(duration=120, sample_rate=1000, seed=seed)
    names = ("u",)
    x_train = synth.generate_noise(spec, names)
    x_test = synth.generate_noise(synth.NoiseSpec(**{**spec.__dict__, "seed": seed + 1}), names)
    plant = FrfModel.from_response(lambda f: response(f)[:, None, None], names, ("y",), 1000.0, 8193)
    y_train, y_test = frf_predict(plant, x_train), frf_predict(plant, x_test)
    est = estimate_frf([x_train], [y_train], 4096)
    held_out = rms_error(frf_predict(est, x_test).data[:, 0], y_test.data[:, 0])
    f = est.frequencies
    band = (f > 0) & (f <= spec.pink_limit)
    truth = np.abs(response(f[band]))
    mag_err = np.max(np.abs(np.abs(est.H[band, 0, 0]) - truth) / truth)
    return held_out, mag_err


def test_criterion_02_frf_exact_on_lti():
    delay = lambda f: 1.7 * np.exp(-2j * np.pi * f * 0.01)                        # 10 ms, gain 1.7
    second = lambda f: 1.0 / (1 - (f / 30.0) ** 2 + 2j * 0.1 * f / 30.0)          # 30 Hz, damping 0.1
    results = {name: _siso_case(h, seed) for name, h, seed in (("delayed-gain", delay, 10),
                                                               ("second-order", second, 20))}
    ok = all(r < 0.05 and m < 0.02 for r, m in results.values())
    detail = ", ".join(f"{k}: held-out rms {r:.4f}, max in-band |H| error {100 * m:.2f}%"
                       for k, (r, m) in results.items())
    verdict(2, ok, detail + " (limits 0.05, 2%)")


def test_criterion_03_bptt_gradients():
    rng = np.random.default_rng(2024)
    worst, n_nets = 0.0, 20
    for _ in range(n_nets):
        arch = tuple(int(c) for c in rng.integers(1, 6, rng.integers(1, 4)))
        n_in, n_out, L = int(rng.integers(1, 4)), int(rng.integers(1, 4)), int(rng.integers(1, 9))
        net = lstm.init_network(arch, n_in, n_out, rng)
        for p in net.parameters():          # random biases too, so no gradient is trivially symmetric
            p += rng.normal(0, 0.3, p.shape)
        x = rng.standard_normal((2, L, n_in))
        t = rng.standard_normal((2, L, n_out))
        _, cache = lstm.forward(net, x, cache=True)
        analytic = lstm.backward(net, cache, t).parameters()
        numeric = fd_gradient(net.parameters(), x, t)
        for a, n in zip(analytic, numeric):
            n = np.asarray(n, dtype=float)
            rel = np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), 1e-8)
            worst = max(worst, float(rel.max()))
    verdict(3, worst < 1e-5, f"{n_nets} random networks, worst relative error {worst:.2e} (limit 1e-5)")


def test_criterion_04_partition_of_unity():
    rng = np.random.default_rng(4)
    worst_sum = worst_rec = 0.0
    cases = 0
    for L in (16, 256):
        for o in (0.25, 0.5, 1.0):
            for n in [1, L - 1, L, L + 1, 3 * L + 5] + [int(v) for v in rng.integers(1, 5000, 6)]:
                cfg = WindowingConfig(L, o)
                starts = subsequence_starts(n, L, o)
                total = np.zeros(n)
                for s, w in window_weights(starts, n, cfg):
                    lo, hi = max(s, 0), min(s + L, n)
                    total[lo:hi] += w[lo - s:hi - s]
                x = rng.standard_normal((n, 2))
                slices = [(s, x[np.clip(np.arange(s, s + L), 0, n - 1)]) for s in starts]
                worst_sum = max(worst_sum, float(np.max(np.abs(total - 1))))
                worst_rec = max(worst_rec, float(np.max(np.abs(recombine(slices, n, cfg) - x))))
                cases += 1
    verdict(4, worst_sum < 1e-12 and worst_rec < 1e-12,
            f"{cases} cases, max |sum w - 1| {worst_sum:.1e}, max reconstruction error {worst_rec:.1e} (limit 1e-12)")


RAINFLOW_FIXTURES = [
    ([-2, 1, -3, 5, -1, 3, -4, 4, -2], [(1.5, -0.5), (2.0, 1.0), (3.5, 0.5), (4.5, 0.5)]),
    ([0, 4, 1, 3, 0], [(1.0, 2.0), (2.0, 2.0)]),
    ([0, 5, 2, 4, 1, 6, 0], [(1.0, 3.0), (2.0, 3.0), (3.0, 3.0)]),
    ([1, -1, 1, -1, 1], [(1.0, 0.0), (1.0, 0.0)]),
    ([0, 1], []),
    ([3, 3, 3], []),
]


def test_criterion_05_rainflow_and_damage():
    matched = sum(sorted((a, m) for a, m, _ in fatigue.rainflow_4pt(seq).as_tuples()) == exp
                  for seq, exp in RAINFLOW_FIXTURES)
    t = np.arange(100 * 40 + 1)
    sine = 10.0 * np.sin(2 * np.pi * t / 40)
    d_sine = fatigue.signal_damage(sine)
    s = np.random.default_rng(5).standard_normal(3000)
    d1, d2 = fatigue.signal_damage(s), fatigue.signal_damage(2 * s)
    ok = matched == len(RAINFLOW_FIXTURES) and abs(d_sine - 1.0) < 1e-12 and d2 == 32 * d1
    verdict(5, ok, f"{matched}/{len(RAINFLOW_FIXTURES)} fixtures exact, sine damage {d_sine!r} (expect 1.0), "
                   f"d(2s)/d(s) = {d2 / d1!r}")


def test_criterion_06_multirain_brute_force():
    rng = np.random.default_rng(6)
    lattice = fatigue.generate_directions(500)
    dense = rng.standard_normal((10_000, 3))
    dense = fatigue.DirectionSet(dense / np.linalg.norm(dense, axis=1, keepdims=True))
    gaps = []
    for _ in range(3):
        mix = rng.standard_normal((3, 3))
        sig = rng.standard_normal((1500, 3)) @ mix
        d_lat = fatigue.directional_damages(sig, lattice).max()
        d_dense = fatigue.directional_damages(sig, dense).max()
        gaps.append(abs(d_lat - d_dense) / d_dense)
    verdict(6, max(gaps) < 0.02, f"lattice vs 10^4-direction maximum, relative gaps "
                                 f"{', '.join(f'{100 * g:.2f}%' for g in gaps)} (limit 2%)")


SEEDS = (0, 1, 2)


def _study_outcome(seed):
    rows = run_study(synth.study_plant(200.0), (2, 5, 10, 20), ((39,),), seed, epochs=100,
                     learning_rate=1e-3, duration=30.0, validation_files=8, batch_size=8)
    rms = [r["rms"] for r in rows]
    rho = spearman([r["files"] for r in rows], rms)
    mr20 = rows[-1]["multirain"]
    ok = rho <= -0.8 and 0.8 <= mr20 <= 1.2
    return ok, (f"seed {seed}: rms {', '.join(f'{v:.3f}' for v in rms)}, spearman {rho:.2f}, "
                f"Multi-Rain@20 {mr20:.3f} -> {'ok' if ok else 'miss'}")


@pytest.mark.slow
def test_criterion_07_dataset_size_study():
    outcomes = []
    for seed in SEEDS:
        outcomes.append(_study_outcome(seed))
        print(outcomes[-1][1], flush=True)
        passed = sum(o for o, _ in outcomes)
        if passed >= 2 or len(outcomes) - passed >= 2:
            break
    passed = sum(o for o, _ in outcomes)
    verdict(7, passed >= 2, f"{passed}/{len(outcomes)} seeds with spearman <= -0.8 and Multi-Rain@20 "
                            f"in [0.8, 1.2]; " + "; ".join(d for _, d in outcomes))


def _rig_outcome(seed):
    rig = synth.RigPlant()
    # the noise offsets and amplitudes are chosen so the training set reaches the displacement
    # range the service loads drive the rig through
    spec = synth.NoiseSpec(duration=60, sample_rate=200.0, seed=seed,
                           mean_range=(-1.5, 1.5), amplitude_range=(1.0, 4.0))

    def files(kind, count, label, **kw):
        drives = [d[0] for d in synth.make_drives(kind, count, synth.derive_seed(seed, label), spec,
                                                  synth.DRIVE, **kw)]
        return [a.concat_channels(b) for a, b in zip(drives, rig.respond(drives))]

    outputs = synth.DISP + synth.FORCE
    train = files("noise", 10, "rig-train")
    loads = files("serviceload", 6, "rig-loads", scales=[0.3, 0.65, 1.0, 1.0, 0.3, 0.65])
    validation = [s for i, s in enumerate(loads) if i % 3 != 2]
    test = [s for i, s in enumerate(loads) if i % 3 == 2]
    test += files("serviceload", 6, "rig-offset-loads", scales=[0.5] * 6,
                  offsets=[1.0, 1.0, 1.0, -1.0, -1.0, -1.0])[2::3]
    xs = [s.select(synth.DRIVE) for s in train]
    ys = [s.select(outputs) for s in train]
    frf = estimate_frf(xs, ys, 512)
    frf_only = HybridPredictor("frf", synth.DRIVE, outputs, WindowingConfig(), frf=frf)
    config = lstm.TrainConfig(1e-3, 100, 32, seed=synth.derive_seed(seed, "rig-init"))
    hybrid = fit_predictor("hybrid2", xs, ys, frf, WindowingConfig(), (39,), config,
                           validation=validation, validate_every=10).predictor
    e_frf, e_hyb = channel_mean_rms(frf_only, test), channel_mean_rms(hybrid, test)
    gain = 1.0 - e_hyb / e_frf
    return gain >= 0.2, f"seed {seed}: frf {e_frf:.3f}, hybrid-2 {e_hyb:.3f}, {100 * gain:.0f}% lower"


@pytest.mark.slow
def test_criterion_08_hybrid_beats_frf_on_rig():
    outcomes = []
    for seed in SEEDS:
        outcomes.append(_rig_outcome(seed))
        print(outcomes[-1][1], flush=True)
        passed = sum(o for o, _ in outcomes)
        if passed >= 2 or len(outcomes) - passed >= 2:
            break
    passed = sum(o for o, _ in outcomes)
    verdict(8, passed >= 2, f"{passed}/{len(outcomes)} seeds with hybrid-2 test rms >= 20% below frf; "
                            + "; ".join(d for _, d in outcomes))


def test_criterion_09_scope_note():
    ACCEPTANCE[9] = ("criterion  9: N/A   the measured-rig bar values are out of scope; "
                     "criteria 7 and 8 stand in for them")


def test_criterion_10_bundle_persistence(tmp_path):
    rng = np.random.default_rng(10)
    frf = synth.study_plant(200.0, n_freq=129)
    net = lstm.init_network((7, 5), 6, 3, rng)
    from hybrid_sysid.signal import StandardizationStats
    in_names = synth.DISP + tuple("frf:" + n for n in synth.FORCE)
    net.input_stats = StandardizationStats(in_names, rng.normal(size=6), rng.uniform(1, 2, 6))
    net.output_stats = StandardizationStats(synth.FORCE, rng.normal(size=3), rng.uniform(1, 2, 3))
    pred = HybridPredictor("hybrid2", synth.DISP, synth.FORCE, WindowingConfig(64), net, frf)
    a, b = tmp_path / "a.bundle", tmp_path / "b.bundle"
    store.save_bundle(store.ModelBundle(pred, {"seed": 10}), a)
    store.save_bundle(store.load_bundle(a), b)
    identical = a.read_bytes() == b.read_bytes()
    raw = a.read_bytes()
    rejected = 0
    cuts = [len(raw) - 1, len(raw) // 2, 20]
    flips = [100, len(raw) // 3, len(raw) - 3]
    for cut in cuts:
        try:
            store.decode_bundle(raw[:cut])
        except store.ChecksumError:
            rejected += 1
    for pos in flips:
        bad = bytearray(raw)
        bad[pos] ^= 0x01
        try:
            store.decode_bundle(bytes(bad))
        except store.ChecksumError:
            rejected += 1
    total = len(cuts) + len(flips)
    verdict(10, identical and rejected == total,
            f"save/load/save byte-identical: {identical}; corrupted copies rejected {rejected}/{total}")
