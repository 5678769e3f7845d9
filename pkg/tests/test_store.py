import struct
import zlib

import numpy as np
import pytest

from hybrid_sysid import lstm, store, synth
from hybrid_sysid.pipeline import HybridPredictor, WindowingConfig, predict
from hybrid_sysid.signal import MultiChannelSignal, StandardizationStats
from hybrid_sysid.spectral import FrfModel

IN, OUT = synth.DISP, synth.FORCE


def stats(names, seed):
    r = np.random.default_rng(seed)
    return StandardizationStats(tuple(names), r.normal(size=len(names)), r.uniform(0.5, 2, len(names)))


def net(arch, n_in, n_out, seed=0):
    n = lstm.init_network(arch, n_in, n_out, np.random.default_rng(seed))
    names = IN if n_in == 3 else IN + tuple("frf:" + o for o in OUT)
    n.input_stats = stats(names, 1)
    n.output_stats = stats(OUT, 2)
    return n


def plant():
    return synth.study_plant(200.0, n_freq=129)


def bundles():
    return {
        "pure": store.ModelBundle(HybridPredictor("pure", IN, OUT, WindowingConfig(32), net((10,), 3, 3)),
                                  {"seed": 1, "note": "unit"}),
        "frf": store.ModelBundle(HybridPredictor("frf", IN, OUT, WindowingConfig(), frf=plant())),
        "hybrid1": store.ModelBundle(HybridPredictor("hybrid1", IN, OUT, WindowingConfig(32, 0.25),
                                                     net((4, 5), 3, 3), plant())),
        "hybrid2": store.ModelBundle(HybridPredictor("hybrid2", IN, OUT, WindowingConfig(32, 0.5, 4),
                                                     net((6,), 6, 3), plant())),
    }


class TestBundle:
    @pytest.mark.parametrize("scheme", ["pure", "frf", "hybrid1", "hybrid2"])
    def test_roundtrip_byte_identical(self, tmp_path, scheme):
        b = bundles()[scheme]
        a_path, b_path = tmp_path / "a.bundle", tmp_path / "b.bundle"
        store.save_bundle(b, a_path)
        loaded = store.load_bundle(a_path)
        store.save_bundle(loaded, b_path)
        assert a_path.read_bytes() == b_path.read_bytes()
        assert loaded.provenance == b.provenance
        x = MultiChannelSignal(200.0, IN, np.random.default_rng(0).standard_normal((100, 3)))
        assert np.array_equal(predict(loaded.predictor, x).data, predict(b.predictor, x).data)

    def test_parameter_count_of_single_block(self):
        b = store.decode_bundle(store.encode_bundle(bundles()["pure"]))
        assert b.n_lstm_parameters() == 593
        assert b.predictor.lstm.architecture == (10,)

    def test_truncation_detected(self):
        data = store.encode_bundle(bundles()["hybrid1"])
        for cut in (1, 100, len(data) // 2, len(data) - 5):
            with pytest.raises(store.ChecksumError):
                store.decode_bundle(data[:cut])

    def test_bit_flip_detected(self):
        data = bytearray(store.encode_bundle(bundles()["pure"]))
        data[len(data) // 2] ^= 0x10
        with pytest.raises(store.ChecksumError):
            store.decode_bundle(bytes(data))

    def _reseal(self, body: bytes) -> bytes:
        return body + struct.pack("<I", zlib.crc32(body))

    def test_version_mismatch(self):
        data = store.encode_bundle(bundles()["frf"])[:-4]
        bumped = data[:8] + struct.pack("<I", 2) + data[12:]
        with pytest.raises(store.VersionError, match="version 2"):
            store.decode_bundle(self._reseal(bumped))

    def test_bad_magic(self):
        data = store.encode_bundle(bundles()["frf"])[:-4]
        with pytest.raises(store.BundleError, match="magic"):
            store.decode_bundle(self._reseal(b"NOTABNDL" + data[8:]))

    def test_atomic_write_leaves_no_temp(self, tmp_path):
        store.save_bundle(bundles()["frf"], tmp_path / "m.bundle")
        assert [p.name for p in tmp_path.iterdir()] == ["m.bundle"]


def write_dataset(tmp_path, count=3):
    spec = synth.NoiseSpec(duration=2, sample_rate=200)
    synth.make_dataset("noise", synth.LtiPlant(synth.study_plant(200.0)), count, 0, tmp_path, spec)
    return tmp_path / "manifest.tsv"


class TestManifest:
    def test_generated_manifest_validates(self, tmp_path):
        m = store.validate_manifest(store.read_manifest(write_dataset(tmp_path)), require_roles=("train",))
        assert len(m.entries) == 3
        assert all(e.channels == IN + OUT for e in m.entries)

    def test_roundtrip_text(self, tmp_path):
        m = store.read_manifest(write_dataset(tmp_path))
        again = store.parse_manifest(m.format(), m.root)
        assert again.entries == m.entries and again.digest() == m.digest()

    def test_missing_file(self, tmp_path):
        path = write_dataset(tmp_path)
        (tmp_path / "noise_0001.csv").unlink()
        with pytest.raises(store.ManifestError, match="noise_0001.csv"):
            store.validate_manifest(store.read_manifest(path))

    def test_duplicate_path(self, tmp_path):
        m = store.read_manifest(write_dataset(tmp_path))
        dup = store.DatasetManifest(m.entries + m.entries[:1], m.root)
        with pytest.raises(store.ManifestError, match="duplicate"):
            store.validate_manifest(dup)

    def test_header_mismatch(self, tmp_path):
        path = write_dataset(tmp_path)
        f = tmp_path / "noise_0000.csv"
        f.write_text(f.read_text().replace("force_z", "force_w"))
        with pytest.raises(store.ManifestError, match="header"):
            store.validate_manifest(store.read_manifest(path))

    def test_bad_lines(self):
        with pytest.raises(store.ManifestError):
            store.parse_manifest("a.csv\tnoise\n")
        line = "a.csv\tnoise\ttrain\tN\t200.0\tdisp_x\t1.0\t0.0"
        assert store.parse_manifest(line).entries[0].sample_rate == 200.0
        with pytest.raises(store.ManifestError):
            store.validate_manifest(store.parse_manifest(line.replace("noise", "chirp")))

    def test_required_roles(self, tmp_path):
        m = store.read_manifest(write_dataset(tmp_path, 1))
        with pytest.raises(store.ManifestError, match="role"):
            store.validate_manifest(m, require_roles=("test",))


class TestConfig:
    def test_parse_and_format(self):
        cfg = store.parse_config("# run\nepochs\t10\nscheme\thybrid1\n\nlearning_rate\t 1e-3 \n")
        assert cfg == {"epochs": "10", "scheme": "hybrid1", "learning_rate": "1e-3"}
        assert store.parse_config(store.format_config(cfg)) == cfg
        assert store.config_digest(cfg) == store.config_digest(dict(reversed(list(cfg.items()))))

    def test_malformed(self):
        with pytest.raises(ValueError, match="line 2"):
            store.parse_config("a\t1\nno-tab-here\n")
