import struct

import numpy as np
import pytest

from vaealign.decode import BoundarySet
from vaealign.io import (
    BOUNDARY_HEADER,
    FormatError,
    ManifestEntry,
    atomic_write,
    config_hash,
    format_config,
    load_checkpoint,
    parse_config,
    read_boundaries,
    read_feature_file,
    read_labels,
    read_manifest,
    save_checkpoint,
    write_boundaries,
    write_feature_file,
    write_labels,
    write_manifest,
)
from vaealign.neural import AlignerNetwork, ParameterStore, adam_step
from vaealign.synth import SynthSpec, synth_corpus, synth_utterances
from vaealign.training import TrainConfig


class TestFeatureFile:
    def test_round_trip_bit_identical(self, tmp_path, rng):
        frames = rng.standard_normal((7, 13)).astype(np.float32)
        write_feature_file(tmp_path / "a.faf", frames, 0.0125)
        out, shift = read_feature_file(tmp_path / "a.faf")
        assert out.dtype == np.float32 and out.shape == (7, 13)
        assert out.tobytes() == frames.tobytes()
        assert shift == 0.0125

    def test_layout(self, tmp_path):
        write_feature_file(tmp_path / "a.faf", np.array([[1.0, 2.0]]))
        raw = (tmp_path / "a.faf").read_bytes()
        assert raw[:4] == b"FAF1"
        assert struct.unpack("<IIII", raw[4:20]) == (1, 1, 2, 10_000)
        assert raw[20:] == np.array([1.0, 2.0], dtype="<f4").tobytes()

    def test_truncated_payload(self, tmp_path):
        write_feature_file(tmp_path / "a.faf", np.zeros((3, 4)))
        raw = (tmp_path / "a.faf").read_bytes()
        (tmp_path / "a.faf").write_bytes(raw[:-4])
        with pytest.raises(FormatError, match="44 bytes, expected 48"):
            read_feature_file(tmp_path / "a.faf")

    def test_truncated_header(self, tmp_path):
        (tmp_path / "a.faf").write_bytes(b"FAF1")
        with pytest.raises(FormatError, match="truncated header"):
            read_feature_file(tmp_path / "a.faf")

    def test_bad_magic(self, tmp_path):
        write_feature_file(tmp_path / "a.faf", np.zeros((1, 1)))
        raw = bytearray((tmp_path / "a.faf").read_bytes())
        raw[:4] = b"NOPE"
        (tmp_path / "a.faf").write_bytes(bytes(raw))
        with pytest.raises(FormatError, match="bad magic"):
            read_feature_file(tmp_path / "a.faf")

    def test_non_finite_rejected(self, tmp_path):
        write_feature_file(tmp_path / "a.faf", np.array([[np.nan]]))
        with pytest.raises(FormatError, match="non-finite"):
            read_feature_file(tmp_path / "a.faf")


class TestLabelsAndBoundaries:
    def test_labels_round_trip(self, tmp_path):
        write_labels(tmp_path / "a.lab", ["a", "b", "a"])
        assert read_labels(tmp_path / "a.lab") == ["a", "b", "a"]

    def test_unknown_phoneme(self, tmp_path):
        write_labels(tmp_path / "a.lab", ["a", "zz"])
        with pytest.raises(FormatError, match=r"a\.lab:1: unknown phoneme 'zz'"):
            read_labels(tmp_path / "a.lab", vocab=["a", "b"])

    def test_boundary_rows(self, tmp_path):
        bset = BoundarySet.from_durations(["a", "b"], [3, 5])
        write_boundaries(tmp_path / "b.tsv", bset)
        lines = (tmp_path / "b.tsv").read_text().splitlines()
        assert lines[0] == BOUNDARY_HEADER
        assert lines[1:] == ["a\t0\t3\t0.000000\t0.030000", "b\t3\t8\t0.030000\t0.080000"]
        assert read_boundaries(tmp_path / "b.tsv") == bset

    def test_boundary_row_example(self, tmp_path):
        (tmp_path / "b.tsv").write_text(
            BOUNDARY_HEADER + "\nsil\t0\t4\t0.000000\t0.040000\na\t4\t8\t0.040000\t0.080000\n")
        seg = read_boundaries(tmp_path / "b.tsv", 0.010).segments[1]
        assert (seg.phoneme, seg.start_frame, seg.end_frame) == ("a", 4, 8)
        assert seg.start_sec(0.010) == pytest.approx(0.04)

    def test_boundary_gap_reported(self, tmp_path):
        (tmp_path / "b.tsv").write_text(BOUNDARY_HEADER + "\na\t0\t2\t0\t0\nb\t3\t4\t0\t0\n")
        with pytest.raises(FormatError, match="contiguous"):
            read_boundaries(tmp_path / "b.tsv")

    def test_boundary_bad_columns(self, tmp_path):
        (tmp_path / "b.tsv").write_text(BOUNDARY_HEADER + "\na\t0\t2\n")
        with pytest.raises(FormatError, match=":2: expected 5 columns"):
            read_boundaries(tmp_path / "b.tsv")


class TestManifest:
    def test_round_trip_relative(self, tmp_path):
        for name in ("f.faf", "l.lab"):
            (tmp_path / "data" / name).parent.mkdir(exist_ok=True)
            (tmp_path / "data" / name).write_bytes(b"")
        entry = ManifestEntry("u1", tmp_path / "data" / "f.faf", tmp_path / "data" / "l.lab")
        write_manifest(tmp_path / "m.tsv", [entry])
        assert (tmp_path / "m.tsv").read_text() == "u1\tdata/f.faf\tdata/l.lab\n"
        [back] = read_manifest(tmp_path / "m.tsv")
        assert back.utt_id == "u1" and back.feature_path.resolve() == entry.feature_path.resolve()
        assert back.ref_path is None

    def test_missing_file(self, tmp_path):
        (tmp_path / "m.tsv").write_text("u1\tx.faf\tx.lab\n")
        with pytest.raises(FileNotFoundError, match="m.tsv:1"):
            read_manifest(tmp_path / "m.tsv")

    def test_duplicate_id(self, tmp_path):
        (tmp_path / "m.tsv").write_text("u1\ta\tb\nu1\ta\tb\n")
        with pytest.raises(FormatError, match="duplicate"):
            read_manifest(tmp_path / "m.tsv", check_files=False)


class TestConfig:
    def test_parse_overrides(self):
        cfg = parse_config("# comment\nomega = 0.05\nuse_vae = false  # off\nlayers=2\n")
        assert cfg.omega == 0.05 and cfg.use_vae is False and cfg.layers == 2
        assert cfg.w_aco == TrainConfig().w_aco

    def test_unknown_key(self):
        with pytest.raises(ValueError, match=r"<config>:1: unknown config key 'bogus'"):
            parse_config("bogus = 1")

    def test_bad_bool(self):
        with pytest.raises(ValueError, match="use_vae"):
            parse_config("use_vae = maybe")

    def test_format_round_trip(self):
        cfg = TrainConfig(omega=0.03, use_prior=False, max_steps=7)
        assert parse_config(format_config(cfg)) == cfg
        assert config_hash(cfg) == config_hash(parse_config(format_config(cfg)))
        assert config_hash(cfg) != config_hash(TrainConfig())


def test_atomic_write_leaves_no_temp_files(tmp_path):
    atomic_write(tmp_path / "x.txt", "one")
    atomic_write(tmp_path / "x.txt", "two")
    assert (tmp_path / "x.txt").read_text() == "two"
    assert [p.name for p in tmp_path.iterdir()] == ["x.txt"]


def test_checkpoint_round_trip(tmp_path, rng):
    cfg = TrainConfig(embed_dim=3, hidden_channels=4, layers=1, omega=0.02)
    net = AlignerNetwork(n_features=5, vocab=["a", "b"], embed_dim=3, hidden_channels=4, layers=1)
    store = ParameterStore(net.init_params(rng))
    adam_step(store, {k: rng.standard_normal(v.shape) for k, v in store.params.items()}, lr=0.1)
    save_checkpoint(tmp_path / "c.npz", store, net, cfg)
    net2, store2, cfg2 = load_checkpoint(tmp_path / "c.npz")
    assert cfg2 == cfg and net2.vocab == ["a", "b"] and net2.n_features == 5
    assert store2.step == 1
    for name in store.params:
        np.testing.assert_array_equal(store2.params[name], store.params[name])
        np.testing.assert_array_equal(store2.m[name], store.m[name])
        np.testing.assert_array_equal(store2.v[name], store.v[name])


class TestSynth:
    spec = SynthSpec(n_utts=4, n_dev=2, vocab_size=4, feature_dim=3, seed=11)

    def test_deterministic(self):
        a, _ = synth_utterances(self.spec)
        b, _ = synth_utterances(self.spec)
        for u, v in zip(a, b):
            np.testing.assert_array_equal(u.features, v.features)
            assert u.phonemes == v.phonemes and u.reference == v.reference

    def test_noise_free_frames_are_piecewise_constant(self):
        from dataclasses import replace
        train, _ = synth_utterances(replace(self.spec, noise_std=0.0))
        for u in train:
            changes = np.flatnonzero(np.any(np.diff(u.features, axis=0) != 0, axis=1)) + 1
            # every phoneme boundary is a change point (a state mean changes there)
            assert set(u.reference.starts[1:]) <= set(changes)
            assert len(changes) <= 3 * len(u.phonemes) - 1

    def test_reference_is_cumulative_durations(self):
        train, dev = synth_utterances(self.spec)
        assert len(train) == 4 and len(dev) == 2
        for u in train + dev:
            assert u.reference.n_frames == len(u.features)
            durs = np.diff(np.append(u.reference.starts, u.reference.n_frames))
            assert np.all((durs >= 3 * 2) & (durs <= 3 * 8))

    def test_corpus_byte_identical(self, tmp_path):
        synth_corpus(self.spec, tmp_path / "a")
        synth_corpus(self.spec, tmp_path / "b")
        files = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*") if p.is_file())
        assert len(files) == 2 + 3 * 6
        for rel in files:
            assert (tmp_path / "a" / rel).read_bytes() == (tmp_path / "b" / rel).read_bytes()

    def test_corpus_on_disk(self, tmp_path):
        manifests = synth_corpus(self.spec, tmp_path)
        train, _ = synth_utterances(self.spec)
        entries = read_manifest(tmp_path / "train.tsv")
        assert [e.utt_id for e in entries] == [u.utt_id for u in train]
        assert len(manifests["dev"]) == 2
        frames, shift = read_feature_file(entries[0].feature_path)
        np.testing.assert_array_equal(frames, train[0].features)
        assert read_boundaries(entries[0].ref_path, shift) == train[0].reference
