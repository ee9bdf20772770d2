import json

import numpy as np
import pytest

from flowact.data import (DatasetError, DatasetManifest, Preprocessing, SynthConfig, build_input, load_frames,
                          make_sample, open_dataset, prepare_dataset, resize_bilinear, sample_frames,
                          scan_dataset, synth_generate, zero_flow_input)
from flowact.data.dataset import VideoSample, cache_path, compute_flows, sample_indices
from flowact.data.ppm import ImageFormatError, decode_pnm, encode_ppm, read_ppm, write_ppm
from flowact.data.synth import render_video
from flowact.flow import FlowField, FlowParams, farneback_flow, flow_to_rgb, to_grayscale
from flowact.tensor_core import SeededRng, ShapeError, concat_axis

SMALL_FLOW = FlowParams(pyramid_levels=1, expansion_window=5, window_sigma=1.1, averaging_window=7)


def write_video(d, frames, names=None):
    d.mkdir(parents=True, exist_ok=True)
    names = names or [f"frame_{i + 1:04d}.ppm" for i in range(len(frames))]
    for name, f in zip(names, frames):
        write_ppm(d / name, f)


class TestPpm:
    def test_round_trip_bit_exact(self, tmp_path):
        img = np.random.default_rng(0).integers(0, 256, size=(5, 7, 3), dtype=np.uint8)
        write_ppm(tmp_path / "a.ppm", img)
        back = read_ppm(tmp_path / "a.ppm")
        np.testing.assert_array_equal(np.rint(back * 255).astype(np.uint8), img)

    def test_header_comments_and_pgm(self):
        data = b"P5\n# comment\n3 2\n# another\n255\n" + bytes(range(6))
        arr, maxval = decode_pnm(data)
        assert maxval == 255
        np.testing.assert_array_equal(arr, [[0, 1, 2], [3, 4, 5]])

    def test_sixteen_bit(self, tmp_path):
        payload = np.array([0, 65535, 1000], dtype=">u2").tobytes()
        (tmp_path / "b.pgm").write_bytes(b"P5 3 1 65535\n" + payload)
        img = read_ppm(tmp_path / "b.pgm")
        assert img.shape == (1, 3, 3)
        np.testing.assert_allclose(img[0, :, 0], [0, 1, 1000 / 65535])

    def test_encode_header(self):
        assert encode_ppm(np.zeros((2, 3, 3))).startswith(b"P6\n3 2\n255\n")

    @pytest.mark.parametrize("data", [b"P3\n1 1\n255\n0 0 0", b"P6\n2 2\n255\n\x00", b"P6\n", b"P6 a b 255\n"])
    def test_corrupt(self, data):
        with pytest.raises(ImageFormatError):
            decode_pnm(data)


class TestLoadFrames:
    def test_single(self, tmp_path):
        write_video(tmp_path / "v", [np.zeros((4, 4, 3))])
        assert len(load_frames(tmp_path / "v")) == 1

    def test_sorted_by_index(self, tmp_path):
        frames = [np.full((3, 3, 3), v / 255.0) for v in (10, 20, 30, 40)]
        names = ["frame_0003.ppm", "frame_0010.ppm", "frame_0001.ppm", "frame_0002.ppm"]
        write_video(tmp_path / "v", frames, names)
        got = [round(f[0, 0, 0] * 255) for f in load_frames(tmp_path / "v")]
        assert got == [30, 40, 10, 20]

    def test_empty(self, tmp_path):
        (tmp_path / "v").mkdir()
        with pytest.raises(DatasetError):
            load_frames(tmp_path / "v")

    def test_corrupt_names_file(self, tmp_path):
        write_video(tmp_path / "v", [np.zeros((3, 3, 3))])
        (tmp_path / "v" / "frame_0002.ppm").write_bytes(b"garbage")
        with pytest.raises(DatasetError, match="frame_0002"):
            load_frames(tmp_path / "v")


class TestResize:
    def test_identity(self):
        img = np.random.default_rng(0).random((6, 5, 3))
        np.testing.assert_array_equal(resize_bilinear(img, 6, 5), img)

    def test_constant(self):
        out = resize_bilinear(np.full((4, 4, 3), 0.3), 9, 13)
        np.testing.assert_allclose(out, 0.3, atol=1e-15)

    def test_ramp_upscale(self):
        xs = np.linspace(0, 1, 8)
        img = np.broadcast_to(xs[None, :, None], (8, 8, 3))
        out = resize_bilinear(img, 15, 15)
        # corner-aligned: output column j samples input x = j * 7 / 14
        np.testing.assert_allclose(out[:, :, 0], np.broadcast_to(np.linspace(0, 1, 15), (15, 15)), atol=1e-6)

    def test_range(self):
        out = resize_bilinear(np.random.default_rng(1).random((7, 9, 3)), 20, 3)
        assert out.min() >= 0 and out.max() <= 1

    def test_errors(self):
        with pytest.raises(ShapeError):
            resize_bilinear(np.zeros((1, 5, 3)), 4, 4)
        with pytest.raises(ShapeError):
            resize_bilinear(np.zeros((5, 5, 3)), 0, 4)


class TestSampleFrames:
    def test_identity(self):
        assert sample_frames(list(range(10))) == list(range(10))

    def test_stride_two(self):
        assert sample_frames(list(range(20))) == list(range(0, 20, 2))

    def test_short_list_formula(self):
        # floor(3k / 10) for k = 0..9
        assert sample_indices(3) == [0, 0, 0, 0, 1, 1, 1, 2, 2, 2]

    def test_single(self):
        assert sample_indices(1) == [0] * 10

    def test_empty(self):
        with pytest.raises(DatasetError):
            sample_frames([])


def small_prep(n=2, size=24):
    return Preprocessing(size=size, n_frames=n, max_mag=2.0, flow=SMALL_FLOW)


class TestBuildInput:
    def _sample(self, n=3, size=16, zero=False):
        rng = np.random.default_rng(0)
        frames = [rng.random((size, size, 3)) for _ in range(n)]
        flows = [FlowField.zeros((size, size)) if zero else
                 FlowField(rng.normal(size=(size, size)), rng.normal(size=(size, size))) for _ in range(n)]
        return VideoSample("v", 0, frames, flows)

    def test_layout(self):
        s = self._sample()
        x = build_input(s, 2.0)
        assert x.shape == (6, 16, 16, 3)
        for i in range(3):
            np.testing.assert_array_equal(x[i], s.frames[i])
            np.testing.assert_array_equal(x[3 + i], flow_to_rgb(s.flows[i], 2.0))

    def test_zero_flows(self):
        x = build_input(self._sample(zero=True), 4.0)
        np.testing.assert_array_equal(x[3:], np.broadcast_to([0.5, 0.5, 0.0], (3, 16, 16, 3)))

    def test_zero_flow_input(self):
        s = self._sample()
        x = build_input(s, 2.0)
        z = zero_flow_input(x[None], 2.0)[0]
        np.testing.assert_array_equal(z[:3], x[:3])
        np.testing.assert_array_equal(z[3:], build_input(self._sample(zero=True), 2.0)[3:])

    def test_pipeline_matches_manual_composition(self):
        rng = np.random.default_rng(3)
        base = rng.random((40, 40, 3))
        frames = [base[2:34, 2:34], base[2:34, 4:36]]
        prep = small_prep()
        x = build_input(make_sample(frames, 1, "v", prep), prep.max_mag)
        resized = [resize_bilinear(f, 24, 24) for f in frames]
        f01 = farneback_flow(to_grayscale(resized[0]), to_grayscale(resized[1]), SMALL_FLOW)
        manual = concat_axis([np.stack(resized), np.stack([flow_to_rgb(f01, 2.0)] * 2)], 0)
        np.testing.assert_array_equal(x, manual)

    def test_deterministic(self):
        frames = [np.random.default_rng(i).random((20, 20, 3)) for i in range(3)]
        prep = small_prep(3)
        a = build_input(make_sample(frames, 0, "v", prep), prep.max_mag)
        b = build_input(make_sample(frames, 0, "v", prep), prep.max_mag)
        np.testing.assert_array_equal(a, b)

    def test_single_frame_flow_is_zero(self):
        flows = compute_flows([np.zeros((16, 16, 3))], SMALL_FLOW)
        assert len(flows) == 1 and not flows[0].dx.any()

    def test_invariants_checked(self):
        s = self._sample()
        with pytest.raises(DatasetError):
            s.validate(n_frames=10, size=16)


SYNTH = SynthConfig(n_videos=6, frames_per_video=4, size=32, square=8, noise=0.02)


class TestManifest:
    def test_round_trip(self, tmp_path):
        m = DatasetManifest(root=str(tmp_path), classes={"a": 0, "b": 1},
                            entries=[{"id": "x", "dir": "a/x", "label": 0}], preprocessing={"size": 32})
        m.write()
        back = DatasetManifest.read(tmp_path)
        assert back.entries == m.entries and back.classes == m.classes and back.preprocessing == m.preprocessing

    def test_scan_alphabetical(self, tmp_path):
        write_video(tmp_path / "zeta" / "v1", [np.zeros((3, 3, 3))])
        write_video(tmp_path / "alpha" / "v2", [np.zeros((3, 3, 3))])
        m = scan_dataset(tmp_path)
        assert m.classes == {"alpha": 0, "zeta": 1}
        assert [e["label"] for e in m.entries] == [0, 1]
        m.check()

    def test_check_missing(self, tmp_path):
        m = DatasetManifest(root=str(tmp_path), classes={"a": 0}, entries=[{"id": "x", "dir": "a/x", "label": 0}])
        with pytest.raises(DatasetError):
            m.check()

    def test_bad_manifest(self, tmp_path):
        (tmp_path / "manifest.json").write_text("{not json")
        with pytest.raises(DatasetError):
            open_dataset(tmp_path)


class TestSynth:
    def test_deterministic_bytes(self, tmp_path):
        synth_generate(tmp_path / "a", SYNTH, seed=5)
        synth_generate(tmp_path / "b", SYNTH, seed=5)
        files_a = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*.ppm"))
        files_b = sorted(p.relative_to(tmp_path / "b") for p in (tmp_path / "b").rglob("*.ppm"))
        assert files_a == files_b and len(files_a) == 24
        for rel in files_a:
            assert (tmp_path / "a" / rel).read_bytes() == (tmp_path / "b" / rel).read_bytes()

    def test_manifest_and_balance(self, tmp_path):
        m = synth_generate(tmp_path, SYNTH, seed=1)
        assert m.classes == {"left": 0, "right": 1}
        assert sorted(m.labels().tolist()) == [0, 0, 0, 1, 1, 1]
        back = open_dataset(tmp_path)
        assert back.entries == m.entries and back.generator["seed"] == 1
        back.check()

    def test_appearance_indistinguishable(self):
        cfg = SynthConfig(n_videos=2, frames_per_video=10, size=48, noise=0.02)
        means = {0: [], 1: []}
        for i in range(200):
            label = i % 2
            frames = render_video(cfg, label, SeededRng(1000 + i))
            means[label].extend(float(f.mean()) / 255 for f in frames)
        assert abs(np.mean(means[0]) - np.mean(means[1])) < cfg.noise

    @pytest.mark.parametrize("label,sign", [(0, -1), (1, 1)])
    def test_flow_direction(self, label, sign):
        cfg = SynthConfig(n_videos=2, frames_per_video=10, size=64, min_speed=2, max_speed=2)
        frames = render_video(cfg, label, SeededRng(7))
        g = [to_grayscale(f / 255.0) for f in frames[:2]]
        flow = farneback_flow(g[0], g[1], FlowParams(pyramid_levels=2, expansion_window=7, window_sigma=1.2,
                                                     averaging_window=9))
        moving = flow.magnitude() > 0.5
        assert moving.sum() > 20
        assert np.sign(np.median(flow.dx[moving])) == sign

    def test_invalid(self):
        with pytest.raises(ValueError):
            SynthConfig(n_videos=1)
        with pytest.raises(ValueError):
            SynthConfig(size=16, square=12)


class TestPrepare:
    def test_shapes_and_cache(self, tmp_path):
        m = synth_generate(tmp_path, SYNTH, seed=2)
        prep = small_prep(4, 24)
        x, y, ids = prepare_dataset(m, prep, cache=True)
        assert x.shape == (6, 8, 24, 24, 3) and x.dtype == np.float32
        assert ids == [e["id"] for e in m.entries]
        np.testing.assert_array_equal(y, m.labels())
        assert cache_path(m, m.entries[0], prep).exists()
        x2, _, _ = prepare_dataset(m, prep, cache=True)
        np.testing.assert_array_equal(x, x2)

    def test_no_cache_writes_nothing(self, tmp_path):
        m = synth_generate(tmp_path, SYNTH, seed=2)
        prepare_dataset(m, small_prep(4, 24))
        assert not list(tmp_path.rglob("*.ften"))

    def test_preprocessing_key(self):
        assert small_prep().key() == small_prep().key()
        assert small_prep(size=24).key() != small_prep(size=32).key()
        assert Preprocessing.from_dict(json.loads(json.dumps(small_prep().to_dict()))) == small_prep()
