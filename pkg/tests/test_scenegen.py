import numpy as np
import pytest

from nanowire_cd.bundle import (MASK_AFFECTED, MASK_CLOUD, read_bundle,
                                write_bundle)
from nanowire_cd.scenegen import (PRESETS, ChangeRect, SynthSpec,
                                  fire_like_spec, flood_like_spec,
                                  generate_scene, quiet_spec)


class TestGenerate:
    def test_deterministic_by_seed(self):
        a = generate_scene(fire_like_spec(dims=(64, 64), seed=9))
        b = generate_scene(fire_like_spec(dims=(64, 64), seed=9))
        np.testing.assert_array_equal(a.frames, b.frames)
        np.testing.assert_array_equal(a.mask, b.mask)
        c = generate_scene(fire_like_spec(dims=(64, 64), seed=10))
        assert not np.array_equal(a.frames, c.frames)

    def test_no_noise_no_change_all_frames_identical(self):
        spec = SynthSpec(dims=(32, 32), noise_std=0.0, seed=1)
        scene = generate_scene(spec)
        for t in range(1, 5):
            np.testing.assert_array_equal(scene.frames[t], scene.frames[0])
        assert (scene.mask == 0).all()
        assert not scene.missing.any()

    def test_mask_positives_exactly_the_rect(self):
        rect = (32, 64, 32, 32)
        spec = SynthSpec(dims=(128, 128), seed=2, noise_std=0.0,
                         change_rects=(ChangeRect(rect=rect, deltas={7: -0.2}),))
        scene = generate_scene(spec)
        expected = np.zeros((128, 128), np.uint8)
        expected[32:64, 64:96] = MASK_AFFECTED
        np.testing.assert_array_equal(scene.mask, expected)
        # the change really is confined to frame 5 inside the rect
        delta = scene.frames[4] - scene.frames[0]
        assert np.abs(delta[6, 32:64, 64:96]).min() > 0.1
        assert np.abs(delta[:, :32, :]).max() == 0.0

    def test_cloud_rect_labeled(self):
        spec = SynthSpec(dims=(64, 64), seed=3,
                         cloud_rects=((0, 0, 16, 16),))
        scene = generate_scene(spec)
        assert (scene.mask[:16, :16] == MASK_CLOUD).all()
        assert (scene.mask[16:, :] == 0).all()

    def test_missing_rect_flagged_and_zeroed(self):
        spec = SynthSpec(dims=(64, 64), seed=4,
                         missing_rects=((8, 8, 4, 4),))
        scene = generate_scene(spec)
        assert scene.missing[8:12, 8:12].all()
        assert scene.missing.sum() == 16
        assert (scene.frames[:, :, 8:12, 8:12] == 0.0).all()

    def test_values_positive_outside_missing(self):
        scene = generate_scene(fire_like_spec(dims=(64, 64), seed=5))
        assert scene.frames.min() > 0.0

    def test_norm_stats_cover_before_frames(self):
        scene = generate_scene(flood_like_spec(dims=(64, 64), seed=6))
        logs = np.log(scene.frames[:4])
        for b in range(scene.n_bands):
            lo, hi = scene.norm_stats[b]
            assert lo < logs[:, b].min()
            assert hi > logs[:, b].max()

    def test_rect_outside_dims_rejected(self):
        with pytest.raises(ValueError):
            SynthSpec(dims=(32, 32), cloud_rects=((0, 0, 40, 2),))

    def test_band_count_must_match_sensor(self):
        with pytest.raises(ValueError):
            SynthSpec(dims=(32, 32), band_base=(0.5, 0.5))

    def test_presets_registered(self):
        assert set(PRESETS) == {"fire", "flood", "quiet"}
        scene = generate_scene(quiet_spec(dims=(32, 32)))
        assert (scene.mask == 0).all()
        assert scene.event_class_hint == "quiet"


class TestBundleRoundtrip:
    def test_bit_exact_roundtrip(self, tmp_path):
        scene = generate_scene(fire_like_spec(dims=(64, 64), seed=7))
        out = write_bundle(scene, tmp_path / "ev")
        loaded = read_bundle(out)
        np.testing.assert_array_equal(loaded.frames, scene.frames)
        np.testing.assert_array_equal(loaded.mask, scene.mask)
        np.testing.assert_array_equal(loaded.missing, scene.missing)
        np.testing.assert_array_equal(loaded.norm_stats, scene.norm_stats)
        assert loaded.sensor == scene.sensor
        assert loaded.event_id == scene.event_id
        assert loaded.event_class_hint == scene.event_class_hint
        assert loaded.stats_source == "computed"

    def test_missing_manifest_rejected(self, tmp_path):
        from nanowire_cd.bundle import BundleError
        with pytest.raises(BundleError):
            read_bundle(tmp_path)

    def test_corrupt_frame_rejected(self, tmp_path):
        from nanowire_cd.bundle import BundleError
        scene = generate_scene(quiet_spec(dims=(32, 32)))
        out = write_bundle(scene, tmp_path / "ev")
        frame = out / "frame_1.raw"
        frame.write_bytes(frame.read_bytes()[:-8])
        with pytest.raises(BundleError):
            read_bundle(out)
