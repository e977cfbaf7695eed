import json
import os

import numpy as np
import pytest

from dcmatch.data import (
    FEATURES_NAME,
    MANIFEST_NAME,
    Episode,
    FeatureBundle,
    SyntheticConfig,
    load_bundle,
    sample_episode,
    save_bundle,
    synth_generate,
)
from dcmatch.errors import (
    BundleManifestError,
    BundlePayloadError,
    BundleShapeError,
    InputError,
    TeacherFileError,
    TextBankError,
)
from dcmatch.evaluate import EvalSettings, MetricSpec, evaluate_bundle


def small_config(**overrides):
    base = dict(
        scenario="B",
        seed=5,
        classes=6,
        videos_per_class=5,
        frames=4,
        tokens=5,
        channels=8,
        text_dim=6,
    )
    base.update(overrides)
    return SyntheticConfig(**base)


class TestPersistence:
    def test_round_trip_is_lossless(self, tmp_path):
        bundle = synth_generate(small_config())
        path = str(tmp_path / "bundle")
        save_bundle(bundle, path)
        loaded = load_bundle(path)
        assert loaded.features.tobytes() == bundle.features.tobytes()
        assert loaded.ids == bundle.ids
        assert np.array_equal(loaded.labels, bundle.labels)
        assert loaded.class_names == bundle.class_names
        assert set(loaded.teachers) == set(bundle.teachers)
        for vid in bundle.teachers:
            assert np.array_equal(loaded.teachers[vid], bundle.teachers[vid])
        assert np.array_equal(loaded.text_embeddings, bundle.text_embeddings)

    def test_save_load_save_is_stable(self, tmp_path):
        bundle = synth_generate(small_config())
        p1, p2 = str(tmp_path / "b1"), str(tmp_path / "b2")
        save_bundle(bundle, p1)
        save_bundle(load_bundle(p1), p2)
        for name in (MANIFEST_NAME, FEATURES_NAME, "teacher.csv", "text_embeddings.csv"):
            with open(os.path.join(p1, name), "rb") as fh:
                first = fh.read()
            with open(os.path.join(p2, name), "rb") as fh:
                second = fh.read()
            assert first == second, name

    def test_corrupt_manifest_raises_manifest_error(self, tmp_path):
        bundle = synth_generate(small_config())
        path = str(tmp_path / "bundle")
        save_bundle(bundle, path)
        with open(os.path.join(path, MANIFEST_NAME), "w") as fh:
            fh.write("{ not json")
        with pytest.raises(BundleManifestError):
            load_bundle(path)

    def test_missing_manifest_field_raises_manifest_error(self, tmp_path):
        bundle = synth_generate(small_config())
        path = str(tmp_path / "bundle")
        save_bundle(bundle, path)
        manifest_path = os.path.join(path, MANIFEST_NAME)
        with open(manifest_path) as fh:
            manifest = json.load(fh)
        del manifest["channels"]
        with open(manifest_path, "w") as fh:
            json.dump(manifest, fh)
        with pytest.raises(BundleManifestError):
            load_bundle(path)

    def test_extra_payload_bytes_raise_shape_error(self, tmp_path):
        bundle = synth_generate(small_config())
        path = str(tmp_path / "bundle")
        save_bundle(bundle, path)
        with open(os.path.join(path, FEATURES_NAME), "ab") as fh:
            fh.write(b"\x00" * 16)
        with pytest.raises(BundleShapeError):
            load_bundle(path)

    def test_offset_mismatch_raises_shape_error(self, tmp_path):
        bundle = synth_generate(small_config())
        path = str(tmp_path / "bundle")
        save_bundle(bundle, path)
        manifest_path = os.path.join(path, MANIFEST_NAME)
        with open(manifest_path) as fh:
            manifest = json.load(fh)
        manifest["videos"][1]["offset"] += 4
        with open(manifest_path, "w") as fh:
            json.dump(manifest, fh)
        with pytest.raises(BundleShapeError):
            load_bundle(path)

    def test_truncated_payload_raises_payload_error(self, tmp_path):
        bundle = synth_generate(small_config())
        path = str(tmp_path / "bundle")
        save_bundle(bundle, path)
        features_path = os.path.join(path, FEATURES_NAME)
        size = os.path.getsize(features_path)
        with open(features_path, "r+b") as fh:
            fh.truncate(size - 8)
        with pytest.raises(BundlePayloadError):
            load_bundle(path)

    def test_bad_teacher_row_raises_teacher_error(self, tmp_path):
        bundle = synth_generate(small_config())
        path = str(tmp_path / "bundle")
        save_bundle(bundle, path)
        with open(os.path.join(path, "teacher.csv"), "a") as fh:
            fh.write("vid_00000,0.5,0.5\n")
        with pytest.raises(TeacherFileError):
            load_bundle(path)

    def test_non_unit_text_rows_raise_text_error(self, tmp_path):
        bundle = synth_generate(small_config())
        path = str(tmp_path / "bundle")
        save_bundle(bundle, path)
        text_path = os.path.join(path, "text_embeddings.csv")
        with open(text_path) as fh:
            lines = fh.readlines()
        lines[0] = ",".join(str(2.0 * float(x)) for x in lines[0].split(",")) + "\n"
        with open(text_path, "w") as fh:
            fh.writelines(lines)
        with pytest.raises(TextBankError):
            load_bundle(path)


class TestEpisodeSampling:
    def test_support_size_five_way_one_shot(self, tiny_bundle_b, rng):
        episode = sample_episode(tiny_bundle_b, 5, 1, 1, rng)
        assert episode.support.shape == (5, 1)
        assert episode.queries.size == 5
        assert len(set(episode.classes.tolist())) == 5

    def test_insufficient_videos_names_the_class(self, tiny_bundle_b, rng):
        # six videos per class: a 6-shot request with one query must fail
        with pytest.raises(InputError) as err:
            sample_episode(tiny_bundle_b, 5, 6, 1, rng)
        assert "class_" in str(err.value)

    def test_disjointness_fuzz(self, tiny_bundle_b, rng):
        for _ in range(1500):
            episode = sample_episode(tiny_bundle_b, 4, 2, 1, rng)
            support = set(episode.support.ravel().tolist())
            queries = set(episode.queries.tolist())
            assert not support & queries
            assert len(support) == 8
            for pos, q in zip(episode.query_pos, episode.queries):
                assert tiny_bundle_b.labels[q] == episode.classes[pos]

    def test_class_selection_uniform_chi_square(self, tiny_bundle_b):
        rng = np.random.default_rng(77)
        c = tiny_bundle_b.num_classes
        way, draws = 4, 10_000
        counts = np.zeros(c)
        for _ in range(draws):
            episode = sample_episode(tiny_bundle_b, way, 1, 1, rng)
            counts[episode.classes] += 1
        expected = draws * way / c
        # sampling without replacement fixes the per-draw total, so the
        # plain statistic needs the finite-population correction to be
        # chi-square with c-1 degrees of freedom
        stat = float(np.sum((counts - expected) ** 2) / expected) * (c - 1) / (c - way)
        dof = c - 1
        assert stat < dof + 3.0 * np.sqrt(2.0 * dof)


class TestSyntheticGenerator:
    def test_fixed_seed_reproducible(self):
        a = synth_generate(small_config())
        b = synth_generate(small_config())
        assert a.features.tobytes() == b.features.tobytes()
        for vid in a.teachers:
            assert np.array_equal(a.teachers[vid], b.teachers[vid])
        assert np.array_equal(a.text_embeddings, b.text_embeddings)

    def test_scenario_a_zero_noise_gap_is_perfect(self):
        bundle = synth_generate(small_config(scenario="A", sigma=0.0))
        rng = np.random.default_rng(3)
        episodes = [sample_episode(bundle, 5, 1, 1, rng) for _ in range(50)]
        out = evaluate_bundle(
            bundle, episodes, [MetricSpec("gap")], EvalSettings(alpha=0.8)
        )
        assert out["gap"].accuracy == 1.0

    def test_teacher_rows_are_valid_simplexes(self):
        bundle = synth_generate(small_config())
        for row in bundle.teachers.values():
            assert row.min() >= 0.0
            assert abs(row.sum() - 1.0) < 1e-9

    def test_teacher_fidelity_near_target(self):
        bundle = synth_generate(
            small_config(classes=10, videos_per_class=60, teacher_fidelity=0.9)
        )
        hits = 0
        for i, vid in enumerate(bundle.ids):
            hits += int(np.argmax(bundle.teachers[vid]) == bundle.labels[i])
        rate = hits / bundle.num_videos
        assert 0.85 <= rate <= 0.95

    def test_class_means_carry_no_signal(self):
        # first moments cancel exactly in the balanced-sign construction;
        # the empirical class-mean spread must be noise-dominated, so it is
        # bounded against a matched pure-noise (gamma=0) bundle
        cfg = small_config(classes=8, videos_per_class=24, channels=16, seed=9)
        signal = synth_generate(cfg)
        noise = synth_generate(small_config(classes=8, videos_per_class=24,
                                            channels=16, seed=9, gamma=0.0))

        def class_mean_spread(bundle):
            pooled = bundle.features.astype(np.float64).mean(axis=(1, 2))
            std = bundle.features.astype(np.float64).std()
            means = np.stack(
                [pooled[bundle.labels == c].mean(axis=0) for c in range(bundle.num_classes)]
            ) / std
            dists = [
                np.linalg.norm(means[a] - means[b])
                for a in range(len(means))
                for b in range(a + 1, len(means))
            ]
            return max(dists)

        spread_signal = class_mean_spread(signal)
        spread_noise = class_mean_spread(noise)
        assert spread_signal <= 1.5 * spread_noise
        assert spread_signal < 0.5

    def test_gamma_zero_all_metrics_at_chance(self):
        bundle = synth_generate(
            SyntheticConfig(
                scenario="B", seed=13, classes=10, videos_per_class=12,
                frames=4, tokens=6, channels=16, text_dim=8, gamma=0.0,
            )
        )
        rng = np.random.default_rng(5)
        episodes = [sample_episode(bundle, 5, 1, 1, rng) for _ in range(2000)]
        specs = [MetricSpec("ifdc"), MetricSpec("cosine"), MetricSpec("gap")]
        out = evaluate_bundle(bundle, episodes, specs, EvalSettings(alpha=0.8))
        for name, outcome in out.items():
            assert 0.17 <= outcome.accuracy <= 0.23, (name, outcome.accuracy)

    def test_invalid_configs_rejected(self):
        with pytest.raises(InputError):
            SyntheticConfig(scenario="C").validate()
        with pytest.raises(InputError):
            SyntheticConfig(gamma=-1.0).validate()
        with pytest.raises(InputError):
            SyntheticConfig(teacher_fidelity=1.5).validate()


class TestBundleValidation:
    def test_duplicate_ids_rejected(self):
        with pytest.raises(InputError):
            FeatureBundle(
                features=np.zeros((2, 2, 3, 4), dtype=np.float32),
                ids=["a", "a"],
                labels=np.array([0, 0]),
                class_names=["only"],
            )

    def test_label_out_of_range_rejected(self):
        with pytest.raises(InputError):
            FeatureBundle(
                features=np.zeros((1, 2, 3, 4), dtype=np.float32),
                ids=["a"],
                labels=np.array([3]),
                class_names=["only"],
            )

    def test_nonfinite_features_rejected(self):
        feats = np.zeros((1, 2, 3, 4), dtype=np.float32)
        feats[0, 0, 0, 0] = np.nan
        with pytest.raises(InputError):
            FeatureBundle(
                features=feats, ids=["a"], labels=np.array([0]), class_names=["only"]
            )
