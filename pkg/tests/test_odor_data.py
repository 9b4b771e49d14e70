import math

import numpy as np
import pytest

from flyolf.errors import ConfigError, FormatError
from flyolf.odor_data import (
    DatasetConfig,
    generate_dataset,
    make_prototypes,
    ou_noise_matrix,
    read_dataset,
    realize_ou_noise,
    sample_coords,
    sample_gaussian,
    sample_ou,
    write_dataset,
)


def cfg(**kw):
    base = dict(n_classes=2, n_orn=50, n_train=4, n_test=2, seed=7)
    base.update(kw)
    return DatasetConfig(**base)


class TestPrototypes:
    def test_deterministic_across_calls(self):
        c = cfg(n_classes=5)
        np.testing.assert_array_equal(make_prototypes(c), make_prototypes(c))

    def test_components_in_unit_interval(self):
        p = make_prototypes(cfg(n_classes=20))
        assert p.min() >= 0.0 and p.max() <= 1.0

    def test_mean_matches_uniform_moment(self):
        # standard error bound for the mean of 50000 U(0,1) draws:
        # 1.96 * (1/sqrt(12)) / sqrt(50000)
        p = make_prototypes(cfg(n_classes=1000, n_orn=50))
        bound = 1.96 * (1.0 / math.sqrt(12.0)) / math.sqrt(1000 * 50)
        assert abs(float(p.mean()) - 0.5) < bound

    def test_rejects_single_class(self):
        with pytest.raises(ConfigError):
            make_prototypes(cfg(n_classes=1))


class TestGaussianSamples:
    def test_zero_noise_returns_prototype_bitwise(self):
        c = cfg(noise_intensity=0.0)
        protos = make_prototypes(c)
        s = sample_gaussian(protos[1], 1, 0, c)
        np.testing.assert_array_equal(s.intensities, protos[1])
        assert s.noise_stream_key is None

    def test_clipping_floor(self):
        c = cfg(noise_intensity=5.0, seed=3)
        protos = make_prototypes(c)
        hit_zero = False
        for k in range(20):
            s = sample_gaussian(protos[0], 0, k, c)
            assert s.intensities.min() >= 0.0
            hit_zero = hit_zero or (s.intensities == 0.0).any()
        assert hit_zero  # sigma=5 must push some components below zero

    def test_moments_at_mid_range_component(self):
        # Monte-Carlo: 1e5 draws on components with prototype 0.5 and
        # sigma=0.1; clipping is inactive there with overwhelming probability.
        c = cfg(n_classes=2, n_orn=50, noise_intensity=0.1, seed=11)
        proto = np.full(50, 0.5, np.float32)
        draws = np.stack(
            [sample_gaussian(proto, 0, k, c).intensities for k in range(2000)]
        ).ravel()
        assert draws.size == 100_000
        assert abs(float(draws.mean()) - 0.5) < 0.02 * 0.5
        assert abs(float(draws.std()) - 0.1) < 0.02 * 0.1

    def test_determinism_and_distinct_samples(self):
        c = cfg(noise_intensity=0.2)
        protos = make_prototypes(c)
        a = sample_gaussian(protos[0], 0, 5, c)
        b = sample_gaussian(protos[0], 0, 5, c)
        other = sample_gaussian(protos[0], 0, 6, c)
        np.testing.assert_array_equal(a.intensities, b.intensities)
        assert not np.array_equal(a.intensities, other.intensities)


class TestOUNoise:
    def test_zero_intensity_is_identically_zero(self):
        c = cfg(noise_kind="ou", noise_intensity=0.0)
        protos = make_prototypes(c)
        s = sample_ou(protos[0], 0, 0, c)
        for t in (0, 7, 29):
            assert np.all(realize_ou_noise(s, t, c) == 0.0)

    def test_same_key_timestep_same_value(self):
        c = cfg(noise_kind="ou", noise_intensity=0.5)
        protos = make_prototypes(c)
        s = sample_ou(protos[1], 1, 3, c)
        a = realize_ou_noise(s, 12, c)
        b = realize_ou_noise(s, 12, c)
        np.testing.assert_array_equal(a, b)

    def test_value_independent_of_window_length(self):
        c = cfg(noise_kind="ou", noise_intensity=0.5)
        m_short = ou_noise_matrix(12345, 10, 50, 0.5, 0.1)
        m_long = ou_noise_matrix(12345, 30, 50, 0.5, 0.1)
        np.testing.assert_array_equal(m_short, m_long[:10])

    def test_stationary_std(self):
        # 1e5 independent channel streams at a late timestep; the empirical
        # std must match the configured stationary std within 2%.
        vals = np.concatenate(
            [ou_noise_matrix(key, 30, 50, 0.5, 0.1)[29] for key in range(2000)]
        )
        assert vals.size == 100_000
        assert abs(float(vals.std()) - 0.5) < 0.02 * 0.5

    def test_timestep_out_of_window_raises(self):
        c = cfg(noise_kind="ou", noise_intensity=0.5)
        protos = make_prototypes(c)
        s = sample_ou(protos[0], 0, 0, c)
        with pytest.raises(ConfigError):
            realize_ou_noise(s, 30, c)
        with pytest.raises(ConfigError):
            realize_ou_noise(s, -1, c)

    def test_unstable_theta_rejected(self):
        with pytest.raises(ConfigError):
            ou_noise_matrix(1, 10, 5, 0.5, 2.5)


class TestSplitLayout:
    def test_round_robin_classes(self):
        c = cfg(n_classes=3, n_train=7, n_test=3)
        assert [sample_coords(c, "train", r)[0] for r in range(7)] == [0, 1, 2, 0, 1, 2, 0]

    def test_test_indices_continue_after_train(self):
        c = cfg(n_classes=3, n_train=7, n_test=3)
        # class 0 has 3 train samples (rows 0,3,6), so its first test index is 3
        assert sample_coords(c, "test", 0) == (0, 3)
        assert sample_coords(c, "test", 1) == (1, 2)

    def test_train_and_test_noise_never_collide(self):
        c = cfg(n_classes=2, n_train=10, n_test=10, noise_intensity=0.3, seed=5)
        ds = generate_dataset(c)
        train_rows = {ds.train_x[i].tobytes() for i in range(10)}
        test_rows = {ds.test_x[i].tobytes() for i in range(10)}
        assert not train_rows & test_rows


class TestDatasetIO:
    def test_round_trip_bitwise(self, tmp_path):
        ds = generate_dataset(cfg(n_classes=4, n_train=10, n_test=6, noise_intensity=0.15))
        path = tmp_path / "d.bin"
        write_dataset(path, ds)
        _, back = read_dataset(path)
        assert back.config == ds.config
        np.testing.assert_array_equal(back.prototypes, ds.prototypes)
        np.testing.assert_array_equal(back.train_x, ds.train_x)
        np.testing.assert_array_equal(back.train_y, ds.train_y)
        np.testing.assert_array_equal(back.test_x, ds.test_x)
        np.testing.assert_array_equal(back.test_y, ds.test_y)

    def test_ou_round_trip_preserves_noise_keys(self, tmp_path):
        ds = generate_dataset(cfg(noise_kind="ou", noise_intensity=0.5))
        path = tmp_path / "d.bin"
        write_dataset(path, ds)
        _, back = read_dataset(path)
        assert back.noise_key("train", 2) == ds.noise_key("train", 2)
        assert back.sample("test", 1).noise_stream_key == ds.sample("test", 1).noise_stream_key

    def test_manifest_offsets_consistent_with_file(self, tmp_path):
        c = cfg(n_classes=100, n_train=300, n_test=100)
        ds = generate_dataset(c)
        path = tmp_path / "d.bin"
        manifest = write_dataset(path, ds)
        data_len = path.stat().st_size - (path.read_bytes().find(b"end_header\n") + len(b"end_header\n"))
        assert data_len == max(off + n for off, n, _ in manifest.blocks.values())
        total = sum(n for _, n, _ in manifest.blocks.values())
        assert total == data_len  # blocks are contiguous

    def test_empty_train_split_rejected_on_write(self, tmp_path):
        ds = generate_dataset(cfg())
        ds.train_x = ds.train_x[:0]
        with pytest.raises(FormatError):
            write_dataset(tmp_path / "d.bin", ds)

    def test_version_mismatch(self, tmp_path):
        ds = generate_dataset(cfg())
        path = tmp_path / "d.bin"
        write_dataset(path, ds)
        raw = path.read_bytes().replace(b"flyolf-dataset 1", b"flyolf-dataset 9", 1)
        path.write_bytes(raw)
        with pytest.raises(FormatError):
            read_dataset(path)

    def test_truncated_file(self, tmp_path):
        ds = generate_dataset(cfg())
        path = tmp_path / "d.bin"
        write_dataset(path, ds)
        path.write_bytes(path.read_bytes()[:-17])
        with pytest.raises(FormatError):
            read_dataset(path)

    def test_checksum_failure(self, tmp_path):
        ds = generate_dataset(cfg())
        path = tmp_path / "d.bin"
        write_dataset(path, ds)
        raw = bytearray(path.read_bytes())
        raw[-1] ^= 0xFF
        path.write_bytes(bytes(raw))
        with pytest.raises(FormatError):
            read_dataset(path)


class TestInvariants:
    def test_everything_non_negative(self):
        ds = generate_dataset(cfg(n_classes=10, n_train=100, n_test=50, noise_intensity=0.4))
        assert ds.train_x.min() >= 0 and ds.test_x.min() >= 0

    def test_dataset_pure_function_of_config(self):
        c = cfg(n_classes=6, n_train=30, n_test=12, noise_intensity=0.2)
        a, b = generate_dataset(c), generate_dataset(c)
        np.testing.assert_array_equal(a.train_x, b.train_x)
        np.testing.assert_array_equal(a.test_y, b.test_y)

    def test_parallel_equals_sequential(self):
        # per-sample keyed streams: realizing in any order gives same bytes
        c = cfg(n_classes=3, n_train=9, n_test=3, noise_intensity=0.2)
        ds = generate_dataset(c)
        protos = ds.prototypes
        rows = []
        for row in reversed(range(9)):
            cls, k = sample_coords(c, "train", row)
            rows.append(sample_gaussian(protos[cls], cls, k, c).intensities)
        for row, x in zip(reversed(range(9)), rows):
            np.testing.assert_array_equal(x, ds.train_x[row])
