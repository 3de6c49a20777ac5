import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from diffgap import (DegeneratePartitionError, load_csv, make_circle_dataset,
                     make_schedule, partition_classes, save_csv)


def angles_of(points):
    return np.mod(np.arctan2(points[:, 1], points[:, 0]), 2 * np.pi)


class TestCircleDataset:
    def test_symmetric_n2_placement(self):
        ds = make_circle_dataset(2, 1.0, "symmetric", seed=0)
        np.testing.assert_allclose(sorted(angles_of(ds.train_points)),
                                   [0.0, np.pi], atol=1e-12)
        np.testing.assert_allclose(sorted(angles_of(ds.val_points)),
                                   [np.pi / 2, 3 * np.pi / 2], atol=1e-12)

    def test_radius_invariant(self):
        ds = make_circle_dataset(16, 3.0, "symmetric", seed=0)
        assert len(ds.points) == 32
        radii = np.linalg.norm(ds.points, axis=1)
        assert np.max(np.abs(radii - 3.0)) <= 1e-12 * 3.0

    def test_random_mode_alternates_by_angle(self):
        # independent check: sort all angles, tags must strictly alternate
        ds = make_circle_dataset(16, 3.0, "random", seed=7)
        order = np.argsort(angles_of(ds.points))
        tags = ds.split[order]
        assert all(tags[i] != tags[i + 1] for i in range(len(tags) - 1))

    @settings(max_examples=30, deadline=None)
    @given(n=st.integers(2, 40), radius=st.floats(0.1, 50.0),
           mode=st.sampled_from(["symmetric", "random"]), seed=st.integers(0, 999))
    def test_radius_invariant_property(self, n, radius, mode, seed):
        ds = make_circle_dataset(n, radius, mode, seed)
        radii = np.linalg.norm(ds.points, axis=1)
        assert np.max(np.abs(radii - radius)) <= 1e-12 * radius

    def test_same_seed_identical_bytes(self):
        a = make_circle_dataset(16, 3.0, "random", seed=11)
        b = make_circle_dataset(16, 3.0, "random", seed=11)
        assert a.points.tobytes() == b.points.tobytes()
        assert a.split.tolist() == b.split.tolist()

    def test_invalid_arguments(self):
        with pytest.raises(ValueError):
            make_circle_dataset(1, 3.0)
        with pytest.raises(ValueError):
            make_circle_dataset(4, -1.0)
        with pytest.raises(ValueError):
            make_circle_dataset(4, 3.0, mode="spiral")

    def test_row_order_train_block_then_val_block(self):
        ds = make_circle_dataset(8, 2.0, "random", seed=3)
        assert list(ds.split[:8]) == ["train"] * 8
        assert list(ds.split[8:]) == ["val"] * 8
        for block in (ds.points[:8], ds.points[8:]):
            a = angles_of(block)
            assert np.all(np.diff(a) > 0)


class TestSchedule:
    def test_two_step_endpoints(self):
        s = make_schedule(0.002, 28.0, 7.0, 2)
        assert s.levels.tolist() == [28.0, 0.002, 0.0]

    def test_endpoint_identity(self):
        s = make_schedule(0.002, 80.0, 7.0, 18)
        assert s.levels[0] == 80.0
        assert s.levels[-2] == 0.002
        assert s.levels[-1] == 0.0
        assert np.all(np.diff(s.levels) < 0)

    def test_interior_level_matches_closed_formula(self):
        # frozen 60-digit evaluation of the power-law formula at i=16
        s = make_schedule(0.002, 28.0, 7.0, 32)
        oracle = 0.9406036614308796905068937
        assert s.sigmas[16] == pytest.approx(oracle, rel=5e-14)

    def test_deterministic(self):
        a = make_schedule(0.002, 28.0, 7.0, 32)
        b = make_schedule(0.002, 28.0, 7.0, 32)
        assert a.levels.tobytes() == b.levels.tobytes()

    @settings(max_examples=30, deadline=None)
    @given(smin=st.floats(1e-4, 0.5), smax=st.floats(1.0, 200.0),
           rho=st.floats(0.5, 10.0), n=st.integers(2, 64))
    def test_strictly_decreasing_property(self, smin, smax, rho, n):
        s = make_schedule(smin, smax, rho, n)
        assert np.all(np.diff(s.levels) < 0)
        assert s.levels[-1] == 0.0

    def test_invalid_arguments(self):
        with pytest.raises(ValueError):
            make_schedule(1.0, 0.5)
        with pytest.raises(ValueError):
            make_schedule(0.002, 28.0, -1.0)
        with pytest.raises(ValueError):
            make_schedule(0.002, 28.0, 7.0, 1)


def lloyd_oracle(train, k, seed, max_iter=200):
    """Straightforward Lloyd reimplementation used as the independent oracle."""
    rng = np.random.default_rng(seed)
    centroids = [train[i].copy() for i in rng.choice(len(train), size=k, replace=False)]
    assign = [-1] * len(train)
    for _ in range(max_iter):
        new_assign = []
        for p in train:
            dists = [float(np.sum((p - c) ** 2)) for c in centroids]
            new_assign.append(dists.index(min(dists)))
        for c in range(k):
            members = [train[i] for i in range(len(train)) if new_assign[i] == c]
            if not members:
                far = max(range(len(train)),
                          key=lambda i: np.sum((train[i] - centroids[new_assign[i]]) ** 2))
                centroids[c] = train[far].copy()
                new_assign[far] = c
            else:
                centroids[c] = np.mean(members, axis=0)
        if new_assign == assign:
            break
        assign = new_assign
    return np.array(assign)


class TestPartition:
    def test_k1_all_same_class(self):
        ds = make_circle_dataset(8, 3.0, "random", seed=2)
        part = partition_classes(ds, 1, "angular-sector")
        assert np.all(part.assignment == 0)

    def test_symmetric_angular_sectors_balanced(self):
        ds = make_circle_dataset(16, 3.0, "symmetric", seed=0)
        part = partition_classes(ds, 4, "angular-sector")
        train_assign = part.assignment[ds.train_mask]
        assert np.bincount(train_assign, minlength=4).tolist() == [4, 4, 4, 4]

    def test_kmeans_matches_independent_lloyd(self):
        ds = make_circle_dataset(16, 3.0, "random", seed=1)
        part = partition_classes(ds, 3, "k-means", seed=1)
        expected = lloyd_oracle(ds.train_points, 3, seed=1)
        np.testing.assert_array_equal(part.assignment[ds.train_mask], expected)

    def test_kmeans_val_assigned_to_nearest_centroid(self):
        ds = make_circle_dataset(16, 3.0, "random", seed=1)
        part = partition_classes(ds, 3, "k-means", seed=1)
        train_assign = part.assignment[ds.train_mask]
        centroids = np.stack([ds.train_points[train_assign == c].mean(axis=0)
                              for c in range(3)])
        d2 = np.sum((ds.val_points[:, None, :] - centroids[None]) ** 2, axis=-1)
        np.testing.assert_array_equal(part.assignment[~ds.train_mask], np.argmin(d2, axis=1))

    def test_k_too_large_rejected(self):
        ds = make_circle_dataset(4, 3.0)
        with pytest.raises(ValueError):
            partition_classes(ds, 5, "angular-sector")

    def test_degenerate_partition_raises(self):
        # all points in one half-plane: high k leaves empty sectors
        pts = np.stack([np.cos(np.linspace(0.1, 0.4, 8)),
                        np.sin(np.linspace(0.1, 0.4, 8))], axis=1)
        from diffgap import PointDataset
        ds = PointDataset(pts, np.zeros(8, dtype=int), np.array(["train"] * 4 + ["val"] * 4))
        with pytest.raises(DegeneratePartitionError):
            partition_classes(ds, 4, "angular-sector")

    def test_paired_relabel_validation(self):
        ds = make_circle_dataset(8, 3.0, "symmetric", seed=0)
        part = partition_classes(ds, 2, "angular-sector")
        relabeled = ds.with_labels(part.assignment)
        assert set(relabeled.train_labels) == {0, 1}
        lop_sided = np.where(np.arange(16) < 8, 0, 1)  # train all 0, val all 1
        with pytest.raises(DegeneratePartitionError):
            ds.with_labels(lop_sided)


class TestCsvRoundTrip:
    def test_bit_exact(self, tmp_path, random_circle):
        path = tmp_path / "circle.csv"
        save_csv(random_circle, path)
        back = load_csv(path)
        assert back.points.tobytes() == random_circle.points.tobytes()
        assert back.labels.tolist() == random_circle.labels.tolist()
        assert back.split.tolist() == random_circle.split.tolist()

    def test_header_shape(self, tmp_path, default_circle):
        path = tmp_path / "circle.csv"
        save_csv(default_circle, path)
        header = path.read_text().splitlines()[0]
        assert header == "x0,x1,label,split"

    def test_rejects_malformed(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("a,b,c\n1,2,3\n")
        with pytest.raises(ValueError):
            load_csv(path)
