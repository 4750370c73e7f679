"""Grid cell assignment and the per-cell detector bank."""

import math

import numpy as np
import pytest

from anorec.errors import ValidationError
from anorec.grid import (
    GridSpec,
    assign_cell,
    canonical_order,
    fit_grid_bank,
)
from anorec.novelty import DetectorConfig, KernelDensityDetector
from anorec.pack import ConceptTaskSpec, FeaturePack, RegionRecord


def make_grid_pack(features, boxes, frame=(360, 240), video="cam0"):
    features = np.asarray(features, dtype=np.float32)
    n, dim = features.shape
    tasks = [ConceptTaskSpec("object", ("a", "b"))]
    return FeaturePack(
        feature_dim=dim,
        frame_sizes={video: frame},
        tasks=tasks,
        records=[
            RegionRecord(video, 0, tuple(float(v) for v in boxes[i]), i, {"object": i})
            for i in range(n)
        ],
        features=features,
        scores={"object": np.full((n, 2), 0.5, dtype=np.float32)},
    )


def box_at(cx, cy, w=10.0, h=10.0):
    return (cx - w / 2, cy - h / 2, w, h)


class TestAssignCell:
    # 360x240 with 3x4 -> cells are 90 wide, 80 tall
    SPEC = GridSpec(rows=3, cols=4, frame_width=360, frame_height=240)

    def test_first_cell(self):
        assert assign_cell(self.SPEC, box_at(45, 40)) == (0, 0)

    def test_boundary_belongs_to_next_cell(self):
        assert assign_cell(self.SPEC, box_at(90, 80)) == (1, 1)

    def test_last_cell(self):
        assert assign_cell(self.SPEC, box_at(359.9, 239.9, 0.2, 0.2)) == (2, 3)

    def test_center_on_far_edge_clamps(self):
        # center exactly on the frame edge indexes past the last cell
        assert assign_cell(self.SPEC, (350.0, 230.0, 20.0, 20.0)) == (2, 3)

    def test_cell_centers_map_to_all_cells(self):
        seen = set()
        for r in range(3):
            for c in range(4):
                b = box_at(c * 90 + 45, r * 80 + 40)
                seen.add(assign_cell(self.SPEC, b))
        assert len(seen) == 12

    def test_degenerate_box_rejected(self):
        with pytest.raises(ValidationError):
            assign_cell(self.SPEC, (10.0, 10.0, 0.0, 5.0))

    def test_bad_spec_rejected(self):
        with pytest.raises(ValidationError):
            GridSpec(rows=0, cols=4, frame_width=100, frame_height=100)
        with pytest.raises(ValidationError):
            GridSpec(rows=3, cols=4, frame_width=0, frame_height=100)


class TestCanonicalOrder:
    def test_is_permutation_and_order_free(self):
        rng = np.random.Generator(np.random.PCG64(90))
        X = rng.normal(size=(50, 12))
        order = canonical_order(X)
        assert sorted(order) == list(range(50))
        perm = rng.permutation(50)
        order2 = canonical_order(X[perm])
        assert np.array_equal(X[order], X[perm][order2])

    def test_ties_in_leading_columns(self):
        X = np.zeros((4, 10))
        X[:, 9] = [3.0, 1.0, 2.0, 0.0]  # differs only past the lead window
        perm = np.array([2, 0, 3, 1])
        assert np.array_equal(X[canonical_order(X)], X[perm][canonical_order(X[perm])])


def uniform_cell_pack(per_cell=8, dim=6, seed=0, frame=(360, 240)):
    rng = np.random.Generator(np.random.PCG64(seed))
    features, boxes = [], []
    for r in range(3):
        for c in range(4):
            center = np.zeros(dim)
            center[0] = r * 10
            center[1] = c * 10
            for _ in range(per_cell):
                features.append(center + rng.normal(size=dim) * 0.1)
                cx = c * 90 + rng.uniform(20, 70)
                cy = r * 80 + rng.uniform(20, 60)
                boxes.append(box_at(cx, cy))
    return make_grid_pack(np.array(features), boxes, frame=frame)


class TestFitGridBank:
    def test_populates_all_cells(self):
        bank = fit_grid_bank(uniform_cell_pack(), DetectorConfig(kind="kde", preprocessing="none"))
        assert len(bank.trained_cells) == 12
        assert bank.spec.rows == 3 and bank.spec.cols == 4

    def test_sparse_cell_left_untrained(self):
        pack = uniform_cell_pack(per_cell=3)
        # drop all but one record from cell (0, 0)
        keep = [i for i, rec in enumerate(pack.records)
                if not (i < 3 and assign_cell(GridSpec(3, 4, 360, 240), rec.box) == (0, 0))
                or i == 0]
        from anorec.pack import subset_pack
        pack = subset_pack(pack, keep)
        bank = fit_grid_bank(pack, DetectorConfig(kind="kde", preprocessing="none"))
        assert (0, 0) not in bank.trained_cells
        score = bank.score_region(np.zeros(6), box_at(45, 40))
        assert score.untrained and score.score == math.inf

    def test_untrained_score_flag_trained_cell_false(self):
        bank = fit_grid_bank(uniform_cell_pack(), DetectorConfig(kind="kde", preprocessing="none"))
        out = bank.score_region(np.zeros(6), box_at(45, 40))
        assert not out.untrained and np.isfinite(out.score)

    def test_one_by_one_equals_bare_detector(self):
        rng = np.random.Generator(np.random.PCG64(91))
        X = rng.normal(size=(40, 5))
        boxes = [box_at(rng.uniform(10, 350), rng.uniform(10, 230)) for _ in range(40)]
        pack = make_grid_pack(X, boxes)
        bank = fit_grid_bank(
            pack, DetectorConfig(kind="kde", preprocessing="none"), rows=1, cols=1
        )
        # the pack stores float32; feed the bare detector the same rounding
        stored = pack.features.astype(np.float64)
        bare = KernelDensityDetector().fit(stored)
        q = rng.normal(size=5)
        got = bank.score_region(q, box_at(100, 100)).score
        assert got == pytest.approx(bare.score(q), rel=1e-9)

    def test_score_pack_matches_score_region(self):
        pack = uniform_cell_pack(seed=3)
        bank = fit_grid_bank(pack, DetectorConfig(kind="kde", preprocessing="none"))
        scores, flags = bank.score_pack(pack)
        for i, rec in enumerate(pack.records):
            single = bank.score_region(
                pack.features[rec.feature_offset].astype(np.float64), rec.box
            )
            assert scores[i] == pytest.approx(single.score, rel=1e-9)
            assert flags[i] == single.untrained

    def test_routing_respects_cells(self):
        # two cells with very different data; a query near cell A's data but
        # placed in cell B's territory must be scored by cell B's detector
        rng = np.random.Generator(np.random.PCG64(92))
        feats, boxes = [], []
        for _ in range(10):
            feats.append(rng.normal(size=4) * 0.05)  # cell (0,0) data near 0
            boxes.append(box_at(45, 40))
        for _ in range(10):
            feats.append(rng.normal(size=4) * 0.05 + 10.0)  # cell (2,3) near 10
            boxes.append(box_at(315, 200))
        pack = make_grid_pack(np.array(feats), boxes)
        cfg = DetectorConfig(kind="nn", preprocessing="none")
        bank = fit_grid_bank(pack, cfg)
        q = np.zeros(4)  # matches cell (0,0) data
        near = bank.score_region(q, box_at(45, 40)).score
        far = bank.score_region(q, box_at(315, 200)).score
        assert far > near + 5.0

    def test_order_invariance_all_kinds(self):
        rng = np.random.Generator(np.random.PCG64(93))
        pack = uniform_cell_pack(per_cell=6, dim=8, seed=5)
        perm = rng.permutation(pack.n)
        from anorec.pack import subset_pack
        shuffled = subset_pack(pack, perm)
        queries = rng.normal(size=(15, 8))
        qboxes = [box_at(rng.uniform(10, 350), rng.uniform(10, 230)) for _ in range(15)]
        for cfg in (
            DetectorConfig(kind="nn", preprocessing="none"),
            DetectorConfig(kind="kde", preprocessing="none"),
            DetectorConfig(kind="ocsvm", preprocessing="none", rbf_param=0.5),
            DetectorConfig(kind="nn", preprocessing="pq", pq_subvectors=2, pq_bits=2),
            DetectorConfig(kind="kde", preprocessing="pca", pca_dim=3),
        ):
            a = fit_grid_bank(pack, cfg)
            b = fit_grid_bank(shuffled, cfg)
            sa = [a.score_region(q, bx).score for q, bx in zip(queries, qboxes)]
            sb = [b.score_region(q, bx).score for q, bx in zip(queries, qboxes)]
            assert sa == sb, cfg.kind

    def test_shared_preprocessing_is_global(self):
        pack = uniform_cell_pack(per_cell=6, dim=8, seed=7)
        cfg = DetectorConfig(kind="kde", preprocessing="pca", pca_dim=3)
        bank = fit_grid_bank(pack, cfg)
        assert bank.pca is not None
        assert bank.pca.out_dim == 3
        # every cell's detector stores 3-dim training data
        for cell in bank.trained_cells:
            assert bank.cells[cell].train.shape[1] == 3

    def test_nn_pq_shares_codebook(self):
        pack = uniform_cell_pack(per_cell=6, dim=8, seed=8)
        cfg = DetectorConfig(kind="nn", pq_subvectors=4, pq_bits=3)
        bank = fit_grid_bank(pack, cfg)
        assert bank.codebook is not None
        for cell in bank.trained_cells:
            assert bank.cells[cell].codebook is bank.codebook

    def test_mixed_frame_sizes_rejected(self):
        pack = uniform_cell_pack()
        pack.frame_sizes["cam1"] = (100, 100)
        pack.records[0] = RegionRecord(
            "cam1", 0, (10.0, 10.0, 20.0, 20.0), 0, {"object": 0}
        )
        with pytest.raises(ValidationError):
            fit_grid_bank(pack, DetectorConfig(kind="kde", preprocessing="none"))

    def test_empty_pack_rejected(self):
        pack = make_grid_pack(np.zeros((0, 4)), [])
        with pytest.raises(ValidationError):
            fit_grid_bank(pack, DetectorConfig(kind="kde", preprocessing="none"))

    def test_feature_dim_mismatch_on_score(self):
        bank = fit_grid_bank(uniform_cell_pack(), DetectorConfig(kind="kde", preprocessing="none"))
        with pytest.raises(ValidationError):
            bank.score_region(np.zeros(3), box_at(45, 40))

    def test_deterministic_across_runs(self):
        pack = uniform_cell_pack(per_cell=6, dim=8, seed=9)
        cfg = DetectorConfig(kind="nn", pq_subvectors=4, pq_bits=2, seed=3)
        a = fit_grid_bank(pack, cfg)
        b = fit_grid_bank(pack, cfg)
        assert a.codebook.centroids.tobytes() == b.codebook.centroids.tobytes()
        q = np.arange(8.0)
        assert a.score_region(q, box_at(45, 40)).score == b.score_region(q, box_at(45, 40)).score
