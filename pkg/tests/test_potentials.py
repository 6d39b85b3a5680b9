import math

import numpy as np
import pytest

from conftest import random_params
from gbpgrid import grid, oracle, potentials
from gbpgrid.errors import DimensionError, ValidationError
from gbpgrid.grid import Connectivity, build_local_edges, with_nonlocal_pairs
from gbpgrid.io import DepthGrid
from gbpgrid.potentials import (
    MrfParams,
    load_params,
    params_from_guide,
    save_params,
    validate,
)


def sparse_one_point(h, w, r, c, value):
    mask = np.zeros((h, w), dtype=bool)
    mask[r, c] = True
    return DepthGrid(np.where(mask, value, 0.0), mask)


class TestParamsFromGuide:
    def test_constant_guide_gives_lambda_smooth(self):
        g = build_local_edges(3, 3, Connectivity.FOUR)
        guide = DepthGrid(np.full((3, 3, 3), 0.25))
        p = params_from_guide(guide, sparse_one_point(3, 3, 0, 0, 2.0), g,
                              lambda_smooth=1.7)
        assert np.all(p.w_pair == 1.7)

    def test_high_contrast_clamps_to_floor(self):
        g = build_local_edges(1, 2, Connectivity.FOUR)
        guide = DepthGrid(np.array([[[0.0] * 3, [1.0] * 3]]))
        p = params_from_guide(guide, sparse_one_point(1, 2, 0, 0, 1.0), g,
                              sigma_color=0.01, w_min=1e-6)
        assert np.all(p.w_pair == 1e-6)

    def test_exact_weight_formula(self):
        # guide values 0 and 1 across the edge, sigma 1, lambda 2
        g = build_local_edges(1, 2, Connectivity.FOUR)
        guide = DepthGrid(np.array([[0.0, 1.0]]))
        p = params_from_guide(guide, sparse_one_point(1, 2, 0, 0, 1.0), g,
                              lambda_smooth=2.0, sigma_color=1.0)
        expected = 2.0 * math.exp(-0.5)
        assert p.w_pair[0] == pytest.approx(expected, rel=1e-15)
        assert p.w_pair[0] == pytest.approx(1.21306, abs=5e-6)

    def test_scale_covariance_in_lambda_smooth(self):
        rng = np.random.default_rng(0)
        g = build_local_edges(4, 5, Connectivity.EIGHT)
        guide = DepthGrid(rng.uniform(0.3, 0.7, (4, 5, 3)))
        sparse = sparse_one_point(4, 5, 1, 1, 3.0)
        p1 = params_from_guide(guide, sparse, g, lambda_smooth=1.0, w_min=1e-12)
        p2 = params_from_guide(guide, sparse, g, lambda_smooth=2.0, w_min=1e-12)
        unclamped = p1.w_pair > 1e-12
        assert np.allclose(p2.w_pair[unclamped], 2.0 * p1.w_pair[unclamped],
                           rtol=1e-15)

    def test_unary_and_residual_structure(self):
        g = build_local_edges(3, 3, Connectivity.FOUR)
        sparse = sparse_one_point(3, 3, 1, 2, 4.5)
        p = params_from_guide(DepthGrid(np.zeros((3, 3, 3))), sparse, g,
                              w_meas=2.5)
        assert p.w_unary[1, 2] == 2.5
        assert np.count_nonzero(p.w_unary) == 1
        assert np.all(p.r_pair == 0.0)
        validate(p, g)

    def test_shape_mismatch(self):
        g = build_local_edges(3, 3, Connectivity.FOUR)
        with pytest.raises(DimensionError):
            params_from_guide(DepthGrid(np.zeros((2, 3, 3))),
                              sparse_one_point(3, 3, 0, 0, 1.0), g)


class TestValidate:
    def test_direction_flip_properties(self):
        rng = np.random.default_rng(1)
        g = build_local_edges(4, 4, Connectivity.EIGHT)
        p = random_params(rng, g)
        assert np.array_equal(p.w_pair[g.rev], p.w_pair)
        assert np.array_equal(p.r_pair[g.rev], -p.r_pair)
        validate(p, g)

    def test_rejects_asymmetric_weight(self):
        rng = np.random.default_rng(2)
        g = build_local_edges(2, 2, Connectivity.FOUR)
        p = random_params(rng, g)
        p.w_pair[0] *= 2
        with pytest.raises(ValidationError, match="symmetric"):
            validate(p, g)

    def test_rejects_unary_outside_mask(self):
        g = build_local_edges(1, 2, Connectivity.FOUR)
        p = MrfParams(
            s=np.zeros((1, 2)), measurement_mask=np.zeros((1, 2), bool),
            w_unary=np.array([[1.0, 0.0]]), w_pair=np.ones(2),
            r_pair=np.zeros(2), beta=np.zeros((1, 2)),
        )
        with pytest.raises(ValidationError, match="mask"):
            validate(p, g)

    def test_rejects_beta_out_of_range(self):
        rng = np.random.default_rng(3)
        g = build_local_edges(2, 2, Connectivity.FOUR)
        p = random_params(rng, g)
        p.beta[0, 0] = 1.0
        with pytest.raises(ValidationError, match="beta"):
            validate(p, g)

    def test_empty_mask_warns_not_errors(self):
        g = build_local_edges(2, 2, Connectivity.FOUR)
        p = MrfParams(
            s=np.zeros((2, 2)), measurement_mask=np.zeros((2, 2), bool),
            w_unary=np.zeros((2, 2)), w_pair=np.ones(8),
            r_pair=np.zeros(8), beta=np.zeros((2, 2)),
        )
        with pytest.warns(UserWarning, match="no measurements"):
            validate(p, g)


class TestSaveLoad:
    def test_round_trip_bit_identical(self, tmp_path):
        rng = np.random.default_rng(7)
        g = build_local_edges(4, 5, Connectivity.EIGHT)
        g = with_nonlocal_pairs(g, np.array([[0, 12], [3, 17]]))
        p = random_params(rng, g, beta=0.25)
        path = tmp_path / "params.gbp"
        save_params(p, g, path, w_min=0.05)
        p2, g2 = load_params(path, w_min=0.05)
        assert np.array_equal(p2.s, p.s)
        assert np.array_equal(p2.measurement_mask, p.measurement_mask)
        assert np.array_equal(p2.w_unary, p.w_unary)
        assert np.array_equal(p2.w_pair, p.w_pair)
        assert np.array_equal(p2.r_pair, p.r_pair)
        assert np.array_equal(p2.beta, p.beta)
        assert g2.connectivity is g.connectivity
        assert np.array_equal(g2.src, g.src)
        assert np.array_equal(g2.nonlocal_pairs, g.nonlocal_pairs)

    def test_empty_mask_round_trips(self, tmp_path):
        g = build_local_edges(2, 3, Connectivity.FOUR)
        p = MrfParams(
            s=np.zeros((2, 3)), measurement_mask=np.zeros((2, 3), bool),
            w_unary=np.zeros((2, 3)), w_pair=np.ones(g.n_edges),
            r_pair=np.zeros(g.n_edges), beta=np.zeros((2, 3)),
        )
        path = tmp_path / "p.gbp"
        with pytest.warns(UserWarning):
            save_params(p, g, path)
        with pytest.warns(UserWarning):
            p2, _ = load_params(path)
        assert not p2.measurement_mask.any()

    def test_3x3_eight_stores_twenty_undirected_records(self, tmp_path):
        # count law: 2*(3*2 + 3*2 + 2*2*2) = 40 directed edges
        rng = np.random.default_rng(8)
        g = build_local_edges(3, 3, Connectivity.EIGHT)
        assert g.n_edges == 40
        p = random_params(rng, g)
        path = tmp_path / "p.gbp"
        save_params(p, g, path)
        header = 8 + 9 + 4  # magic, dims+flag, empty non-local table
        dense = 9 * (8 + 1 + 8 + 8)
        record = 4 + 4 + 8 + 8
        assert path.stat().st_size == header + dense + 20 * record
        p2, g2 = load_params(path)
        assert g2.n_edges == 40
        assert np.array_equal(p2.w_pair, p.w_pair)

    def test_two_pixel_chain_file_oracle_solution(self, tmp_path):
        # energy x0^2/2 + (x0 - x1 - 1)^2/2 has minimum (0, -1)
        g = build_local_edges(2, 1, Connectivity.FOUR)
        p = MrfParams(
            s=np.array([[0.0], [0.0]]),
            measurement_mask=np.array([[True], [False]]),
            w_unary=np.array([[1.0], [0.0]]),
            w_pair=np.ones(2),
            r_pair=np.zeros(2),
            beta=np.zeros((2, 1)),
        )
        # file record (src=0, dst=1, w=1, r=1) means (x_src - x_dst - 1)^2
        p.r_pair[g.src < g.dst] = -1.0
        p.r_pair[g.src > g.dst] = 1.0
        path = tmp_path / "chain.gbp"
        save_params(p, g, path)
        p2, g2 = load_params(path)
        mu = oracle.solve_exact(oracle.assemble_system(p2, g2))
        assert mu == pytest.approx([0.0, -1.0], abs=1e-12)

    def test_floor_violation_rejected_naming_edge(self, tmp_path):
        rng = np.random.default_rng(9)
        g = build_local_edges(2, 2, Connectivity.FOUR)
        p = random_params(rng, g)
        p.w_pair[:] = 1e-9  # below the default floor
        path = tmp_path / "p.gbp"
        save_params(p, g, path, w_min=1e-12)
        with pytest.raises(ValidationError, match="w_pair"):
            load_params(path)

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "p.gbp"
        path.write_bytes(b"NOTPARAM" + b"\x00" * 64)
        with pytest.raises(Exception, match="magic"):
            load_params(path)

    def test_truncated_file_rejected(self, tmp_path):
        rng = np.random.default_rng(10)
        g = build_local_edges(2, 2, Connectivity.FOUR)
        p = random_params(rng, g)
        path = tmp_path / "p.gbp"
        save_params(p, g, path)
        data = path.read_bytes()
        path.write_bytes(data[:-4])
        with pytest.raises(Exception, match="truncated"):
            load_params(path)

    def test_trailing_bytes_rejected(self, tmp_path):
        rng = np.random.default_rng(11)
        g = build_local_edges(2, 2, Connectivity.FOUR)
        p = random_params(rng, g)
        path = tmp_path / "p.gbp"
        save_params(p, g, path)
        path.write_bytes(path.read_bytes() + b"\x00")
        with pytest.raises(Exception, match="trailing"):
            load_params(path)


class TestScaleWeights:
    def test_scales_only_weights(self):
        rng = np.random.default_rng(12)
        g = build_local_edges(3, 3, Connectivity.FOUR)
        p = random_params(rng, g)
        p2 = potentials.scale_weights(p, 3.0)
        assert np.allclose(p2.w_unary, 3.0 * p.w_unary)
        assert np.allclose(p2.w_pair, 3.0 * p.w_pair)
        assert np.array_equal(p2.r_pair, p.r_pair)
        assert np.array_equal(p2.s, p.s)
