"""Tests for the direction-aware scan module."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import dehamba.tensor as T
from dehamba.dsm import DirectionScan, direction_perms, scan_expand, scan_merge
from dehamba.tensor import Tensor
from helpers import fd_check


def expand_seqs(arr):
    seqs, perms, dims = scan_expand(Tensor(arr))
    return [s.data for s in seqs], perms, dims


class TestScanExpand:
    def test_2x2_enumeration(self):
        p = np.array([[1.0, 2.0], [3.0, 4.0]]).reshape(1, 1, 2, 2)
        seqs, _, _ = expand_seqs(p)
        np.testing.assert_array_equal(seqs[0][0, :, 0], [1, 2, 3, 4])
        np.testing.assert_array_equal(seqs[1][0, :, 0], [4, 3, 2, 1])
        np.testing.assert_array_equal(seqs[2][0, :, 0], [1, 3, 2, 4])
        np.testing.assert_array_equal(seqs[3][0, :, 0], [4, 2, 3, 1])

    def test_single_row_degenerate(self):
        p = np.arange(5.0).reshape(1, 1, 1, 5)
        seqs, _, _ = expand_seqs(p)
        np.testing.assert_array_equal(seqs[0], seqs[2])
        np.testing.assert_array_equal(seqs[1], seqs[3])

    def test_constant_map(self):
        seqs, _, _ = expand_seqs(np.full((1, 2, 3, 4), 7.0))
        for s in seqs:
            np.testing.assert_array_equal(s, 7.0)

    @given(st.integers(1, 12), st.integers(1, 12))
    @settings(max_examples=40, deadline=None)
    def test_perms_are_bijections(self, h, w):
        for perm in direction_perms(h, w):
            assert np.array_equal(np.sort(perm), np.arange(h * w))

    def test_direction_conventions(self):
        h, w = 3, 4
        d0, d1, d2, d3 = direction_perms(h, w)
        np.testing.assert_array_equal(d0, np.arange(12))
        np.testing.assert_array_equal(d1, d0[::-1])
        # column-major: walk down column 0 first
        np.testing.assert_array_equal(d2[:3], [0, 4, 8])
        np.testing.assert_array_equal(d3, d2[::-1])


class TestScanMerge:
    @pytest.mark.parametrize("h", range(1, 17))
    def test_roundtrip_is_4x_bit_exact(self, h):
        for w in range(1, 17):
            rng = np.random.default_rng(h * 100 + w)
            p = rng.standard_normal((1, 2, h, w)).astype(np.float32)
            seqs, perms, dims = scan_expand(Tensor(p))
            out = scan_merge(seqs, perms, dims).data
            np.testing.assert_array_equal(out, 4.0 * p)

    def test_zeroing_three_directions(self):
        rng = np.random.default_rng(0)
        p = rng.standard_normal((1, 3, 4, 5)).astype(np.float32)
        seqs, perms, dims = scan_expand(Tensor(p))
        keep = 2
        seqs = [s if i == keep else Tensor(np.zeros_like(s.data)) for i, s in enumerate(seqs)]
        out = scan_merge(seqs, perms, dims).data
        np.testing.assert_array_equal(out, p)

    def test_scaled_directions_sum_oracle(self):
        rng = np.random.default_rng(1)
        p = rng.standard_normal((2, 3, 5, 4)).astype(np.float32)
        scales = [0.5, -1.0, 2.0, 3.25]
        seqs, perms, dims = scan_expand(Tensor(p))
        scaled = [T.mul(s, np.float32(c)) for s, c in zip(seqs, scales)]
        out = scan_merge(scaled, perms, dims).data
        # brute-force per-pixel oracle
        expect = np.zeros_like(p)
        flat = p.reshape(2, 3, 20)
        for perm, c in zip(perms, scales):
            seq = flat[:, :, perm]
            back = np.empty_like(seq)
            back[:, :, perm] = seq
            expect += c * back.reshape(p.shape)
        np.testing.assert_allclose(out, expect, atol=1e-6)


class TestDirectionScan:
    def test_single_direction_equals_plain_scan(self):
        rng = np.random.default_rng(2)
        ds = DirectionScan(np.random.default_rng(3), channels=4, state_dim=8, n_dirs=1)
        p = rng.standard_normal((1, 4, 1, 9)).astype(np.float32)
        out = ds(Tensor(p)).data
        seq = np.ascontiguousarray(p.reshape(1, 4, 9).transpose(0, 2, 1))
        ssm = ds.ssm[0]
        x = Tensor(seq)
        expect = ssm(x).data
        np.testing.assert_allclose(
            out, expect.transpose(0, 2, 1).reshape(p.shape), atol=1e-6
        )

    def test_identity_params_give_4x(self):
        # zero the C projection and dt weights, force D=1: scan output == input
        rng = np.random.default_rng(4)
        ds = DirectionScan(np.random.default_rng(5), channels=3, state_dim=4, n_dirs=4)
        for ssm in ds.ssm:
            ssm.C_proj.weight.data[:] = 0.0
            ssm.C_proj.bias.data[:] = 0.0
            ssm.skip_gain.data[:] = 1.0
        p = rng.standard_normal((2, 3, 4, 6)).astype(np.float32)
        out = ds(Tensor(p)).data
        np.testing.assert_allclose(out, 4.0 * p, atol=1e-5)

    def test_output_shape_matches_input(self):
        rng = np.random.default_rng(6)
        for n_dirs in (1, 2, 4):
            ds = DirectionScan(np.random.default_rng(7), channels=2, state_dim=4, n_dirs=n_dirs)
            p = rng.standard_normal((1, 2, 3, 5)).astype(np.float32)
            assert ds(Tensor(p)).shape == p.shape

    def test_rotation_equivariance_with_paired_params(self):
        # sharing parameters between each direction and its reverse makes the
        # 4-path module equivariant to 180 degree rotation
        rng = np.random.default_rng(8)
        ds = DirectionScan(np.random.default_rng(9), channels=3, state_dim=4, n_dirs=4)
        share = lambda a, b: b.load_state({k: v for k, v in a.state().items()})
        share(ds.ssm[0], ds.ssm[1])
        share(ds.ssm[2], ds.ssm[3])
        p = rng.standard_normal((1, 3, 6, 5)).astype(np.float32)
        rot = np.ascontiguousarray(p[:, :, ::-1, ::-1])
        out = ds(Tensor(p)).data
        out_rot = ds(Tensor(rot)).data
        np.testing.assert_allclose(out_rot, out[:, :, ::-1, ::-1], atol=1e-5)

    def test_gradients_through_expand_scan_merge(self):
        rng = np.random.default_rng(10)
        with T.precision("float64"):
            ds = DirectionScan(np.random.default_rng(11), channels=2, state_dim=3, n_dirs=4)
            x = Tensor(rng.standard_normal((1, 2, 3, 4)), requires_grad=True)

            def f():
                y = ds(x)
                return T.tsum(T.mul(y, y))

            params = list(ds.parameters().values()) + [x]
            assert fd_check(f, params, rng, eps=1e-5, probes=3) < 1e-3

    def test_invalid_n_dirs_rejected(self):
        with pytest.raises(ValueError):
            DirectionScan(np.random.default_rng(0), channels=2, n_dirs=3)
