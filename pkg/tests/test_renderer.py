"""Ray geometry, stratified sampling, and volume compositing."""

import math

import numpy as np
import pytest
import torch

from plane4d.decoder import EncoderConfig, SceneDecoder
from plane4d.field import FeaturePlaneSet, PlaneConfig
from plane4d.renderer import (
    Camera,
    Ray,
    SamplePrediction,
    composite,
    make_ray,
    make_ray_grid,
    metric_to_s,
    pixel_to_ndc,
    render_frame,
    render_ray,
    render_rays,
    s_to_metric,
    stratified_samples,
    view_direction,
)

from oracles import composite_ref, ndc_pixel_ref, quadrature_ref


def _prediction(s, delta, sigma, color, dtype=torch.float64):
    as_t = lambda a: torch.as_tensor(np.asarray(a), dtype=dtype)
    return SamplePrediction(
        s=as_t(s), delta=as_t(delta), sigma=as_t(sigma), color=as_t(color)
    )


def _random_ray(rng, k=8, sigma_max=1.5):
    """A random but well-conditioned set of sample intervals tiling from 0."""
    delta = rng.uniform(0.05, 0.2, k)
    s = np.cumsum(delta) - delta / 2.0
    sigma = rng.uniform(0.0, sigma_max, k)
    color = rng.uniform(0.0, 1.0, (k, 3))
    return s, delta, sigma, color


class TestNdcWarp:
    def test_principal_point_maps_to_center(self, camera_small):
        x01, y01 = pixel_to_ndc(camera_small, camera_small.cy, camera_small.cx)
        assert float(x01) == 0.5
        assert float(y01) == 0.5

    def test_matches_projective_oracle(self):
        """The depth-free shortcut agrees with the full 3D projective path.

        The oracle lifts each pixel to a camera-space point at several depths,
        applies the projective warp, and maps [-1, 1] to [0, 1]; x01/y01 must
        come out depth-independent and equal to the shortcut, and the warped
        depth must equal ``metric_to_s``.
        """
        camera = Camera(
            width=64, height=64, fx=100.0, fy=100.0, cx=31.5, cy=31.5,
            near=1.0, far=8.0,
        )
        rng = np.random.default_rng(11)
        pixels = [(0, 0), (0, 63), (63, 0), (63, 63), (31, 31)]
        pixels += [tuple(rng.integers(0, 64, 2)) for _ in range(20)]
        for row, col in pixels:
            x01, y01 = pixel_to_ndc(camera, row, col)
            for z in (camera.near, 2.0, 4.0, camera.far, 100.0):
                ox, oy, oz = ndc_pixel_ref(camera, row, col, z)
                assert abs(float(x01) - ox) < 1e-9
                assert abs(float(y01) - oy) < 1e-9
                assert abs(float(metric_to_s(camera, z)) - oz) < 1e-9

    def test_orientation(self, camera_small):
        # x grows to the right, y grows upward (i.e. with decreasing row).
        x_left, _ = pixel_to_ndc(camera_small, 3, 1)
        x_right, _ = pixel_to_ndc(camera_small, 3, 6)
        assert x_left < x_right
        _, y_top = pixel_to_ndc(camera_small, 1, 3)
        _, y_bottom = pixel_to_ndc(camera_small, 6, 3)
        assert y_top > y_bottom

    def test_s_of_near_plane_is_zero(self, camera_small):
        assert float(metric_to_s(camera_small, camera_small.near)) == 0.0

    def test_s_approaches_one_at_infinity(self, camera_small):
        s = float(metric_to_s(camera_small, 1e9 * camera_small.near))
        assert abs(s - 1.0) < 1e-6

    def test_s_monotone_in_depth(self, camera_small):
        z = np.geomspace(camera_small.near, 1e6, 200)
        s = metric_to_s(camera_small, z)
        assert np.all(np.diff(s) > 0)

    def test_depth_roundtrip(self, camera_small):
        z = np.geomspace(camera_small.near, 1e6, 50)
        back = s_to_metric(camera_small, metric_to_s(camera_small, z))
        assert np.max(np.abs(back / z - 1.0)) < 1e-9

    def test_s_to_metric_guarded_at_one(self, camera_small):
        z = float(s_to_metric(camera_small, 1.0))
        assert math.isfinite(z) and z > 1e10


class TestViewDirection:
    def test_unit_norm(self, camera_small):
        rows, cols = np.meshgrid(np.arange(8), np.arange(8), indexing="ij")
        d = view_direction(camera_small, rows, cols)
        assert np.abs(np.linalg.norm(d, axis=-1) - 1.0).max() < 1e-12

    def test_principal_axis(self, camera_small):
        d = view_direction(camera_small, camera_small.cy, camera_small.cx)
        assert np.array_equal(d, [0.0, 0.0, -1.0])

    def test_signs(self, camera_small):
        d = view_direction(camera_small, 6, 6)  # below/right of center
        assert d[0] > 0 and d[1] < 0 and d[2] < 0


class TestMakeRay:
    def test_unit_span_and_axis_alignment(self, camera_small):
        ray = make_ray(camera_small, (2, 5), 0.25)
        assert ray.s_near == 0.0
        assert ray.s_far == 1.0
        assert np.array_equal(ray.direction, [0.0, 0.0, 1.0])
        assert ray.origin[2] == 0.0
        x01, y01 = pixel_to_ndc(camera_small, 2, 5)
        assert ray.origin[0] == float(x01) and ray.origin[1] == float(y01)
        assert ray.pixel == (2, 5)
        assert ray.t == 0.25

    def test_rejects_out_of_bounds_pixel(self, camera_small):
        with pytest.raises(ValueError):
            make_ray(camera_small, (8, 0), 0.0)
        with pytest.raises(ValueError):
            make_ray(camera_small, (0, -1), 0.0)

    def test_rejects_bad_time(self, camera_small):
        with pytest.raises(ValueError):
            make_ray(camera_small, (0, 0), 1.5)

    def test_grid_is_row_major(self, camera_small):
        origins, dirs = make_ray_grid(camera_small)
        assert origins.shape == (64, 3) and dirs.shape == (64, 3)
        for row, col in [(0, 0), (0, 7), (3, 4), (7, 7)]:
            ray = make_ray(camera_small, (row, col), 0.0)
            idx = row * camera_small.width + col
            assert np.array_equal(origins[idx], ray.origin)
            assert np.array_equal(dirs[idx], ray.view_dir)


class TestStratifiedSamples:
    def test_unit_ray_centers(self, camera_small):
        ray = make_ray(camera_small, (0, 0), 0.0)
        s, delta = stratified_samples(ray, 4)
        assert np.array_equal(s, [0.125, 0.375, 0.625, 0.875])
        assert np.array_equal(delta, [0.25, 0.25, 0.25, 0.25])

    def test_bins_tile_the_span(self):
        ray = Ray(
            origin=np.zeros(3), direction=np.array([0.0, 0.0, 1.0]),
            view_dir=np.array([0.0, 0.0, -1.0]), s_near=0.2, s_far=0.6,
            pixel=(0, 0), t=0.0,
        )
        s, delta = stratified_samples(ray, 7)
        assert abs(delta.sum() - 0.4) < 1e-15
        assert np.all((s >= 0.2) & (s <= 0.6))

    def test_jitter_stays_in_bins_and_is_seeded(self, camera_small):
        ray = make_ray(camera_small, (1, 1), 0.0)
        s1, delta = stratified_samples(ray, 16, rng=np.random.default_rng(3), jitter=True)
        edges = np.arange(16) / 16.0
        assert np.all(s1 >= edges) and np.all(s1 <= edges + 1.0 / 16.0)
        s2, _ = stratified_samples(ray, 16, rng=np.random.default_rng(3), jitter=True)
        assert np.array_equal(s1, s2)
        s3, _ = stratified_samples(ray, 16, rng=np.random.default_rng(4), jitter=True)
        assert not np.array_equal(s1, s3)

    def test_errors(self, camera_small):
        ray = make_ray(camera_small, (0, 0), 0.0)
        with pytest.raises(ValueError):
            stratified_samples(ray, 0)
        with pytest.raises(ValueError):
            stratified_samples(ray, 4, jitter=True)


class TestComposite:
    def test_two_half_opaque_samples(self):
        # sigma * delta = ln 2 makes each sample pass exactly half the light.
        ln2 = math.log(2.0)
        out = composite(_prediction(
            [0.25, 0.75], [1.0, 1.0], [ln2, ln2],
            [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]],
        ))
        assert torch.allclose(out.transmittance, torch.tensor([1.0, 0.5], dtype=torch.float64), atol=1e-15)
        assert torch.allclose(out.weights, torch.tensor([0.5, 0.25], dtype=torch.float64), atol=1e-15)
        assert torch.allclose(out.color, torch.tensor([0.5, 0.25, 0.0], dtype=torch.float64), atol=1e-15)
        assert abs(out.depth.item() - (0.5 * 0.25 + 0.25 * 0.75)) < 1e-15
        assert abs(out.opacity.item() - 0.75) < 1e-15

    def test_opaque_sample_blocks_everything_behind(self):
        out = composite(_prediction(
            [0.3, 0.9], [1.0, 1.0], [1e4, 5.0],
            [[0.2, 0.4, 0.6], [1.0, 1.0, 1.0]],
        ))
        assert torch.equal(out.color, torch.tensor([0.2, 0.4, 0.6], dtype=torch.float64))
        assert out.depth.item() == 0.3
        assert out.opacity.item() == 1.0

    def test_zero_density_renders_nothing(self):
        out = composite(_prediction(
            [0.25, 0.75], [0.5, 0.5], [0.0, 0.0], np.ones((2, 3)),
        ))
        assert torch.equal(out.color, torch.zeros(3, dtype=torch.float64))
        assert out.depth.item() == 0.0 and out.opacity.item() == 0.0
        assert torch.equal(out.transmittance, torch.ones(2, dtype=torch.float64))

    def test_matches_sequential_oracle_frozen(self):
        s, delta, sigma, color = _random_ray(np.random.default_rng(5))
        out = composite(_prediction(s, delta, sigma, color))
        ref_color, ref_depth, ref_opacity, ref_w, ref_t = composite_ref(s, delta, sigma, color)
        assert np.abs(out.color.numpy() - ref_color).max() < 1e-12
        assert abs(out.depth.item() - ref_depth) < 1e-12
        assert abs(out.opacity.item() - ref_opacity) < 1e-12
        assert np.abs(out.weights.numpy() - ref_w).max() < 1e-12
        assert np.abs(out.transmittance.numpy() - ref_t).max() < 1e-12
        # Frozen oracle outputs, pinned against silent drift in either side.
        assert np.abs(out.color.numpy() - [0.162685144304, 0.216493052273, 0.289035542976]).max() < 1e-9
        assert abs(out.depth.item() - 0.268172286382) < 1e-9
        assert abs(out.opacity.item() - 0.569600025191) < 1e-9

    def test_matches_sequential_oracle_many(self):
        rng = np.random.default_rng(6)
        for _ in range(25):
            k = int(rng.integers(1, 12))
            s, delta, sigma, color = _random_ray(rng, k=k, sigma_max=4.0)
            out = composite(_prediction(s, delta, sigma, color))
            ref_color, ref_depth, ref_opacity, _, _ = composite_ref(s, delta, sigma, color)
            assert np.abs(out.color.numpy() - ref_color).max() < 1e-12
            assert abs(out.depth.item() - ref_depth) < 1e-12
            assert abs(out.opacity.item() - ref_opacity) < 1e-12

    def test_matches_dense_quadrature(self):
        """Discrete compositing equals 10k-point integration of the continuous
        absorption-emission equations with piecewise-constant fields."""
        rng = np.random.default_rng(7)
        for _ in range(5):
            s, delta, sigma, color = _random_ray(rng)
            out = composite(_prediction(s, delta, sigma, color))
            q_color, q_depth, q_opacity = quadrature_ref(s, delta, sigma, color)
            assert np.abs(out.color.numpy() - q_color).max() < 1e-9
            assert abs(out.depth.item() - q_depth) < 1e-9
            assert abs(out.opacity.item() - q_opacity) < 1e-9

    def test_batched_matches_per_ray(self):
        rng = np.random.default_rng(8)
        rays = [_random_ray(rng) for _ in range(5)]
        batch = _prediction(
            np.stack([r[0] for r in rays]), np.stack([r[1] for r in rays]),
            np.stack([r[2] for r in rays]), np.stack([r[3] for r in rays]),
        )
        out = composite(batch)
        for i, (s, delta, sigma, color) in enumerate(rays):
            ref_color, ref_depth, ref_opacity, _, _ = composite_ref(s, delta, sigma, color)
            assert np.abs(out.color[i].numpy() - ref_color).max() < 1e-12
            assert abs(out.depth[i].item() - ref_depth) < 1e-12
            assert abs(out.opacity[i].item() - ref_opacity) < 1e-12

    def test_opacity_is_one_minus_final_transmittance(self):
        rng = np.random.default_rng(9)
        for _ in range(10):
            s, delta, sigma, color = _random_ray(rng, k=10, sigma_max=8.0)
            out = composite(_prediction(s, delta, sigma, color))
            t_final = math.exp(-float(np.sum(sigma * delta)))
            assert abs(out.opacity.item() - (1.0 - t_final)) < 1e-14

    def test_transmittance_starts_at_one_and_decreases(self):
        rng = np.random.default_rng(10)
        s, delta, sigma, color = _random_ray(rng, k=12, sigma_max=3.0)
        out = composite(_prediction(s, delta, sigma, color))
        trans = out.transmittance.numpy()
        assert trans[0] == 1.0
        assert np.all(np.diff(trans) <= 0)
        w = out.weights.numpy()
        assert np.all(w >= 0) and w.sum() <= 1.0 + 1e-12

    def test_zero_density_sample_insertion_is_exact(self):
        """A sigma = 0 sample contributes exact 0.0 terms everywhere.

        Depth, opacity, and the surviving weights/transmittance entries are
        bitwise unchanged; the color sum may move by one rounding step because
        the reduction picks up an extra (zero) addend.
        """
        s, delta, sigma, color = _random_ray(np.random.default_rng(12))
        out = composite(_prediction(s, delta, sigma, color))
        j = 4
        out2 = composite(_prediction(
            np.insert(s, j, s[j - 1]),
            np.insert(delta, j, 0.07),
            np.insert(sigma, j, 0.0),
            np.insert(color, j, [0.3, 0.9, 0.1], axis=0),
        ))
        assert out2.weights[j].item() == 0.0
        keep = [i for i in range(9) if i != j]
        assert torch.equal(out2.weights[keep], out.weights)
        assert torch.equal(out2.transmittance[keep], out.transmittance)
        assert out2.depth.item() == out.depth.item()
        assert out2.opacity.item() == out.opacity.item()
        assert (out2.color - out.color).abs().max().item() < 1e-15

    def test_interval_split_invariance(self):
        # Halving an interval (same sigma/color/position on both halves)
        # must not change what the ray integrates to.
        s, delta, sigma, color = _random_ray(np.random.default_rng(13))
        out = composite(_prediction(s, delta, sigma, color))
        k = 3
        d2 = delta.copy()
        d2[k] /= 2.0
        out2 = composite(_prediction(
            np.insert(s, k, s[k]),
            np.insert(d2, k, delta[k] / 2.0),
            np.insert(sigma, k, sigma[k]),
            np.insert(color, k, color[k], axis=0),
        ))
        assert (out2.color - out.color).abs().max().item() < 1e-12
        assert abs(out2.depth.item() - out.depth.item()) < 1e-12
        assert abs(out2.opacity.item() - out.opacity.item()) < 1e-12

    def test_validation(self):
        good = _random_ray(np.random.default_rng(14))
        s, delta, sigma, color = good
        with pytest.raises(ValueError, match="non-decreasing"):
            composite(_prediction(s[::-1].copy(), delta, sigma, color))
        with pytest.raises(ValueError, match="positive"):
            bad = delta.copy()
            bad[2] = 0.0
            composite(_prediction(s, bad, sigma, color))
        with pytest.raises(ValueError, match="non-negative"):
            bad = sigma.copy()
            bad[0] = -1e-3
            composite(_prediction(s, delta, bad, color))
        with pytest.raises(ValueError, match="color"):
            composite(_prediction(s, delta, sigma, color[:, :2]))
        with pytest.raises(ValueError, match="share a shape"):
            composite(_prediction(s, delta[:-1], sigma, color))
        with pytest.raises(ValueError, match="at least one sample"):
            composite(_prediction(
                np.empty(0), np.empty(0), np.empty(0), np.empty((0, 3))
            ))


@pytest.fixture(scope="module")
def tiny_model():
    planes = FeaturePlaneSet(PlaneConfig(scales=(4, 8), feature_width=4), seed=3)
    decoder = SceneDecoder(
        fused_width=8, encoder=EncoderConfig(2, 2), hidden_width=16,
        hidden_depth=2, geo_feature_width=7, seed=4,
    )
    return planes, decoder


class TestRenderField:
    def test_outputs_are_physical(self, tiny_model, camera_small):
        planes, decoder = tiny_model
        color, depth, opacity = render_frame(planes, decoder, camera_small, 0.5, 16)
        assert color.shape == (8, 8, 3) and depth.shape == (8, 8) and opacity.shape == (8, 8)
        assert np.isfinite(color).all() and np.isfinite(depth).all()
        assert (color >= 0).all() and (color <= 1).all()
        assert (opacity >= 0).all() and (opacity <= 1).all()
        assert (depth >= 0).all() and (depth <= 1).all()

    def test_single_ray_matches_batch_and_frame(self, tiny_model, camera_small):
        planes, decoder = tiny_model
        frame_color, frame_depth, _ = render_frame(planes, decoder, camera_small, 0.5, 16)
        pixels = [(0, 0), (3, 5), (7, 7)]
        with torch.no_grad():
            rays = [make_ray(camera_small, p, 0.5) for p in pixels]
            batch = render_rays(
                planes, decoder,
                torch.as_tensor(np.stack([r.origin for r in rays]), dtype=torch.float32),
                torch.as_tensor(np.stack([r.view_dir for r in rays]), dtype=torch.float32),
                torch.tensor([r.t for r in rays], dtype=torch.float32),
                16, 1.0,
            )
            for i, (pixel, ray) in enumerate(zip(pixels, rays)):
                single = render_ray(planes, decoder, ray, 16)
                assert torch.equal(single.color, batch.color[i])
                assert torch.equal(single.depth, batch.depth[i])
                assert np.array_equal(single.color.numpy(), frame_color[pixel])
                assert single.depth.item() == frame_depth[pixel]

    def test_frame_chunking_is_invisible(self, tiny_model, camera_small):
        planes, decoder = tiny_model
        a = render_frame(planes, decoder, camera_small, 0.25, 16)
        b = render_frame(planes, decoder, camera_small, 0.25, 16, chunk=7)
        for x, y in zip(a, b):
            assert np.array_equal(x, y)

    def test_frame_is_deterministic(self, tiny_model, camera_small):
        planes, decoder = tiny_model
        a = render_frame(planes, decoder, camera_small, 0.75, 16)
        b = render_frame(planes, decoder, camera_small, 0.75, 16)
        for x, y in zip(a, b):
            assert np.array_equal(x, y)

    def test_jittered_rays_are_seeded(self, tiny_model, camera_small):
        planes, decoder = tiny_model
        ray = make_ray(camera_small, (2, 2), 0.5)
        with torch.no_grad():
            a = render_ray(planes, decoder, ray, 16, rng=np.random.default_rng(0), jitter=True)
            b = render_ray(planes, decoder, ray, 16, rng=np.random.default_rng(0), jitter=True)
            c = render_ray(planes, decoder, ray, 16, rng=np.random.default_rng(1), jitter=True)
            d = render_ray(planes, decoder, ray, 16)
        assert torch.equal(a.color, b.color)
        assert not torch.equal(a.color, c.color)
        assert not torch.equal(a.color, d.color)

    def test_frame_rejects_bad_time(self, tiny_model, camera_small):
        planes, decoder = tiny_model
        with pytest.raises(ValueError):
            render_frame(planes, decoder, camera_small, 1.5, 8)

    def test_render_rays_validates_shapes(self, tiny_model):
        planes, decoder = tiny_model
        origins = torch.zeros(4, 3)
        dirs = torch.zeros(4, 3)
        times = torch.zeros(4)
        with pytest.raises(ValueError):
            render_rays(planes, decoder, torch.zeros(4, 2), dirs, times, 8, 1.0)
        with pytest.raises(ValueError):
            render_rays(planes, decoder, origins, torch.zeros(3, 3), times, 8, 1.0)
        with pytest.raises(ValueError):
            render_rays(planes, decoder, origins, dirs, torch.zeros(5), 8, 1.0)


def test_camera_validation():
    with pytest.raises(ValueError):
        Camera(width=0, height=8, fx=10.0, fy=10.0, cx=3.5, cy=3.5, near=1.0, far=8.0)
    with pytest.raises(ValueError):
        Camera(width=8, height=8, fx=-1.0, fy=10.0, cx=3.5, cy=3.5, near=1.0, far=8.0)
    with pytest.raises(ValueError):
        Camera(width=8, height=8, fx=10.0, fy=10.0, cx=3.5, cy=3.5, near=8.0, far=1.0)
