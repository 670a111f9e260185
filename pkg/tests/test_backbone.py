import numpy as np
import pytest
import torch
from PIL import Image

from gmrw.backbone import (
    Backbone,
    BackboneConfig,
    extract_features,
    positional_encoding_2d,
    upsample_for_stride,
)
from gmrw.core import DimensionError, ShapeError


@pytest.fixture
def backbone():
    return Backbone(BackboneConfig(feature_dim=64, base_channels=8)).eval()


def test_feature_grid_shape(backbone):
    grid = extract_features(np.random.rand(64, 64, 3), backbone, stride=4)
    assert tuple(grid.features.shape) == (16, 16, 64)
    assert grid.source_shape == (64, 64) and grid.effective_stride == 4


def test_256_frame_gives_64_by_64_grid():
    bb = Backbone(BackboneConfig(feature_dim=8, base_channels=4)).eval()
    with torch.no_grad():
        grid = extract_features(np.random.rand(256, 256, 3), bb, stride=4)
    assert grid.grid_shape == (64, 64)


def test_identical_frames_identical_features(backbone):
    frame = np.random.rand(32, 32, 3)
    with torch.no_grad():
        a = extract_features(frame, backbone).features
        b = extract_features(frame.copy(), backbone).features
    assert torch.equal(a, b)


def test_rejects_indivisible_frame(backbone):
    with pytest.raises(ShapeError):
        extract_features(np.random.rand(30, 32, 3), backbone, stride=4)


def test_config_invariants():
    with pytest.raises(ValueError):
        BackboneConfig(feature_dim=63)
    with pytest.raises(ValueError):
        BackboneConfig(downsample_factor=3)


def _reference_bilinear_upsample(img, k):
    """Pixel-center bilinear upsampling with edge clamping, computed separably in numpy."""
    h, w = img.shape[:2]

    def axis_weights(n):
        src = (np.arange(n * k) + 0.5) / k - 0.5
        src = np.clip(src, 0, n - 1)
        i0 = np.floor(src).astype(int)
        i1 = np.minimum(i0 + 1, n - 1)
        f = src - i0
        m = np.zeros((n * k, n))
        m[np.arange(n * k), i0] += 1 - f
        m[np.arange(n * k), i1] += f
        return m

    my, mx = axis_weights(h), axis_weights(w)
    return np.einsum("ay,bx,yxc->abc", my, mx, img)


@pytest.mark.parametrize("stride, size, grid", [(4, 64, 16), (2, 128, 32), (1, 256, 64)])
def test_upsample_for_stride_matches_reference(stride, size, grid):
    img = np.random.rand(64, 64, 3)
    x = torch.as_tensor(img).permute(2, 0, 1)[None]
    up = upsample_for_stride(x, stride)
    assert tuple(up.shape[-2:]) == (size, size)
    ref = _reference_bilinear_upsample(img, 4 // stride)
    np.testing.assert_allclose(up[0].permute(1, 2, 0).numpy(), ref, atol=1e-12)
    bb = Backbone(BackboneConfig(feature_dim=8, base_channels=4)).double().eval()
    with torch.no_grad():
        assert extract_features(img, bb, stride).grid_shape == (grid, grid)


def test_upsample_agrees_with_pil_in_the_interior():
    img = (np.random.rand(16, 16, 3) * 255).astype(np.uint8)
    ours = upsample_for_stride(torch.as_tensor(img / 255.0).permute(2, 0, 1)[None], 2)
    pil = np.asarray(Image.fromarray(img).resize((32, 32), Image.BILINEAR)) / 255.0
    diff = np.abs(ours[0].permute(1, 2, 0).numpy() - pil)[4:-4, 4:-4]
    assert diff.max() < 2.5 / 255


def test_unsupported_stride():
    with pytest.raises(DimensionError):
        upsample_for_stride(torch.zeros(1, 3, 8, 8), 3)


def test_positional_encoding_is_injective_on_grid():
    pe = positional_encoding_2d(64, 64, 64).reshape(64, -1).T  # (cells, d)
    dist = torch.cdist(pe.double(), pe.double(), p=float("inf"))
    dist.fill_diagonal_(1.0)
    assert dist.min() > 0


def test_finite_difference_perturbation_changes_output():
    bb = Backbone(BackboneConfig(feature_dim=8, base_channels=4)).double().eval()
    x = torch.rand(1, 3, 16, 16, dtype=torch.float64)
    base = bb(x)
    for name, p in bb.named_parameters():
        with torch.no_grad():
            flat = p.view(-1)
            flat[0] += 1e-4
            moved = bb(x)
            flat[0] -= 1e-4
        assert not torch.equal(moved, base), name
