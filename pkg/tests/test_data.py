import time

import pytest
import torch

from videdit.data import CONTROL_KINDS, VIDEO_KINDS, extract_controls, synthesize_video


class TestSynthesizeVideo:
    @pytest.mark.parametrize("kind", VIDEO_KINDS)
    def test_shapes_and_dtypes(self, kind):
        video, masks = synthesize_video(kind, 5, 8, 8, 4, seed=0)
        assert video.shape == (5, 4, 8, 8)
        assert masks.shape == (5, 8, 8)
        assert video.dtype == torch.float64
        assert torch.isin(masks, torch.tensor([0.0, 1.0], dtype=torch.float64)).all()

    @pytest.mark.parametrize("kind", VIDEO_KINDS)
    def test_deterministic(self, kind):
        a = synthesize_video(kind, 4, seed=7)
        b = synthesize_video(kind, 4, seed=7)
        assert torch.equal(a[0], b[0])
        assert torch.equal(a[1], b[1])

    def test_seed_changes_content(self):
        a, _ = synthesize_video("moving_square", 4, seed=0)
        b, _ = synthesize_video("moving_square", 4, seed=1)
        assert not torch.equal(a, b)

    def test_square_moves_one_pixel_per_frame(self):
        video, masks = synthesize_video("moving_square", 3, 8, 8, 4, seed=0)
        for i in range(3):
            cols = torch.nonzero(masks[i] == 0, as_tuple=True)[1]
            assert int(cols.min()) == i

    def test_square_wraps_at_right_edge(self):
        # 8-wide frame, 3-wide square: positions repeat with period 6
        _, masks = synthesize_video("moving_square", 8, 8, 8, 4, seed=0)
        assert torch.equal(masks[6], masks[0])
        assert torch.equal(masks[7], masks[1])

    def test_mask_marks_painted_region(self):
        video, masks = synthesize_video("moving_square", 2, 8, 8, 2, seed=0)
        bg = video[0][:, masks[0] == 1]
        # background is spatially constant per channel
        assert torch.equal(bg, bg[:, :1].expand_as(bg))
        fg = video[0][:, masks[0] == 0]
        assert not torch.allclose(fg[:, 0], bg[:, 0])

    def test_two_object_masks_two_regions(self):
        _, masks = synthesize_video("two_object", 1, 8, 8, 4, seed=0)
        zero_rows = torch.nonzero(masks[0] == 0, as_tuple=True)[0]
        assert int(zero_rows.min()) == 0
        assert int(zero_rows.max()) == 7

    def test_gradient_drift_brightens_over_time(self):
        video, masks = synthesize_video("gradient_drift", 4, seed=0)
        means = video.mean(dim=(1, 2, 3))
        assert (means[1:] > means[:-1]).all()
        assert (masks == 1).all()

    def test_rejects_unknown_kind(self):
        with pytest.raises(ValueError):
            synthesize_video("bouncing_ball", 4)

    def test_rejects_bad_dimensions(self):
        with pytest.raises(ValueError):
            synthesize_video("moving_square", 0)
        with pytest.raises(ValueError):
            synthesize_video("moving_square", 4, H=2)

    def test_long_clip_fast(self):
        start = time.monotonic()
        video, _ = synthesize_video("moving_square", 140, 8, 8, 4, seed=0)
        controls = extract_controls(video, "edge_like")
        elapsed = time.monotonic() - start
        assert video.shape[0] == 140
        assert controls.shape == (140, 1, 8, 8)
        assert elapsed < 1.0


class TestExtractControls:
    @pytest.mark.parametrize("kind", CONTROL_KINDS)
    def test_shape(self, kind):
        video, _ = synthesize_video("moving_square", 3, 8, 8, 4, seed=0)
        ctrl = extract_controls(video, kind)
        assert ctrl.shape == (3, 1, 8, 8)
        assert ctrl.dtype == torch.float64

    def test_edge_like_zero_on_constant_frame(self):
        flat = torch.full((2, 4, 8, 8), 0.7, dtype=torch.float64)
        assert (extract_controls(flat, "edge_like") == 0).all()

    def test_edge_like_binary_and_on_boundaries(self):
        video, masks = synthesize_video("moving_square", 2, 8, 8, 4, seed=0)
        ctrl = extract_controls(video, "edge_like")
        assert torch.isin(ctrl, torch.tensor([0.0, 1.0], dtype=torch.float64)).all()
        assert float(ctrl.sum()) > 0
        # edges only occur next to the painted square
        interior_bg = masks[0] == 1
        interior_bg[:, :-1] &= masks[0][:, 1:] == 1
        interior_bg[:-1, :] &= masks[0][1:, :] == 1
        assert (ctrl[0, 0][interior_bg] == 0).all()

    def test_depth_like_is_box_blur(self):
        video, _ = synthesize_video("moving_square", 1, 8, 8, 4, seed=0)
        ctrl = extract_controls(video, "depth_like")
        x = video.mean(dim=1)[0]
        padded = torch.nn.functional.pad(
            x[None, None], (1, 1, 1, 1), mode="replicate"
        )[0, 0]
        i, j = 3, 4
        manual = padded[i : i + 3, j : j + 3].mean()
        assert float(ctrl[0, 0, i, j]) == pytest.approx(float(manual), abs=1e-12)

    def test_pose_like_marks_square_centroid(self):
        video, masks = synthesize_video("moving_square", 3, 8, 8, 4, seed=0)
        ctrl = extract_controls(video, "pose_like")
        for i in range(3):
            assert float(ctrl[i].sum()) == 1.0
            r, c = [int(v) for v in torch.nonzero(ctrl[i, 0])[0]]
            rows, cols = torch.nonzero(masks[i] == 0, as_tuple=True)
            assert r == int(torch.round(rows.to(torch.float64).mean()))
            assert c == int(torch.round(cols.to(torch.float64).mean()))

    def test_pose_like_blank_without_objects(self):
        flat = torch.full((2, 4, 8, 8), 0.3, dtype=torch.float64)
        assert (extract_controls(flat, "pose_like") == 0).all()

    def test_rejects_unknown_kind(self):
        video, _ = synthesize_video("moving_square", 2)
        with pytest.raises(ValueError):
            extract_controls(video, "flow_like")

    def test_rejects_wrong_rank(self):
        with pytest.raises(ValueError):
            extract_controls(torch.zeros(4, 8, 8), "edge_like")
