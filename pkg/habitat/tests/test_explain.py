import numpy as np
import torch
import torch.nn.functional as F
from django.test import SimpleTestCase
from matplotlib import colormaps
from PIL import Image

from habitat.encoders import ClassifierHead, EncoderSpec, ExternalEncoderAdapter, HabitatClassifier, TinyHabitatEncoder
from habitat.exceptions import GradientUnavailableError, SaliencyError, UnknownClassError
from habitat.explain import SaliencyMap, gradcam, overlay, read_grid, save_overlays
from habitat.tests.utils import TempDirMixin

MASK = torch.tensor([
    [0.0, 0.0, 0.5, 1.0],
    [0.0, 0.5, 1.0, 0.5],
    [0.0, 0.0, 0.5, 0.0],
    [0.0, 0.0, 0.0, 0.0],
])


class MaskModel(torch.nn.Module):
    """Two-channel 4x4 feature map whose first channel is MASK; logit 0 reads channel 0 only."""

    class_order = ('bog', 'fen_marsh_swamp')
    grid_shape = None

    def __init__(self, detach=False, ignore_features=False):
        super().__init__()
        self.features = torch.nn.Identity()
        self.detach = detach
        self.ignore_features = ignore_features

    def default_layer_tag(self):
        return 'features'

    def forward(self, x):
        pooled = F.adaptive_avg_pool2d(x, 4)
        if self.detach:
            pooled = pooled.detach()
        mask = MASK.expand(x.shape[0], 1, 4, 4)
        feat = self.features(torch.cat([mask + 0 * pooled[:, :1], 0 * pooled[:, 1:2]], dim=1))
        if self.ignore_features:
            return torch.stack([x.mean(dim=(1, 2, 3)), -x.mean(dim=(1, 2, 3))], dim=1)
        return torch.stack([2 * feat[:, 0].mean(dim=(1, 2)), -feat[:, 1].mean(dim=(1, 2))], dim=1)


def tiny_classifier(classes=('a', 'b', 'c')):
    torch.manual_seed(0)
    encoder = TinyHabitatEncoder(EncoderSpec(input_size=64, patch_size=8, embed_dim=16))
    return HabitatClassifier(encoder, ClassifierHead(16, classes))


class GradcamTests(SimpleTestCase):
    def test_map_follows_the_target_evidence(self):
        saliency = gradcam(MaskModel(), torch.rand(3, 16, 16), 'bog')
        np.testing.assert_allclose(saliency.grid, MASK.numpy(), atol=1e-7)
        self.assertEqual(saliency.upsampled.shape, (16, 16))
        self.assertEqual((saliency.target_class, saliency.layer_tag), ('bog', 'features'))

    def test_class_without_positive_evidence_gives_zero_map(self):
        saliency = gradcam(MaskModel(), torch.rand(3, 16, 16), 'fen_marsh_swamp')
        self.assertFalse(np.isnan(saliency.grid).any())
        self.assertEqual(saliency.grid.max(), 0.0)
        self.assertEqual(saliency.upsampled.max(), 0.0)

    def test_unused_layer_gives_zero_map(self):
        saliency = gradcam(MaskModel(ignore_features=True), torch.rand(3, 16, 16), 0)
        self.assertEqual(saliency.grid.max(), 0.0)
        self.assertEqual(saliency.target_class, 'bog')

    def test_detached_layer_is_rejected(self):
        with self.assertRaises(GradientUnavailableError):
            gradcam(MaskModel(detach=True), torch.rand(3, 16, 16), 'bog')

    def test_inference_only_backbone_is_rejected(self):
        spec = EncoderSpec(kind='external', input_size=16, embed_dim=4, external_ref='x.y:z')
        encoder = ExternalEncoderAdapter(spec, torch.nn.Conv2d(3, 4, 16), supports_gradients=False, layer_tag='backbone')
        model = HabitatClassifier(encoder, ClassifierHead(4, ['bog', 'urban']))
        with self.assertRaises(GradientUnavailableError):
            gradcam(model, torch.rand(3, 16, 16), 'bog')

    def test_unknown_class_and_layer(self):
        with self.assertRaises(UnknownClassError):
            gradcam(MaskModel(), torch.rand(3, 16, 16), 'montane')
        with self.assertRaises(SaliencyError):
            gradcam(MaskModel(), torch.rand(3, 16, 16), 'bog', layer_tag='missing.layer')

    def test_transformer_grid_and_range(self):
        model = tiny_classifier()
        model.train()
        saliency = gradcam(model, torch.rand(3, 64, 64) * 2 - 1, 'b', sample_id='s1')
        self.assertEqual(saliency.grid.shape, (8, 8))
        self.assertEqual(saliency.upsampled.shape, (64, 64))
        self.assertEqual(saliency.layer_tag, 'encoder.blocks.1')
        self.assertGreaterEqual(saliency.upsampled.min(), 0.0)
        self.assertLessEqual(saliency.upsampled.max(), 1.0)
        self.assertTrue(model.training)

    def test_scaling_the_logits_leaves_the_map_unchanged(self):
        image = torch.rand(3, 64, 64) * 2 - 1
        model = tiny_classifier()
        before = gradcam(model, image, 'c')
        with torch.no_grad():
            model.head.linear.weight.mul_(4.0)
            model.head.linear.bias.mul_(4.0)
        after = gradcam(model, image, 'c')
        np.testing.assert_allclose(after.grid, before.grid, atol=1e-6)

    def test_rejects_batches(self):
        with self.assertRaises(SaliencyError):
            gradcam(MaskModel(), torch.rand(2, 3, 16, 16), 'bog')


class OverlayTests(TempDirMixin, SimpleTestCase):
    def saliency(self, heat, sample_id='s/1'):
        heat = np.asarray(heat, dtype=np.float64)
        return SaliencyMap(grid=heat, upsampled=heat, target_class='bog', layer_tag='features', sample_id=sample_id)

    def test_zero_map_or_alpha_keeps_the_image(self):
        image = np.random.default_rng(0).integers(0, 256, size=(4, 4, 3), dtype=np.uint8)
        np.testing.assert_array_equal(overlay(self.saliency(np.zeros((4, 4))), image), image)
        np.testing.assert_array_equal(overlay(self.saliency(np.ones((4, 4))), image, alpha=0.0), image)

    def test_full_heat_and_alpha_shows_the_colour_map(self):
        image = np.zeros((2, 2, 3), dtype=np.uint8)
        top = np.rint(np.asarray(colormaps['jet'](1.0)[:3]) * 255).astype(np.uint8)
        blended = overlay(self.saliency(np.ones((2, 2))), image, alpha=1.0)
        np.testing.assert_array_equal(blended[0, 0], top)

    def test_shape_mismatch(self):
        with self.assertRaises(SaliencyError):
            overlay(self.saliency(np.zeros((4, 4))), np.zeros((5, 5, 3), dtype=np.uint8))

    def test_save_overlays(self):
        heat = np.linspace(0, 1, 16).reshape(4, 4)
        image = np.full((4, 4, 3), 100, dtype=np.uint8)
        [png] = save_overlays([(self.saliency(heat), image)], self.tmp)
        self.assertEqual(png.name, 'gradcam_s_1_bog.png')
        with Image.open(png) as written:
            self.assertEqual(written.size, (4, 4))
        np.testing.assert_allclose(read_grid(png.with_suffix('.csv')), heat, rtol=1e-8)
