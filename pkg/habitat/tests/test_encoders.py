import numpy as np
import torch
from django.test import SimpleTestCase

from habitat.encoders import (
    ClassifierHead, EncoderKind, EncoderSpec, ExternalEncoderAdapter, HabitatClassifier, ProjectionHead, build_encoder,
    classify, encode, normalize_projection, project,
)
from habitat.exceptions import (
    DegenerateProjectionError, EncoderContractError, UninitializedEncoderError,
)

TINY = EncoderSpec(input_size=16, patch_size=4, embed_dim=8, depth=1)


def flat_backbone(spec):
    """Importable factory used by the external-encoder tests."""
    return torch.nn.Sequential(torch.nn.AdaptiveAvgPool2d(1), torch.nn.Flatten(), torch.nn.Linear(3, spec.embed_dim))


class ReferenceEncoderTests(SimpleTestCase):
    def setUp(self):
        torch.manual_seed(0)
        self.encoder = build_encoder(EncoderSpec(input_size=64, patch_size=8, embed_dim=32))

    def test_embedding_shape_and_finiteness(self):
        out = encode(torch.randn(3, 64, 64), self.encoder)
        self.assertEqual(tuple(out.shape), (32,))
        self.assertTrue(bool(torch.isfinite(out).all()))

    def test_identical_images_identical_embeddings(self):
        image = torch.randn(3, 64, 64)
        torch.testing.assert_close(encode(image, self.encoder), encode(image.clone(), self.encoder), rtol=0, atol=0)

    def test_batch_matches_single_encodes(self):
        images = torch.randn(4, 3, 64, 64)
        batched = encode(images, self.encoder)
        looped = torch.stack([encode(img, self.encoder) for img in images])
        torch.testing.assert_close(batched, looped, rtol=0, atol=1e-5)

    def test_wrong_input_size(self):
        with self.assertRaises(EncoderContractError):
            encode(torch.randn(3, 32, 32), self.encoder)

    def test_encode_restores_training_mode(self):
        self.encoder.train()
        encode(torch.randn(3, 64, 64), self.encoder)
        self.assertTrue(self.encoder.training)

    def test_grid_and_default_layer(self):
        self.assertEqual(self.encoder.grid_shape, (8, 8))
        self.assertEqual(self.encoder.default_layer_tag(), 'blocks.1')

    def test_spec_rejects_uneven_patches(self):
        with self.assertRaises(ValueError):
            EncoderSpec(input_size=30, patch_size=8)


class ExternalEncoderTests(SimpleTestCase):
    def test_factory_is_resolved_and_wrapped(self):
        spec = EncoderSpec(kind=EncoderKind.EXTERNAL, input_size=16, embed_dim=5,
                           external_ref='habitat.tests.test_encoders:flat_backbone')
        encoder = build_encoder(spec)
        self.assertIsInstance(encoder, ExternalEncoderAdapter)
        self.assertEqual(tuple(encode(torch.randn(2, 3, 16, 16), encoder).shape), (2, 5))

    def test_declared_dimension_is_enforced(self):
        spec = EncoderSpec(kind=EncoderKind.EXTERNAL, input_size=16, embed_dim=6, external_ref='x:y')
        adapter = ExternalEncoderAdapter(spec, flat_backbone(EncoderSpec(input_size=16, embed_dim=5, patch_size=4)))
        with self.assertRaises(EncoderContractError):
            adapter(torch.randn(1, 3, 16, 16))

    def test_unloaded_backbone(self):
        spec = EncoderSpec(kind=EncoderKind.EXTERNAL, input_size=16, embed_dim=6, external_ref='x:y')
        with self.assertRaises(UninitializedEncoderError):
            ExternalEncoderAdapter(spec)(torch.randn(1, 3, 16, 16))

    def test_unresolvable_reference(self):
        spec = EncoderSpec(kind=EncoderKind.EXTERNAL, external_ref='habitat.no_such_module:factory')
        with self.assertRaises(EncoderContractError):
            build_encoder(spec)


class HeadTests(SimpleTestCase):
    def test_zero_head_gives_uniform_probabilities(self):
        head = ClassifierHead(4, ['a', 'b', 'c'])
        torch.nn.init.zeros_(head.linear.weight)
        torch.nn.init.zeros_(head.linear.bias)
        scores = classify(np.ones(4), head)
        np.testing.assert_allclose(scores.probabilities, np.full(3, 1 / 3), atol=1e-12)

    def test_two_class_softmax(self):
        head = ClassifierHead(1, ['a', 'b'])
        with torch.no_grad():
            head.linear.weight.copy_(torch.tensor([[2.0], [0.0]]))
            head.linear.bias.zero_()
        probabilities = classify(np.array([1.0]), head).probabilities
        np.testing.assert_allclose(probabilities, [0.8808, 0.1192], atol=1e-4)

    def test_score_shift_leaves_probabilities(self):
        head = ClassifierHead(4, ['a', 'b', 'c'])
        vector = np.random.default_rng(0).normal(size=4)
        before = classify(vector, head).probabilities
        with torch.no_grad():
            head.linear.bias.add_(3.0)
        np.testing.assert_allclose(classify(vector, head).probabilities, before, atol=1e-6)

    def test_head_dimension_mismatch(self):
        with self.assertRaises(EncoderContractError):
            classify(np.ones(5), ClassifierHead(4, ['a', 'b']))

    def test_projection_is_unit_length(self):
        head = ProjectionHead(8, out_dim=16)
        for seed in range(5):
            vector = np.random.default_rng(seed).normal(size=8)
            self.assertAlmostEqual(float(project(vector, head).norm()), 1.0, places=6)

    def test_projection_scale_invariance(self):
        vectors = torch.randn(3, 6, dtype=torch.float64)
        torch.testing.assert_close(normalize_projection(vectors * 7.5), normalize_projection(vectors))

    def test_identity_projection(self):
        head = ProjectionHead(3, hidden_dim=3, out_dim=3)
        with torch.no_grad():
            for layer in (head.fc1, head.fc2):
                layer.weight.copy_(torch.eye(3))
                layer.bias.zero_()
        vector = np.array([3.0, 4.0, 0.0])
        np.testing.assert_allclose(project(vector, head).numpy(), [0.6, 0.8, 0.0], atol=1e-6)

    def test_zero_projection_is_degenerate(self):
        with self.assertRaises(DegenerateProjectionError):
            normalize_projection(torch.zeros(2, 4))

    def test_classifier_layer_tag_is_prefixed(self):
        model = HabitatClassifier(build_encoder(TINY), ClassifierHead(8, ['a', 'b']))
        self.assertEqual(model.default_layer_tag(), 'encoder.blocks.0')
        self.assertEqual(tuple(model(torch.randn(2, 3, 16, 16)).shape), (2, 2))
