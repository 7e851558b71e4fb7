import itertools

import numpy as np
import pytest

from text2traj.embedding import (
    CachedEmbeddingProvider,
    StubEmbeddingProvider,
    cached_embed,
    cosine_similarity,
    detect_motion_class,
    image_content_key,
    pool_image_embeddings,
    stub_embed_text,
    text_key,
)
from text2traj.errors import CacheKeyError, InvalidInputError, ShapeError
from text2traj.overlay import RasterFrame
from text2traj.synth import CAPTION_TEMPLATES, MOTION_CLASSES


@pytest.fixture(scope="module")
def stub():
    return StubEmbeddingProvider(dim=512, seed=0)


class TestStubText:
    def test_deterministic_bitwise(self, stub):
        a = stub.embed_text("object moving left")
        b = stub.embed_text("object moving left")
        assert a.tobytes() == b.tobytes()

    def test_unit_norm(self, stub):
        for text in ("object moving left", "a totally unrelated sentence"):
            assert abs(np.linalg.norm(stub.embed_text(text).astype(np.float64)) - 1.0) < 1e-6

    def test_same_class_high_cosine(self, stub):
        a = stub.embed_text("object moving left")
        b = stub.embed_text("thing moving left")
        assert cosine_similarity(a, b) >= 0.95

    def test_cross_class_low_cosine(self, stub):
        a = stub.embed_text("object moving left")
        b = stub.embed_text("object moving right")
        assert cosine_similarity(a, b) <= 0.1

    def test_full_vocabulary_separation(self, stub):
        embs = {
            cls: [stub.embed_text(t) for t in CAPTION_TEMPLATES[cls]]
            for cls in MOTION_CLASSES
        }
        for cls, vecs in embs.items():
            for a, b in itertools.combinations(vecs, 2):
                assert cosine_similarity(a, b) >= 0.95, cls
        for ca, cb in itertools.combinations(MOTION_CLASSES, 2):
            for a in embs[ca]:
                for b in embs[cb]:
                    assert cosine_similarity(a, b) <= 0.1, (ca, cb)

    def test_class_names_detected(self):
        for cls in MOTION_CLASSES:
            assert detect_motion_class(cls) == cls
        for cls, templates in CAPTION_TEMPLATES.items():
            for text in templates:
                assert detect_motion_class(text) == cls, text

    def test_empty_string_rejected(self, stub):
        with pytest.raises(InvalidInputError):
            stub.embed_text("")

    def test_dim_lower_bound(self):
        with pytest.raises(InvalidInputError):
            StubEmbeddingProvider(dim=1)

    def test_one_shot_helper_matches_provider(self, stub):
        assert stub_embed_text("object moving left", dim=512, seed=0).tobytes() == \
            stub.embed_text("object moving left").tobytes()

    def test_seed_changes_embeddings(self):
        a = stub_embed_text("object moving left", dim=64, seed=0)
        b = stub_embed_text("object moving left", dim=64, seed=1)
        assert a.tobytes() != b.tobytes()


class TestStubImage:
    def test_deterministic_and_content_sensitive(self, stub):
        frame = RasterFrame.solid(8, 6, (255, 255, 255))
        other = RasterFrame.solid(8, 6, (0, 0, 0))
        a = stub.embed_image(frame)
        assert a.tobytes() == stub.embed_image(frame).tobytes()
        assert a.tobytes() != stub.embed_image(other).tobytes()
        assert abs(np.linalg.norm(a.astype(np.float64)) - 1.0) < 1e-6


class TestCache:
    def test_present_key_returned_exactly(self):
        vec = np.random.default_rng(0).standard_normal(4).astype(np.float32)
        assert cached_embed("k", {"k": vec}).tobytes() == vec.tobytes()

    def test_missing_key_names_it(self):
        with pytest.raises(CacheKeyError, match="absent-key"):
            cached_embed("absent-key", {})

    def test_provider_dim_checked_at_construction(self):
        cache = {text_key("hello"): np.zeros(512, dtype=np.float32)}
        with pytest.raises(ShapeError):
            CachedEmbeddingProvider(cache, dim=256)

    def test_provider_text_and_image_lookup(self):
        frame = RasterFrame.solid(4, 4)
        cache = {
            text_key("hello"): np.arange(8, dtype=np.float32),
            image_content_key(frame): np.ones(8, dtype=np.float32),
        }
        provider = CachedEmbeddingProvider(cache, dim=8)
        assert provider.embed_text("hello")[3] == 3.0
        assert provider.embed_image(frame).sum() == 8.0
        with pytest.raises(CacheKeyError):
            provider.embed_text("goodbye")


class TestPooling:
    def test_single_frame_normalized(self):
        v = np.array([3.0, 4.0], dtype=np.float32)
        np.testing.assert_allclose(pool_image_embeddings([v]), [0.6, 0.8], atol=1e-7)

    def test_idempotent_duplicate(self):
        v = np.array([0.0, 2.0], dtype=np.float32)
        np.testing.assert_allclose(pool_image_embeddings([v, v]), [0.0, 1.0], atol=1e-7)

    def test_orthonormal_pair(self):
        e1 = np.array([1.0, 0.0])
        e2 = np.array([0.0, 1.0])
        np.testing.assert_allclose(
            pool_image_embeddings([e1, e2]),
            np.array([1.0, 1.0]) / np.sqrt(2.0), atol=1e-7,
        )

    def test_permutation_invariant(self):
        rng = np.random.default_rng(2)
        frames = [rng.standard_normal(16) for _ in range(5)]
        a = pool_image_embeddings(frames)
        b = pool_image_embeddings(frames[::-1])
        np.testing.assert_allclose(a, b, atol=1e-7)

    def test_empty_rejected(self):
        with pytest.raises(InvalidInputError):
            pool_image_embeddings([])

    def test_cancelling_frames_rejected(self):
        v = np.array([1.0, 0.0])
        with pytest.raises(InvalidInputError):
            pool_image_embeddings([v, -v])


class TestCosine:
    def test_self_is_one(self):
        v = np.array([1.0, 2.0, -3.0])
        assert cosine_similarity(v, v) == pytest.approx(1.0, abs=1e-12)

    def test_orthogonal_zero(self):
        assert cosine_similarity(np.array([1.0, 0.0]), np.array([0.0, 5.0])) == 0.0

    def test_antiparallel(self):
        v = np.array([0.5, -2.0])
        assert cosine_similarity(v, -v) == pytest.approx(-1.0, abs=1e-12)

    def test_zero_norm_rejected(self):
        with pytest.raises(InvalidInputError):
            cosine_similarity(np.zeros(3), np.ones(3))
