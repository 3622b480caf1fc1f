import numpy as np
import pytest

from ovvis.config import WorldConfig
from ovvis.errors import ConfigError, ContractError
from ovvis.world import (EVAL, TRAIN, clip_image_provider, generate, haar_orthogonal, load_dataset,
                         make_prototypes, save_dataset, text_provider)

SMALL = dict(num_train_videos=4, num_eval_videos=6, frames_per_video=4)


@pytest.fixture(scope="module")
def world():
    return generate(WorldConfig(**SMALL))


@pytest.fixture(scope="module")
def crowded():
    return generate(WorldConfig(min_instances=2, max_instances=3, occlusion=True, **SMALL))


class TestGenerate:
    def test_bit_identical_for_same_seed(self, world):
        again = generate(WorldConfig(**SMALL))
        for a, b in zip(world.eval_videos + world.train_videos, again.eval_videos + again.train_videos):
            assert a.frames.tobytes() == b.frames.tobytes()
            assert a.masks.tobytes() == b.masks.tobytes()
            assert a.image_embeddings.embeddings.tobytes() == b.image_embeddings.embeddings.tobytes()

    def test_different_seed_differs(self, world):
        other = generate(WorldConfig(**{**SMALL, "seed": 1}))
        assert not np.array_equal(world.prototypes, other.prototypes)

    def test_noise_free_identity_pixels_carry_the_prototype(self):
        w = generate(WorldConfig(noise_sigma=0.0, domain_gap="identity", **SMALL))
        v = w.eval_videos[0]
        k, C = v.class_ids[0], w.config.embed_dim
        inside = v.masks[0].astype(bool)
        pix = v.frames.transpose(0, 2, 3, 1)[inside]
        np.testing.assert_array_equal(pix[:, :C], np.tile(w.prototypes[k], (len(pix), 1)))
        np.testing.assert_array_equal(pix[:, C], 1.0)
        assert np.all(v.frames.transpose(0, 2, 3, 1)[~inside] == 0)

    def test_rotation_preserves_norms(self, world):
        np.testing.assert_allclose(np.linalg.norm(world.signatures, axis=1), 1.0, atol=1e-12)
        np.testing.assert_allclose(np.linalg.norm(world.prototypes, axis=1), 1.0, atol=1e-12)

    def test_prototypes_are_near_orthogonal(self, world):
        g = world.prototypes @ world.prototypes.T
        assert np.abs(g - np.diag(np.diag(g))).max() < 0.3

    def test_masks_disjoint_and_tracks_persistent(self, crowded):
        for v in crowded.videos(EVAL):
            assert v.masks.sum(axis=0).max() <= 1
            np.testing.assert_array_equal(v.track_ids, np.arange(len(v.class_ids)))
            assert len(set(v.class_ids.tolist())) == len(v.class_ids)

    def test_split_protocol(self, world):
        assert all(c < world.config.num_base for v in world.videos(TRAIN) for c in v.class_ids)
        assert [int(v.class_ids[0]) for v in world.videos(EVAL)] == [i % 12 for i in range(6)]

    def test_infeasible_instance_count(self):
        with pytest.raises(ConfigError):
            generate(WorldConfig(min_instances=4, max_instances=4, min_size=8, max_size=12))

    def test_hidden_gap_decorrelates_signatures(self):
        rng = np.random.default_rng(0)
        protos = make_prototypes(12, 16, rng)
        means = []
        for _ in range(20):
            a = haar_orthogonal(16, rng)
            means.append(np.mean(np.sum((protos @ a.T) * protos, axis=1)))
        assert abs(np.mean(means)) < 0.15

    def test_identity_mode_is_linearly_separable(self):
        w = generate(WorldConfig(noise_sigma=0.0, domain_gap="identity", **SMALL))
        C = w.config.embed_dim
        for v in w.eval_videos:
            pix = v.frames.transpose(0, 2, 3, 1)[v.masks[0].astype(bool)][:, :C]
            assert np.all((pix @ w.prototypes.T).argmax(axis=1) == v.class_ids[0])

    def test_coarse_masks_use_majority(self):
        w = generate(WorldConfig(**SMALL))
        v = w.eval_videos[0]
        c = v.coarse_masks(4)
        assert c.shape == (1, 4, 8, 8)
        frac = v.masks.reshape(1, 4, 8, 4, 8, 4).mean(axis=(3, 5))
        np.testing.assert_array_equal(c, frac > 0.5)


class TestProviders:
    def test_single_instance_noise_free(self):
        protos = np.eye(3)
        masks = np.zeros((1, 2, 4, 4), np.uint8)
        masks[0, :, :2, :2] = 1
        emb = clip_image_provider(masks, [1], protos).embeddings
        np.testing.assert_array_equal(emb, np.tile(protos[1], (2, 1)))

    def test_empty_frame_is_zero_and_flagged(self):
        masks = np.zeros((1, 2, 4, 4), np.uint8)
        masks[0, 0, 0, 0] = 1
        out = clip_image_provider(masks, [0], np.eye(3))
        np.testing.assert_array_equal(out.embeddings[1], 0.0)
        assert out.empty_frames.tolist() == [False, True]

    def test_equal_areas_mix_evenly(self):
        protos = make_prototypes(3, 5, np.random.default_rng(1))
        masks = np.zeros((2, 1, 4, 4), np.uint8)
        masks[0, 0, :2] = 1
        masks[1, 0, 2:] = 1
        emb = clip_image_provider(masks, [0, 2], protos).embeddings[0]
        s = protos[0] + protos[2]
        np.testing.assert_allclose(emb, s / np.linalg.norm(s), atol=1e-15)

    def test_text_provider(self, world):
        text = world.text()
        assert text.embeddings.shape == (12, 16)
        np.testing.assert_allclose(np.linalg.norm(text.embeddings, axis=1), 1.0)
        assert text.novel_flags.sum() == 4 and not text.novel_flags[:8].any()
        np.testing.assert_array_equal(text.embeddings @ text.embeddings.T, world.prototypes @ world.prototypes.T)
        with pytest.raises(ContractError):
            text_provider(["a"], world.prototypes, world.novel_flags)


def test_dataset_roundtrip(tmp_path, crowded):
    save_dataset(crowded, tmp_path)
    back = load_dataset(tmp_path)
    assert back.config == crowded.config
    np.testing.assert_array_equal(back.prototypes, crowded.prototypes)
    for a, b in zip(crowded.eval_videos, back.eval_videos):
        np.testing.assert_array_equal(a.frames, b.frames)
        np.testing.assert_array_equal(a.masks, b.masks)
        np.testing.assert_array_equal(a.class_ids, b.class_ids)
        np.testing.assert_array_equal(a.image_embeddings.embeddings, b.image_embeddings.embeddings)
