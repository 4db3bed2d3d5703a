import numpy as np
import pytest

from shared.exceptions import DimensionError, ValidationError
from consent.modules import blocks
from consent.modules.blocks import Sequence, WordPatch


def word_patch(h, w, image_id='img', index=0, label=0):
    pixels = np.full((h, w), 250, dtype=np.uint8)
    pixels[h // 3:2 * h // 3, 1:w - 1] = 20
    return WordPatch(pixels, (0, 0, w, h), label, image_id, index)


class TestBlockOrigins:
    def test_single_block(self):
        span, origins = blocks.block_origins(96, 128, 96, 128)
        assert span == 96.0
        assert origins == [0.0]

    def test_last_window_right_aligned(self):
        span, origins = blocks.block_origins(200, 128, 96, 128)
        assert origins == [0.0, 96.0, 104.0]

    def test_narrow_patch_still_one_block(self):
        assert len(blocks.block_origins(10, 128, 96, 128)[1]) == 1


class TestSplitBlocks:
    def test_shapes(self):
        out = blocks.split_blocks(word_patch(32, 50).pixels, 16, 12, 1)
        assert out.shape == (3, 1, 16, 12)
        assert out.min() >= 0.0 and out.max() <= 1.0

    def test_letters_are_bright(self):
        out = blocks.split_blocks(word_patch(32, 24).pixels, 16, 12, 1)
        assert out.shape[0] == 1
        assert out[0, 0, 8, 6] > 0.8
        assert out[0, 0, 0, 6] < 0.2

    def test_rgb_channels(self):
        pixels = np.repeat(word_patch(16, 12).pixels[..., None], 3, axis=-1)
        assert blocks.split_blocks(pixels, 16, 12, 3).shape == (1, 3, 16, 12)


class TestChunkWords:
    def test_words_not_split(self):
        assert blocks.chunk_words([3, 4, 2], 5) == [[(0, 0, 3)], [(1, 0, 4)], [(2, 0, 2)]]

    def test_packs_until_full(self):
        assert blocks.chunk_words([1, 2, 2], 5) == [[(0, 0, 1), (1, 0, 2), (2, 0, 2)]]

    def test_oversized_word(self):
        assert blocks.chunk_words([7], 3) == [[(0, 0, 3)], [(0, 3, 3)], [(0, 6, 1)]]

    def test_custom_order(self):
        assert blocks.chunk_words([1, 1], 5, order=[1, 0]) == [[(1, 0, 1), (0, 0, 1)]]


class TestImageSequences:
    def test_every_block_once(self, tiny_config):
        patches = [word_patch(16, 12 * n, index=i, label=i % 2) for i, n in enumerate([1, 3, 2, 4])]
        sequences = blocks.image_sequences(patches, tiny_config)
        ids = [w for s in sequences for w in s.word_ids]
        assert [ids.count(('img', i)) for i in range(4)] == [1, 3, 2, 4]
        assert all(len(s.labels) <= tiny_config.max_seq_len for s in sequences)
        for seq in sequences:
            np.testing.assert_array_equal(seq.labels, [index % 2 for _, index in seq.word_ids])

    def test_no_words(self, tiny_config):
        assert blocks.image_sequences([], tiny_config) == []


class TestCollate:
    def test_padding_is_masked(self):
        seqs = [Sequence(np.ones((n, 1, 16, 12)), np.ones(n, dtype=int), [('a', j) for j in range(n)], 'a')
                for n in (2, 4)]
        batch = blocks.collate(seqs)
        assert batch.shape == (2, 4)
        np.testing.assert_array_equal(batch.mask, [[True, True, False, False], [True] * 4])
        assert batch.blocks[0, 2:].sum() == 0.0
        np.testing.assert_array_equal(batch.labels[0], [1, 1, 0, 0])
        assert batch.word_ids[0][2:] == [None, None]

    def test_pad_to_length(self):
        seq = Sequence(np.ones((2, 1, 8, 8)), np.zeros(2, dtype=int), [('a', 0)] * 2)
        assert blocks.collate([seq], 5).shape == (1, 5)
        with pytest.raises(DimensionError):
            blocks.collate([seq], 1)

    def test_empty(self):
        with pytest.raises(DimensionError):
            blocks.collate([])


class TestAggregate:
    def test_mean_over_blocks(self):
        result = blocks.aggregate_word_predictions([0.4, 0.4, 0.9, 0.1], ['a', 'a', 'a', 'b'])
        assert result['a'][1] == 1
        assert result['a'][0] == pytest.approx(1.7 / 3)
        assert result['b'] == (0.1, 0)

    def test_tie_goes_to_bold(self):
        assert blocks.aggregate_word_predictions([0.5, 0.5], ['a', 'a'])['a'][1] == 1

    def test_unknown_word(self):
        with pytest.raises(ValidationError):
            blocks.aggregate_word_predictions([0.2], ['z'], known_words=['a'])
        with pytest.raises(ValidationError):
            blocks.aggregate_word_predictions([0.2], [None])

    def test_length_mismatch(self):
        with pytest.raises(DimensionError):
            blocks.aggregate_word_predictions([0.2, 0.3], ['a'])


class TestCropBox:
    def test_crop(self):
        image = np.arange(30).reshape(5, 6)
        np.testing.assert_array_equal(blocks.crop_box(image, (1, 2, 3, 2)), [[13, 14, 15], [19, 20, 21]])

    @pytest.mark.parametrize('box', [(4, 0, 3, 2), (0, 0, 0, 2), (-1, 0, 2, 2), (0, 4, 2, 2)])
    def test_out_of_bounds(self, box):
        with pytest.raises(ValidationError):
            blocks.crop_box(np.zeros((5, 6)), box)
