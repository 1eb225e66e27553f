import numpy as np
import pytest

from dsfn.errors import DataError
from dsfn.infer import enhance_sequence, sliding_window_starts
from dsfn.model import ModelConfig, TwoLevelDSFN

TINY = ModelConfig(scale=2, channels=3, enc_widths=(4, 8), jdsr_width=8,
                   jdsr_depth=1, tfbfi_width=8, tfbfi_depth=1, dec_width=4)


def test_window_starts_touch_and_cover():
    assert sliding_window_starts(4) == [0]
    assert sliding_window_starts(5) == [0, 1]
    assert sliding_window_starts(6) == [0, 2]
    assert sliding_window_starts(7) == [0, 2, 3]
    assert sliding_window_starts(8) == [0, 2, 4]


def test_too_few_frames_rejected():
    with pytest.raises(DataError):
        sliding_window_starts(3)


@pytest.mark.parametrize("n_in,expected", [(4, 5), (5, 7), (6, 9), (7, 11)])
def test_output_count_is_2n_minus_3(n_in, expected):
    model = TwoLevelDSFN(TINY, np.random.default_rng(0))
    blurry = np.random.default_rng(1).uniform(0, 1, (n_in, 3, 12, 12)).astype(np.float32)
    result = enhance_sequence(model, blurry)
    assert len(result["outputs"]) == expected
    assert sorted(result["outputs"]) == list(range(1, 2 * n_in - 2))


def test_level2_frames_preferred_where_available():
    model = TwoLevelDSFN(TINY, np.random.default_rng(2))
    blurry = np.random.default_rng(3).uniform(0, 1, (6, 3, 12, 12)).astype(np.float32)
    result = enhance_sequence(model, blurry)
    # windows at 0 and 2 produce level-2 indices {2,3,4} and {6,7,8}
    level2_covered = {2, 3, 4, 6, 7, 8}
    for idx in result["outputs"]:
        frame = result["outputs"][idx]
        assert frame.shape == (3, 24, 24)
        if idx in level2_covered:
            assert not np.array_equal(frame, result["level1"][idx])


def test_overlap_indices_are_averaged():
    model = TwoLevelDSFN(TINY, np.random.default_rng(4))
    blurry = np.random.default_rng(5).uniform(0, 1, (6, 3, 12, 12)).astype(np.float32)
    result = enhance_sequence(model, blurry)
    # index 5 is produced by the level-1 passes of both windows
    from dsfn.tensor import Tensor, no_grad
    from dsfn.model import maps_to_frames

    contributions = []
    with no_grad():
        for k in (0, 2):
            frames = [Tensor(blurry[k + i:k + i + 1]) for i in range(4)]
            maps = model.forward_maps(frames)
            l1 = maps_to_frames(maps["level1"], model.cfg.scale)
            j = 5 - (2 * k + 1)
            if 0 <= j < 5:
                contributions.append(l1[j].data[0])
    assert len(contributions) == 2
    assert np.allclose(result["level1"][5], np.mean(contributions, axis=0))


def test_offsets_collected_per_window():
    model = TwoLevelDSFN(TINY, np.random.default_rng(6))
    blurry = np.random.default_rng(7).uniform(0, 1, (6, 3, 12, 12)).astype(np.float32)
    result = enhance_sequence(model, blurry, collect_offsets=True)
    assert sorted(result["offsets"]) == [0, 2]
    prev, nxt = result["offsets"][0]
    assert prev.shape == (18, 12, 12) and nxt.shape == (18, 12, 12)


def test_outputs_deterministic():
    model = TwoLevelDSFN(TINY, np.random.default_rng(8))
    blurry = np.random.default_rng(9).uniform(0, 1, (5, 3, 12, 12)).astype(np.float32)
    a = enhance_sequence(model, blurry)
    b = enhance_sequence(model, blurry)
    for idx in a["outputs"]:
        assert np.array_equal(a["outputs"][idx], b["outputs"][idx])
