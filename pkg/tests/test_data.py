import numpy as np
import pytest

from dfm.data import (BUILTIN_TASKS, builtin_task, decode_text, ingest_corpus,
                      load_tokenizer, save_tokenizer, task_dataset,
                      with_mask_token)
from dfm.rngs import substream


def test_all_builtin_tasks_construct():
    for name in BUILTIN_TASKS:
        task = builtin_task(name)
        assert task.name == name
        assert task.space.K >= 2 and task.D >= 1


def test_unknown_task_rejected():
    with pytest.raises(ValueError, match="unknown task"):
        builtin_task("nope")


def test_point_task_is_delta():
    task = builtin_task("point")
    q = task.joint()
    assert np.count_nonzero(q.probs) == 1
    assert q.probs.max() == 1.0


def test_two_mode_task_structure():
    task = builtin_task("two_mode")
    q = task.joint()
    support = q.states()[q.probs > 0]
    assert len(support) == 2
    assert np.allclose(q.probs[q.probs > 0], 0.5)
    # the modes are far apart: each token paired with its most distant one
    s1, s2 = support
    for a, b in zip(s1, s2):
        assert task.space.distances[a, b] == task.space.distances[a].max()


def test_grid_pattern_joint_sums_and_bias():
    task = builtin_task("grid_pattern")
    q = task.joint()
    assert q.probs.sum() == pytest.approx(1.0)
    # constant fields are the most likely states
    states = q.states()
    constant = np.all(states == states[:, :1], axis=1)
    assert q.probs[constant].min() > q.probs[~constant].max()


def test_grid_pattern_large_variant_uses_sampler():
    task = builtin_task("grid_pattern", side=4, K=8)
    assert task.q is None
    draws = task.draw_targets((), substream(0, "g"), 500)
    assert draws.shape == (500, 16)
    # most cells agree with the per-row modal color
    agree = np.mean([(row == np.bincount(row).argmax()).mean()
                     for row in draws])
    assert agree > 0.7


def test_copy_condition_reverses():
    task = builtin_task("copy_condition")
    for cond in task.conditions[:5]:
        q = task.joint(cond)
        target = q.states()[q.probs.argmax()]
        assert tuple(target) == tuple(reversed(cond))


def test_char_text_task_padding():
    task = builtin_task("char_text")
    eos, pad = task.space.eos, task.space.pad
    for seq in task.joint().states()[task.joint().probs > 0]:
        eos_pos = np.where(seq == eos)[0]
        assert len(eos_pos) == 1
        assert np.all(seq[eos_pos[0] + 1:] == pad)
        assert np.all(seq[:eos_pos[0]] < eos)


def test_task_dataset_shapes():
    task = builtin_task("copy_condition")
    ds = task_dataset(task, 20, substream(1, "ds"))
    assert len(ds) == 20
    for cond, target in ds:
        assert cond.shape == (2,)
        assert target.shape == (task.D,)


def test_with_mask_token_appends_distinct_token():
    task = builtin_task("point")
    ext, mask = with_mask_token(task.space)
    assert mask == task.space.K
    assert ext.K == task.space.K + 1
    assert np.allclose(ext.embeddings[:mask], task.space.embeddings)
    assert np.all(ext.distances[mask, :mask] > 0)


def test_ingest_corpus_round_trip(tmp_path):
    task = builtin_task("char_text")
    eos, pad = task.space.eos, task.space.pad
    f = tmp_path / "corpus.txt"
    f.write_text("ab\ncade\n\n")
    pairs = ingest_corpus(f, task.charmap, L=6, eos=eos, pad=pad)
    assert len(pairs) == 3
    for (_, tokens), text in zip(pairs, ("ab", "cade", "")):
        decoded, missing = decode_text(tokens, task.charmap, eos)
        assert decoded == text
        assert not missing


def test_ingest_corpus_unknown_char(tmp_path):
    task = builtin_task("char_text")
    f = tmp_path / "corpus.txt"
    f.write_text("ab\ncaXe\n")
    with pytest.raises(ValueError, match="unknown character 'X'"):
        ingest_corpus(f, task.charmap, L=6, eos=task.space.eos,
                      pad=task.space.pad)


def test_ingest_corpus_overlength(tmp_path):
    task = builtin_task("char_text")
    f = tmp_path / "corpus.txt"
    f.write_text("abcdea\n")
    with pytest.raises(ValueError, match="maximum"):
        ingest_corpus(f, task.charmap, L=6, eos=task.space.eos,
                      pad=task.space.pad)


def test_decode_text_missing_eos_flagged():
    task = builtin_task("char_text")
    tokens = np.array([0, 1, 2, 3, 4, 0])
    text, missing = decode_text(tokens, task.charmap, task.space.eos)
    assert missing
    assert text == "abcdea"


def test_decode_truncates_at_first_eos():
    task = builtin_task("char_text")
    eos = task.space.eos
    tokens = np.array([0, eos, 3, eos, 4, 4])
    text, missing = decode_text(tokens, task.charmap, eos)
    assert text == "a"
    assert not missing


def test_tokenizer_round_trip(tmp_path):
    charmap = {"a": 0, "b": 1, "z": 7}
    f = tmp_path / "tok.tsv"
    save_tokenizer(charmap, f)
    assert load_tokenizer(f) == charmap
