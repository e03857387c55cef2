import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from PIL import Image

from clmlf.data import (
    CLS,
    PAD,
    SEP,
    UNK,
    Dataset,
    Example,
    ImageLoadError,
    SchemaError,
    SyntheticSpec,
    Vocab,
    collate,
    evidence_token,
    format_input,
    load_jsonl,
    split,
    synthesize,
    synthetic_vocab,
    write_dataset,
)


def _write_lines(path, records):
    path.write_text("".join(json.dumps(r) + "\n" for r in records))
    return path


def _tiny_image(path, size=(8, 8), value=128):
    Image.fromarray(np.full((*size, 3), value, dtype=np.uint8)).save(path)
    return path


class TestLoadJsonl:
    def test_minimal_record(self, tmp_path):
        f = _write_lines(tmp_path / "d.jsonl", [{"id": "a", "text": "hi", "image": "a.png", "label": 0}])
        ds = load_jsonl(f)
        assert len(ds) == 1
        assert ds[0].aspect is None
        assert ds[0].image == str(tmp_path / "a.png")

    def test_mvsa_single_sized_file(self, tmp_path):
        recs = [{"id": str(i), "text": "t", "image": "x.png", "label": i % 3} for i in range(4511)]
        ds = load_jsonl(_write_lines(tmp_path / "mvsa.jsonl", recs))
        assert len(ds) == 4511
        assert ds.num_classes == 3

    def test_duplicate_id(self, tmp_path):
        recs = [{"id": "x", "text": "a", "image": "a.png", "label": 0}] * 2
        with pytest.raises(SchemaError, match="duplicate"):
            load_jsonl(_write_lines(tmp_path / "d.jsonl", recs))

    def test_missing_field_names_line(self, tmp_path):
        recs = [{"id": "a", "text": "a", "image": "a.png", "label": 0}, {"id": "b", "image": "b.png", "label": 1}]
        with pytest.raises(SchemaError, match="line 2"):
            load_jsonl(_write_lines(tmp_path / "d.jsonl", recs))

    def test_extra_field_rejected(self, tmp_path):
        recs = [{"id": "a", "text": "a", "image": "a.png", "label": 0, "colour": "red"}]
        with pytest.raises(SchemaError, match="line 1.*colour"):
            load_jsonl(_write_lines(tmp_path / "d.jsonl", recs))

    def test_image_and_images_exclusive(self, tmp_path):
        recs = [{"id": "a", "text": "a", "image": "a.png", "images": ["b.png"], "label": 0}]
        with pytest.raises(SchemaError, match="exactly one"):
            load_jsonl(_write_lines(tmp_path / "d.jsonl", recs))

    def test_header_fixes_class_count(self, tmp_path):
        recs = [{"num_classes": 5}, {"id": "a", "text": "a", "image": "a.png", "label": 1}]
        assert load_jsonl(_write_lines(tmp_path / "d.jsonl", recs)).num_classes == 5

    def test_unreadable_image_not_checked_at_load(self, tmp_path):
        recs = [{"id": "a", "text": "a", "image": "does/not/exist.png", "label": 0}]
        assert len(load_jsonl(_write_lines(tmp_path / "d.jsonl", recs))) == 1


class TestSplit:
    def _ds(self, n):
        return Dataset([Example(id=str(i), text="t", label=0, image="x") for i in range(n)], 2)

    def test_generic_rule_exact_division(self):
        tr, va, te = split(self._ds(10), seed=0)
        assert (len(tr), len(va), len(te)) == (8, 1, 1)

    def test_explicit_counts(self):
        tr, va, te = split(self._ds(4511), seed=1, explicit_counts=(3611, 450, 450))
        assert (len(tr), len(va), len(te)) == (3611, 450, 450)
        assert (tr.split_tag, va.split_tag, te.split_tag) == ("train", "val", "test")

    def test_explicit_counts_mismatch(self):
        with pytest.raises(ValueError, match="sum"):
            split(self._ds(10), explicit_counts=(8, 1, 2))

    def test_same_seed_same_membership(self):
        a = split(self._ds(50), seed=3)
        b = split(self._ds(50), seed=3)
        for x, y in zip(a, b):
            assert [e.id for e in x] == [e.id for e in y]

    @settings(max_examples=40, deadline=None)
    @given(n=st.integers(0, 300), seed=st.integers(0, 2**31))
    def test_disjoint_and_exhaustive(self, n, seed):
        parts = split(self._ds(n), seed=seed)
        ids = [e.id for p in parts for e in p]
        assert len(ids) == len(set(ids)) == n
        assert len(parts[1]) == len(parts[2]) == n // 10


class TestFormatInput:
    def test_sentence(self):
        assert format_input("good phone") == "[CLS] good phone [SEP]"

    def test_aspect(self):
        assert format_input("good phone", "battery") == "[CLS] good phone [SEP] battery [SEP]"

    @pytest.mark.parametrize("text,aspect", [("", "x"), ("  ", None), ("ok", "")])
    def test_errors(self, text, aspect):
        with pytest.raises(ValueError):
            format_input(text, aspect)

    @given(
        words=st.lists(st.sampled_from(["a", "bb", "c", "dd"]), min_size=1, max_size=6),
        aspect=st.one_of(st.none(), st.lists(st.sampled_from(["x", "yy"]), min_size=1, max_size=3)),
    )
    def test_round_trip_positions(self, words, aspect):
        asp = " ".join(aspect) if aspect else None
        toks = format_input(" ".join(words), asp).split()
        assert toks[0] == "[CLS]"
        assert toks[len(words) + 1] == "[SEP]"
        if asp:
            assert toks[-1] == "[SEP]" and len(toks) == len(words) + len(aspect) + 3


class TestCollate:
    def _examples(self, tmp_path, texts):
        img = _tiny_image(tmp_path / "a.png")
        return [Example(id=f"e{i}", text=t, label=i % 2, image=str(img)) for i, t in enumerate(texts)]

    def test_shapes_and_padding(self, tmp_path):
        exs = self._examples(tmp_path, ["a b", "a b c d"])
        vocab = Vocab.build(exs)
        b = collate(exs, vocab, 8, (8, 8))
        assert tuple(b.token_ids.shape) == (2, 8)
        assert b.token_ids[0].tolist()[:4] == [CLS, vocab.id("a"), vocab.id("b"), SEP]
        assert b.text_mask[0].tolist() == [1, 1, 1, 1, 0, 0, 0, 0]
        assert (b.token_ids[b.text_mask == 0] == PAD).all()
        assert tuple(b.images.shape) == (2, 3, 8, 8)

    def test_truncation_keeps_cls_and_sep(self, tmp_path):
        exs = self._examples(tmp_path, [" ".join(f"w{i}" for i in range(12))])
        b = collate(exs, Vocab.build(exs), 8, (8, 8))
        ids = b.token_ids[0].tolist()
        assert ids[0] == CLS and ids[-1] == SEP and b.text_mask[0].sum() == 8

    def test_batch_of_32(self, tmp_path):
        exs = self._examples(tmp_path, ["x"] * 32)
        assert collate(exs, Vocab.build(exs), 4, (8, 8)).size == 32

    def test_unknown_token_maps_to_unk(self, tmp_path):
        exs = self._examples(tmp_path, ["seen"])
        b = collate(self._examples(tmp_path, ["unseen"]), Vocab.build(exs), 4, (8, 8))
        assert b.token_ids[0, 1] == UNK

    def test_standardization(self, tmp_path):
        exs = self._examples(tmp_path, ["x"])
        b = collate(exs, Vocab.build(exs), 4, (8, 8))
        assert np.allclose(b.images.numpy(), (128 / 255 - 0.5) / 0.5, atol=1e-6)

    def test_resize(self, tmp_path):
        exs = self._examples(tmp_path, ["x"])
        assert tuple(collate(exs, Vocab.build(exs), 4, (16, 12)).images.shape) == (1, 3, 16, 12)

    def test_unreadable_image_names_example(self, tmp_path):
        exs = [Example(id="broken", text="x", label=0, image=str(tmp_path / "nope.png"))]
        with pytest.raises(ImageLoadError, match="broken"):
            collate(exs, Vocab.build(exs), 4, (8, 8))

    def test_multi_image_choice_is_seeded(self, tmp_path):
        paths = [str(_tiny_image(tmp_path / f"{v}.png", value=v)) for v in (0, 100, 200)]
        exs = [Example(id=f"m{i}", text="x", label=0, images=paths) for i in range(20)]
        vocab = Vocab.build(exs)
        a = collate(exs, vocab, 4, (8, 8), np.random.default_rng(5))
        b = collate(exs, vocab, 4, (8, 8), np.random.default_rng(5))
        assert a.images.equal(b.images)
        assert len(np.unique(a.images[:, 0, 0, 0].numpy())) > 1

    def test_aspect_input(self, tmp_path):
        img = _tiny_image(tmp_path / "a.png")
        exs = [Example(id="a", text="good phone", label=0, image=str(img), aspect="battery")]
        vocab = Vocab.build(exs)
        ids = collate(exs, vocab, 8, (8, 8)).token_ids[0].tolist()
        assert ids[:6] == [CLS, vocab.id("good"), vocab.id("phone"), SEP, vocab.id("battery"), SEP]


class TestSynthesize:
    def test_fully_informative_modalities(self):
        spec = SyntheticSpec(n=300, p_text=1.0, p_image=1.0, text_len=1, background=0.0, seed=4)
        ds = synthesize(spec)
        from clmlf.data import make_motifs

        motifs = make_motifs(spec)
        for ex in ds:
            assert ex.text == evidence_token(ex.label)
            r, c = ex.meta["motif_cell"]
            cell = ex.image[r * 4:(r + 1) * 4, c * 4:(c + 1) * 4]
            matches = [k for k in range(3) if np.array_equal(cell, motifs[k])]
            assert matches == [ex.label]

    def test_complementary_text_only_bayes_accuracy(self):
        # Monte-Carlo estimate of the analytic text classifier: evidence word -> its class, else guess class 0
        ds = synthesize(SyntheticSpec(n=100_000, num_classes=3, complementary=True, seed=11, grid=2, cell=2))
        ev = {evidence_token(k): k for k in range(3)}
        hits = 0
        for ex in ds:
            found = [ev[t] for t in ex.text.split() if t in ev]
            hits += (found[0] if found else 0) == ex.label
            assert (ex.meta["evidence_pos"] is None) != (ex.meta["motif_cell"] is None)
        assert abs(hits / len(ds) - (0.5 + 0.5 / 3)) < 0.01

    def test_label_marginals_near_uniform(self):
        labels = synthesize(SyntheticSpec(n=20_000, num_classes=3, seed=2, grid=2, cell=2)).labels
        assert np.abs(np.bincount(labels, minlength=3) / len(labels) - 1 / 3).max() < 0.02

    def test_byte_identical_for_equal_seeds(self, tmp_path):
        spec = SyntheticSpec(n=30, complementary=True, seed=9)
        for name in ("a", "b"):
            write_dataset(synthesize(spec), tmp_path / name)
        for f in sorted((tmp_path / "a").rglob("*")):
            if f.is_file():
                assert f.read_bytes() == (tmp_path / "b" / f.relative_to(tmp_path / "a")).read_bytes()

    def test_round_trip_through_jsonl(self, tmp_path):
        ds = synthesize(SyntheticSpec(n=10, seed=1))
        loaded = load_jsonl(write_dataset(ds, tmp_path))
        vocab = synthetic_vocab(SyntheticSpec())
        a = collate(ds.examples, vocab, 8, (16, 16))
        b = collate(loaded.examples, vocab, 8, (16, 16))
        assert a.images.equal(b.images) and a.token_ids.equal(b.token_ids)
        assert loaded[3].meta == ds[3].meta

    @pytest.mark.parametrize("bad", [dict(n=0), dict(p_text=1.5), dict(num_classes=1)])
    def test_invalid_spec(self, bad):
        with pytest.raises(ValueError):
            synthesize(SyntheticSpec(**bad))
