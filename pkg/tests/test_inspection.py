import csv

import numpy as np
import pytest
import torch
from PIL import Image
from sklearn.decomposition import PCA

from clmlf.data import SyntheticSpec, synthesize, synthetic_vocab
from clmlf.inspection import (
    AttentionMap,
    export_embeddings,
    export_overlay,
    extract_attention,
    pca_2d,
    project_2d,
    read_embeddings,
    render_overlay,
    upsample_nearest,
    write_coordinates,
)
from clmlf.training import build_model

from helpers import small_config


@pytest.fixture(scope="module")
def setup():
    spec = SyntheticSpec(n=20, seed=2)
    ds = synthesize(spec)
    torch.manual_seed(0)
    model = build_model(small_config(), synthetic_vocab(spec), 3)
    model.eval()
    return model, ds


class TestAttention:
    def test_rows_are_distributions(self, setup):
        model, ds = setup
        amap = extract_attention(model, ds[0])
        assert np.allclose(amap.head_weights().sum(axis=-1), 1.0, atol=1e-6)

    def test_shapes(self, setup):
        model, ds = setup
        amap = extract_attention(model, ds[1], head="mean")
        assert amap.text_to_image().shape == (8, 16)
        assert amap.patch_grid(0).shape == (4, 4)
        with pytest.raises(IndexError):
            amap.patch_grid(8)
        with pytest.raises(IndexError):
            extract_attention(model, ds[1], head=2)

    def test_zero_query_key_weights_give_uniform_attention(self, setup):
        model, ds = setup
        layer = model.mlf.fusion_encoder.layers[-1].attn
        saved = {k: v.clone() for k, v in layer.state_dict().items()}
        try:
            with torch.no_grad():
                for lin in (layer.q, layer.k):
                    lin.weight.zero_()
                    lin.bias.zero_()
            amap = extract_attention(model, ds[0])
            n_valid = int(amap.mask.sum())
            assert np.allclose(amap.text_to_image(), 1.0 / n_valid, atol=1e-7)
        finally:
            layer.load_state_dict(saved)

    def test_pad_rows_ignored_as_keys(self, setup):
        model, ds = setup
        amap = extract_attention(model, ds[0])
        assert (amap.head_weights()[:, ~amap.mask] < 1e-12).all()


class TestOverlay:
    def test_upsample_blocks(self):
        out = upsample_nearest(np.arange(4.0).reshape(2, 2), 16, 16)
        assert out.shape == (16, 16)
        assert (out[:8, :8] == 0).all() and (out[8:, 8:] == 3).all()

    def test_dimensions_and_peak(self):
        w = np.array([[0.1, 0.2], [0.6, 0.1]])
        img = np.full((16, 16, 3), 120, dtype=np.uint8)
        blended, heat = render_overlay(w, img)
        assert blended.shape == (16, 16, 3) and blended.dtype == np.uint8
        assert (heat[8:, :8] == 1.0).all() and heat[:8].max() < 1.0
        assert not np.array_equal(blended[12, 4], blended[4, 12])

    def test_alpha_zero_returns_image(self):
        img = np.random.default_rng(0).integers(0, 256, (8, 8, 3)).astype(np.uint8)
        blended, _ = render_overlay(np.ones((2, 2)), img, alpha=0.0)
        assert np.array_equal(blended, img)

    def test_export_writes_png(self, tmp_path):
        path = export_overlay(np.eye(2), np.zeros((3, 16, 16), dtype=np.float32), tmp_path / "o.png")
        with Image.open(path) as im:
            assert im.size == (16, 16) and im.mode == "RGB"

    def test_negative_weights_rejected(self):
        with pytest.raises(ValueError):
            render_overlay(-np.ones((2, 2)), np.zeros((4, 4, 3), dtype=np.uint8))


class TestEmbeddings:
    def test_csv_layout_and_reexport(self, setup, tmp_path):
        model, ds = setup
        a = export_embeddings(model, ds, tmp_path / "a.csv")
        b = export_embeddings(model, ds, tmp_path / "b.csv", batch_size=7)
        with a.open() as fh:
            rows = list(csv.reader(fh))
        assert rows[0][:3] == ["id", "label", "r0"] and len(rows[0]) == 2 + 16
        assert len(rows) == len(ds) + 1
        ids, labels, mat = read_embeddings(a)
        assert ids == [e.id for e in ds] and labels.tolist() == ds.labels.tolist()
        assert mat.shape == (20, 16)
        assert a.read_bytes() == export_embeddings(model, ds, tmp_path / "c.csv").read_bytes()
        assert np.allclose(read_embeddings(b)[2], mat, atol=1e-6)

    def test_empty_dataset(self, setup, tmp_path):
        model, ds = setup
        with pytest.raises(ValueError):
            export_embeddings(model, ds.subset([], "test"), tmp_path / "e.csv")


class TestPCA:
    def _x(self, seed=0, n=40, d=6):
        rng = np.random.default_rng(seed)
        return rng.normal(size=(n, d)) * np.array([5.0, 3.0, 1.0, 0.5, 0.2, 0.1])

    def test_matches_sklearn_up_to_sign(self):
        x = self._x()
        ours = pca_2d(x)
        ref = PCA(n_components=2, svd_solver="full").fit_transform(x)
        for j in range(2):
            assert min(np.abs(ours[:, j] - ref[:, j]).max(), np.abs(ours[:, j] + ref[:, j]).max()) < 1e-9

    def test_rotation_preserves_distances(self):
        x = self._x(1)
        q, _ = np.linalg.qr(np.random.default_rng(2).normal(size=(6, 6)))
        a, b = pca_2d(x), pca_2d(x @ q)
        da = np.linalg.norm(a[:, None] - a[None], axis=-1)
        db = np.linalg.norm(b[:, None] - b[None], axis=-1)
        assert np.abs(da - db).max() < 1e-9

    def test_variance_ordering(self):
        coords = pca_2d(self._x(3))
        assert coords[:, 0].var() >= coords[:, 1].var()

    def test_rank_one(self):
        t = np.linspace(-1, 1, 10)[:, None]
        coords = pca_2d(t * np.array([[1.0, 2.0, -1.0]]))
        assert np.abs(coords[:, 1]).max() < 1e-12
        assert np.allclose(np.abs(coords[:, 0]), np.abs(t[:, 0]) * np.sqrt(6))

    def test_rank_zero(self):
        with pytest.raises(ValueError, match="rank 0"):
            pca_2d(np.ones((5, 3)))

    def test_external_projector(self, tmp_path):
        x = self._x()
        coords = project_2d(x, lambda m: m[:, :2])
        assert np.array_equal(coords, x[:, :2])
        with pytest.raises(ValueError):
            project_2d(x, lambda m: m[:, :3])
        with pytest.raises(ValueError):
            project_2d(x, "umap")
        path = write_coordinates([str(i) for i in range(40)], np.zeros(40), coords, tmp_path / "c.csv")
        assert path.read_text().splitlines()[0] == "id,label,x,y"


def test_attention_map_grid():
    amap = AttentionMap(weights=np.ones((1, 53, 53)) / 53, mask=np.ones(53, bool), n_t=4, n_i=49)
    assert amap.grid == 7 and amap.patch_grid(3).shape == (7, 7)
