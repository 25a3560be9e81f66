import json
import warnings

import numpy as np
import pytest
import torch
import torch.nn.functional as F
from hypothesis import given, settings, strategies as st
from PIL import Image

from lrtranslate.data import (Dataset, DatasetError, DatasetSpec, center_crop_resize, list_images,
                              load_dataset, make_pair, sample_batch, tensor_to_image, write_manifest)
from lrtranslate.downscale import COLOR_RESOLUTION, DownscaleSpec, difference_map, quantize
from lrtranslate.validation import ConfigurationError

R = COLOR_RESOLUTION


def write_pngs(folder, n, size=(178, 218), seed=0):
    rng = np.random.default_rng(seed)
    folder.mkdir(parents=True, exist_ok=True)
    for i in range(n):
        arr = rng.integers(0, 256, (size[1], size[0], 3), dtype=np.uint8)
        Image.fromarray(arr).save(folder / f"img_{i:02d}.png")


class TestLoadDataset:
    def test_celeba_shaped_pngs(self, tmp_path):
        write_pngs(tmp_path, 16)
        ds = load_dataset(DatasetSpec(str(tmp_path), hr_size=32, lr_size=4))
        assert len(ds) == 16
        assert ds.hr.shape == (16, 3, 32, 32)
        assert ds.lr.shape == (16, 3, 4, 4)
        assert all(e.original_size == (178, 218) for e in ds.manifest)
        assert ds.hr.min() >= -1 and ds.hr.max() <= 1

    def test_center_crop_pixels(self):
        # 4x6 (w x h): the crop must keep rows 1..4
        arr = np.zeros((6, 4, 3), dtype=np.uint8)
        arr[1:5] = 200
        out = center_crop_resize(Image.fromarray(arr), 4)
        assert out.size == (4, 4)
        assert np.all(np.asarray(out) == 200)

    def test_duplicate_names_across_subdirs(self, tmp_path):
        write_pngs(tmp_path / "a", 1)
        write_pngs(tmp_path / "b", 1, seed=1)
        ds = load_dataset(DatasetSpec(str(tmp_path), hr_size=16, lr_size=4))
        assert ds.ids == ["a/img_00.png", "b/img_00.png"]

    def test_undecodable_file_skipped(self, tmp_path):
        write_pngs(tmp_path, 3)
        (tmp_path / "broken.png").write_bytes(b"not an image")
        with pytest.warns(UserWarning, match="undecodable"):
            ds = load_dataset(DatasetSpec(str(tmp_path), hr_size=16, lr_size=4))
        assert len(ds) == 3
        skipped = [e for e in ds.manifest if e.status == "skipped"]
        assert [e.id for e in skipped] == ["broken.png"]

    def test_empty_directory_fatal(self, tmp_path):
        with pytest.raises(DatasetError):
            load_dataset(DatasetSpec(str(tmp_path), hr_size=16, lr_size=4))
        with pytest.raises(DatasetError):
            load_dataset(DatasetSpec(str(tmp_path / "missing"), hr_size=16, lr_size=4))

    def test_single_image_warns(self, tmp_path):
        write_pngs(tmp_path, 1)
        with pytest.warns(UserWarning, match="single image"):
            ds = load_dataset(DatasetSpec(str(tmp_path), hr_size=16, lr_size=4))
        X, _, Y, _ = sample_batch(ds, 4, torch.Generator().manual_seed(0))
        assert torch.equal(X, Y)

    def test_spec_guards(self, tmp_path):
        with pytest.raises(ConfigurationError):
            DatasetSpec(str(tmp_path), hr_size=100, lr_size=4)
        with pytest.raises(ConfigurationError):
            DatasetSpec(str(tmp_path), hr_size=16, lr_size=16)
        with pytest.raises(ConfigurationError):
            DatasetSpec(str(tmp_path), hr_size=16, lr_size=4, split=(0.5, 0.6))

    def test_manifest_round_trip(self, tmp_path):
        data = tmp_path / "data"
        write_pngs(data / "z", 2)
        write_pngs(data / "a", 2, seed=3)
        spec = DatasetSpec(str(data), hr_size=16, lr_size=4)
        ds = load_dataset(spec)
        write_manifest(ds, tmp_path / "manifest.json", spec)
        record = json.loads((tmp_path / "manifest.json").read_text())
        listed = [p.relative_to(data).as_posix() for p in list_images(data)]
        assert [item["id"] for item in record["items"]] == listed == ds.ids
        assert load_dataset(spec).ids == ds.ids

    def test_pixel_round_trip(self, tmp_path):
        arr = np.random.default_rng(0).integers(0, 256, (8, 8, 3), dtype=np.uint8)
        Image.fromarray(arr).save(tmp_path / "x.png")
        with pytest.warns(UserWarning):
            ds = load_dataset(DatasetSpec(str(tmp_path), hr_size=8, lr_size=4))
        assert np.array_equal(np.asarray(tensor_to_image(ds.hr[0])), arr)


class TestPairs:
    def test_constant_image(self):
        X = torch.full((1, 3, 16, 16), 0.3)
        _, x = make_pair(X, DownscaleSpec(4))
        level = round(0.3 / R) * R
        assert torch.allclose(x, torch.full_like(x, level))

    def test_nearest_upsample_inverse(self):
        x = quantize(torch.rand(2, 3, 4, 4) * 2 - 1)
        X = F.interpolate(x, scale_factor=8, mode="nearest")
        _, again = make_pair(X, DownscaleSpec(8))
        assert torch.equal(again, x)

    @pytest.mark.parametrize("lr", [4, 8, 16, 32])
    def test_lr_sizes(self, lr):
        ds = Dataset.from_images(torch.rand(3, 3, 64, 64) * 2 - 1, lr)
        assert ds.lr.shape == (3, 3, lr, lr)
        assert torch.all(difference_map(ds.lr, ds.hr, ds.spec) == 0)

    @settings(max_examples=20, deadline=None)
    @given(st.integers(0, 2**31 - 1), st.sampled_from([4, 8]), st.booleans())
    def test_emitted_pairs_on_grid(self, seed, lr, hflip):
        g = torch.Generator().manual_seed(seed)
        ds = Dataset.from_images(torch.rand(5, 3, 16, 16, generator=g) * 2 - 1, lr, hflip=hflip)
        X, x, Y, y = sample_batch(ds, 6, g)
        assert torch.all(difference_map(x, X, ds.spec) == 0)
        assert torch.all(difference_map(y, Y, ds.spec) == 0)
        for t in (X, x, Y, y):
            assert t.min() >= -1 and t.max() <= 1


class TestSampling:
    def test_batch_of_eight(self, tiny_dataset):
        X, x, Y, y = sample_batch(tiny_dataset, 8, torch.Generator().manual_seed(0))
        assert X.shape == Y.shape == (8, 3, 32, 32)
        assert x.shape == y.shape == (8, 3, 4, 4)

    def test_fixed_seed(self, tiny_dataset):
        a = sample_batch(tiny_dataset, 8, torch.Generator().manual_seed(5))
        b = sample_batch(tiny_dataset, 8, torch.Generator().manual_seed(5))
        assert all(torch.equal(u, v) for u, v in zip(a, b))

    def test_split(self, tiny_dataset):
        train, test = tiny_dataset.split((0.75, 0.25), seed=1)
        assert len(train) == 9 and len(test) == 3
        assert set(train.ids).isdisjoint(test.ids)
        assert tiny_dataset.split((0.75, 0.25), seed=1)[1].ids == test.ids

    def test_from_images_accepts_numpy(self):
        with warnings.catch_warnings():
            warnings.simplefilter("error")
            ds = Dataset.from_images(np.zeros((2, 3, 8, 8), dtype=np.float64), 4)
        assert ds.hr.dtype == torch.float32
