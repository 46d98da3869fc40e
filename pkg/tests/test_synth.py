import json

import numpy as np
import pytest

import semicount as sc
from semicount.synth import SceneSpec, gen_dataset, gen_scene, spec_from_dict


class TestGenScene:
    def test_empty_scene(self):
        spec = SceneSpec(size=128, count_range=(0, 0))
        record = gen_scene(spec, np.random.default_rng(0))
        assert record.annotations.count == 0
        assert record.image.shape == (128, 128, 3)

    def test_exact_count(self):
        spec = SceneSpec(size=128, count_range=(50, 50))
        record = gen_scene(spec, np.random.default_rng(1))
        assert record.annotations.count == 50

    def test_annotations_inside_image(self):
        spec = SceneSpec(size=96, count_range=(30, 60))
        record = gen_scene(spec, np.random.default_rng(2))
        assert record.annotations.x.min() >= 0 and record.annotations.x.max() < 96
        assert record.annotations.y.min() >= 0 and record.annotations.y.max() < 96

    def test_pixels_in_unit_range(self):
        record = gen_scene(SceneSpec(size=96), np.random.default_rng(3))
        assert record.image.min() >= 0.0 and record.image.max() <= 1.0

    def test_density_pipeline_conservation(self):
        spec = SceneSpec(size=128, count_range=(20, 40))
        record = gen_scene(spec, np.random.default_rng(4))
        n = record.annotations.count
        dmap = sc.fixed_kernel_density(record.annotations, record.shape)
        assert abs(dmap.total - n) <= 1e-4 * n

    def test_gradient_concentrates_heads(self):
        spec = SceneSpec(size=128, count_range=(200, 200), gradient_direction="down",
                         gradient_strength=1.0)
        record = gen_scene(spec, np.random.default_rng(5))
        upper = (record.annotations.y < 64).sum()
        lower = (record.annotations.y >= 64).sum()
        assert lower > 2 * upper

    def test_bad_spec(self):
        with pytest.raises(ValueError):
            SceneSpec(gradient_direction="diagonal")
        with pytest.raises(ValueError):
            SceneSpec(count_range=(5, 2))


class TestGenDataset:
    def test_writes_expected_files(self, tmp_path):
        spec = SceneSpec(size=96, count_range=(3, 9))
        manifest = gen_dataset(spec, 8, seed=0, out_dir=tmp_path)
        assert len(manifest["images"]) == 8
        assert len(list(tmp_path.glob("*.png"))) == 8
        assert len(list(tmp_path.glob("*.pts"))) == 8
        payload = json.loads((tmp_path / "manifest.json").read_text())
        assert payload["seed"] == 0
        assert spec_from_dict(payload["spec"]) == spec

    def test_byte_identical_across_runs(self, tmp_path):
        spec = SceneSpec(size=96, count_range=(3, 9))
        gen_dataset(spec, 4, seed=7, out_dir=tmp_path / "a")
        gen_dataset(spec, 4, seed=7, out_dir=tmp_path / "b")
        for path_a in sorted((tmp_path / "a").iterdir()):
            path_b = tmp_path / "b" / path_a.name
            assert path_a.read_bytes() == path_b.read_bytes()

    def test_different_seeds_differ(self, tmp_path):
        spec = SceneSpec(size=96, count_range=(3, 9))
        gen_dataset(spec, 2, seed=1, out_dir=tmp_path / "a")
        gen_dataset(spec, 2, seed=2, out_dir=tmp_path / "b")
        names = [p.name for p in sorted((tmp_path / "a").glob("*.png"))]
        assert any(
            (tmp_path / "a" / n).read_bytes() != (tmp_path / "b" / n).read_bytes() for n in names
        )

    def test_sidecars_match_manifest_counts(self, tmp_path):
        from semicount.data import load_scene

        spec = SceneSpec(size=96, count_range=(2, 6))
        manifest = gen_dataset(spec, 6, seed=3, out_dir=tmp_path)
        for entry in manifest["images"]:
            record = load_scene(tmp_path / entry["file"])
            assert record.annotations.count == entry["count"]

    def test_count_histogram_spans_range(self, tmp_path):
        spec = SceneSpec(size=96, count_range=(3, 6))
        manifest = gen_dataset(spec, 60, seed=11, out_dir=tmp_path)
        counts = {entry["count"] for entry in manifest["images"]}
        assert counts == {3, 4, 5, 6}
