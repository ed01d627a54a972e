import numpy as np
import pytest

from medpnet.cloud_io import (
    DatasetManifest,
    PairRecord,
    read_cloud,
    read_manifest,
    read_ply,
    read_xyz,
    write_cloud,
    write_manifest,
    write_ply,
    write_xyz,
)
from medpnet.errors import MissingFile, ParseError
from medpnet.geometry import PointCloud

from conftest import random_transform


@pytest.fixture
def cloud(rng):
    return PointCloud(rng.uniform(-400, 400, size=(200, 3)))


class TestCloudFiles:
    @pytest.mark.parametrize("ext", ["ply", "xyz"])
    def test_round_trip(self, cloud, tmp_path, ext):
        path = tmp_path / f"c.{ext}"
        write_cloud(path, cloud)
        back = read_cloud(path)
        assert np.max(np.abs(back.points - cloud.points)) < 1e-6

    def test_ply_header(self, cloud, tmp_path):
        path = tmp_path / "c.ply"
        write_ply(path, cloud)
        head = path.read_text().splitlines()[:7]
        assert head[0] == "ply"
        assert head[1] == "format ascii 1.0"
        assert head[2] == f"element vertex {len(cloud)}"
        assert head[3:6] == ["property float x", "property float y", "property float z"]
        assert head[6] == "end_header"

    def test_empty_file_raises_parse_error(self, tmp_path):
        path = tmp_path / "e.ply"
        path.write_text("")
        with pytest.raises(ParseError):
            read_ply(path)
        path2 = tmp_path / "e.xyz"
        path2.write_text("")
        with pytest.raises(ParseError):
            read_xyz(path2)

    def test_parse_error_reports_line(self, tmp_path):
        path = tmp_path / "bad.xyz"
        path.write_text("1 2 3\n4 five 6\n")
        with pytest.raises(ParseError) as e:
            read_xyz(path)
        assert e.value.line == 2

    def test_truncated_ply_body(self, tmp_path):
        path = tmp_path / "t.ply"
        path.write_text("ply\nformat ascii 1.0\nelement vertex 3\nproperty float x\nproperty float y\nproperty float z\nend_header\n0 0 0\n")
        with pytest.raises(ParseError):
            read_ply(path)

    def test_ply_with_extra_properties(self, tmp_path):
        text = (
            "ply\nformat ascii 1.0\nelement vertex 2\n"
            "property float x\nproperty float y\nproperty float z\nproperty uchar red\n"
            "end_header\n1 2 3 255\n4 5 6 255\n"
        )
        path = tmp_path / "rgb.ply"
        path.write_text(text)
        cloud = read_ply(path)
        assert np.allclose(cloud.points, [[1, 2, 3], [4, 5, 6]])

    def test_missing_file(self, tmp_path):
        with pytest.raises(MissingFile):
            read_ply(tmp_path / "nope.ply")


class TestManifest:
    def test_round_trip(self, rng, cloud, tmp_path):
        records = []
        for i in range(3):
            x_path, y_path = f"x{i}.ply", f"y{i}.ply"
            write_ply(tmp_path / x_path, cloud)
            write_ply(tmp_path / y_path, cloud)
            records.append(
                PairRecord(
                    x_path=x_path,
                    y_path=y_path,
                    transform=random_transform(rng),
                    unit="millimeters",
                    seed=i,
                    split="train" if i < 2 else "test",
                )
            )
        manifest = DatasetManifest(pairs=tuple(records))
        path = tmp_path / "manifest.json"
        write_manifest(path, manifest)
        back = read_manifest(path)
        assert len(back.pairs) == 3
        for a, b in zip(back.pairs, records):
            assert a.x_path == b.x_path and a.y_path == b.y_path
            assert a.unit == b.unit and a.seed == b.seed and a.split == b.split
            assert np.max(np.abs(a.transform.as_matrix() - b.transform.as_matrix())) < 1e-15
        assert [p.seed for p in back.split("train")] == [0, 1]

    def test_json_field_names(self, rng, cloud, tmp_path):
        import json

        write_ply(tmp_path / "x.ply", cloud)
        write_ply(tmp_path / "y.ply", cloud)
        rec = PairRecord("x.ply", "y.ply", random_transform(rng), "millimeters", 0, "train")
        path = tmp_path / "m.json"
        write_manifest(path, DatasetManifest(pairs=(rec,)))
        payload = json.loads(path.read_text())
        assert set(payload) == {"pairs"}
        assert set(payload["pairs"][0]) == {"x_path", "y_path", "transform", "unit", "seed", "split"}
        assert len(payload["pairs"][0]["transform"]) == 12

    def test_missing_referenced_file(self, rng, tmp_path):
        rec = PairRecord("gone.ply", "gone2.ply", random_transform(rng), "millimeters", 0, "train")
        path = tmp_path / "m.json"
        write_manifest(path, DatasetManifest(pairs=(rec,)))
        with pytest.raises(MissingFile):
            read_manifest(path)
        # Validation can be skipped explicitly.
        back = read_manifest(path, validate_files=False)
        assert back.pairs[0].x_path == "gone.ply"
