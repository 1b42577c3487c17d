import numpy as np

from levelopt import io
from levelopt.levelset import disk_level, extract_contour
from levelopt.mesh import generate_structured


def test_vtk_roundtrip(tmp_path):
    m = generate_structured(6)
    y = np.sin(m.vertices[:, 0])
    io.write_vtk(tmp_path / "f.vtk", m, {"y": y, "g": disk_level(m)})
    text = (tmp_path / "f.vtk").read_text().splitlines()
    assert text[0] == "# vtk DataFile Version 3.0" and text[2] == "ASCII"
    assert f"POINTS {m.n} double" in text and f"CELLS {m.nt} {4 * m.nt}" in text
    assert f"POINT_DATA {m.n}" in text
    back = io.read_vtk_scalars(tmp_path / "f.vtk")
    assert np.array_equal(back["y"], y)
    assert np.array_equal(back["g"], disk_level(m))


def test_polyline_csv_roundtrip(tmp_path):
    m = generate_structured(30)
    lines = extract_contour(m, disk_level(m))
    io.write_polylines_csv(tmp_path / "c.csv", lines)
    assert (tmp_path / "c.csv").read_text().splitlines()[0] == "polyline_id,t_or_index,x,y"
    back = io.read_polylines_csv(tmp_path / "c.csv")
    assert len(back) == len(lines)
    assert np.array_equal(back[0], lines[0])
    io.write_polylines_csv(tmp_path / "e.csv", [])
    assert io.read_polylines_csv(tmp_path / "e.csv") == []
