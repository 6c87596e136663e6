import numpy as np
import pytest
from numpy.testing import assert_allclose

from lodct.errors import ValidationError
from lodct.evaluate import (
    EvalReport,
    difference_image,
    emit_comparison_table,
    rmse_hu,
    window_to_uint16,
    write_png16,
    write_report_csv,
)


def test_rmse_zero_for_identical(rng):
    x = rng.normal(size=(8, 8))
    assert rmse_hu(x, x) == 0.0


def test_rmse_constant_offset(rng):
    x = rng.normal(size=(8, 8))
    assert rmse_hu(x + 7.25, x) == pytest.approx(7.25, rel=1e-12)
    assert rmse_hu(x - 7.25, x) == pytest.approx(7.25, rel=1e-12)


def test_rmse_hand_computed():
    a = np.array([[1.0, 2.0], [3.0, 4.0]])
    b = np.array([[0.0, 4.0], [1.0, 4.0]])
    # diffs 1, -2, 2, 0 -> sqrt(9/4)
    assert rmse_hu(a, b) == pytest.approx(np.sqrt(9.0 / 4.0), rel=1e-14)


def test_rmse_properties(rng):
    x = rng.normal(size=(6, 6))
    y = rng.normal(size=(6, 6))
    assert rmse_hu(x, y) == pytest.approx(rmse_hu(y, x), rel=1e-14)
    assert rmse_hu(x, y) > 0.0


def test_rmse_shape_mismatch():
    with pytest.raises(ValidationError):
        rmse_hu(np.zeros((4, 4)), np.zeros((5, 4)))


def test_difference_image_cases(rng):
    x = rng.normal(size=(5, 5))
    assert np.all(difference_image(x, x) == 0.0)
    assert_allclose(difference_image(-x, x), 2 * np.abs(x), rtol=1e-14)
    y = rng.normal(size=(5, 5))
    assert_allclose(difference_image(x, y), np.abs(x - y), rtol=1e-14)


def test_table_single_report():
    table = emit_comparison_table([EvalReport(1e4, "fbp", 47.3)], fmt="csv")
    lines = table.strip().split("\n")
    assert lines[0] == "dose,fbp"
    assert lines[1] == "10000,47.3"


def test_table_two_doses_four_methods():
    reports = []
    vals = {("1e5"): [41.3, 19.1, 21.8, 19.2], ("1e4"): [47.3, 27.9, 27.7, 24.8]}
    for dose, row in [(1e5, vals["1e5"]), (1e4, vals["1e4"])]:
        for m, v in zip(["fbp", "pwls-ep", "pwls-dct", "pwls-st"], row):
            reports.append(EvalReport(dose, m, v))
    md = emit_comparison_table(reports, fmt="markdown")
    lines = md.strip().split("\n")
    assert lines[0] == "| dose | fbp | pwls-ep | pwls-dct | pwls-st |"
    assert len(lines) == 4  # header, rule, two dose rows
    assert lines[2].startswith("| 100000 | 41.3 | 19.1")
    assert lines[3].startswith("| 10000 | 47.3 | 27.9")


def test_table_missing_cell_rendered_as_dash():
    reports = [EvalReport(1e4, "fbp", 47.3), EvalReport(1e4, "pwls-st", 24.8),
               EvalReport(1e3, "fbp", 101.9)]
    md = emit_comparison_table(reports)
    row_1e3 = md.strip().split("\n")[-1]
    assert "—" in row_1e3


def test_table_requires_reports():
    with pytest.raises(ValidationError):
        emit_comparison_table([])


def test_report_csv_header(tmp_path):
    p = tmp_path / "report.csv"
    write_report_csv([EvalReport(1e4, "fbp", 47.25, 1.5)], p)
    text = p.read_text()
    assert text.splitlines()[0] == "dose,method,rmse_hu,runtime_s"
    assert text.splitlines()[1] == "10000,fbp,47.250000,1.500"


def test_window_clips_without_altering_data():
    img = np.array([[700.0, 800.0], [1000.0, 1300.0]])
    scaled = window_to_uint16(img, (800.0, 1200.0))
    assert scaled[0, 0] == 0 and scaled[0, 1] == 0
    assert scaled[1, 1] == 65535
    assert scaled[1, 0] == round((1000 - 800) / 400 * 65535)


def test_png16_round_trip(tmp_path, rng):
    from PIL import Image

    img = rng.uniform(700.0, 1300.0, size=(16, 16))
    p = tmp_path / "img.png"
    write_png16(img, p)
    back = np.array(Image.open(p))
    assert back.dtype == np.uint16 or back.dtype == np.int32
    assert_allclose(np.asarray(back, dtype=np.uint16), window_to_uint16(img))
    meta = (tmp_path / "img.png.meta.txt").read_text()
    assert "window_lo_hu = 800.0" in meta
    # max windowed pixel equals the windowed max of the difference data
    assert np.asarray(back).max() == window_to_uint16(img).max()


def test_negative_rmse_rejected():
    with pytest.raises(ValidationError):
        EvalReport(1e4, "fbp", -1.0)
