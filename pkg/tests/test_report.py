import math
import xml.etree.ElementTree as ET

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stochwave.experiments import DefectSample, StabilityRow
from stochwave.observables import CurveRow, EnergyCurve, ErrorRow, ErrorTable
from stochwave.report import (
    PlotError,
    PlotSpec,
    build_figure,
    emit_csv,
    emit_svg,
    guide_line,
    read_csv,
)

SVG_NS = "{http://www.w3.org/2000/svg}"


def table(n):
    return ErrorTable("k", [ErrorRow("stm", 0.125, 2.0**-i, 1, 0.1 / i, 0.01, 100)
                            for i in range(1, n + 1)])


def test_empty_table_is_header_only(tmp_path):
    p = emit_csv(ErrorTable(), tmp_path / "e.csv")
    assert p.read_text() == "scheme,h,k,component,rmse,stderr,M\n"


def test_five_rows_six_lines(tmp_path):
    p = emit_csv(table(5), tmp_path / "t.csv")
    assert len(p.read_text().splitlines()) == 6


finite = st.floats(allow_nan=False, allow_infinity=False, width=64)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(finite, finite, finite), min_size=0, max_size=8))
def test_error_table_round_trip(tmp_path_factory, values):
    path = tmp_path_factory.mktemp("rt") / "t.csv"
    src = ErrorTable("k", [ErrorRow("cnm", a, abs(b), 2, c, 0.5, 7) for a, b, c in values])
    emit_csv(src, path)
    assert read_csv(path).rows == src.rows


def test_curve_round_trip_with_exploded_values(tmp_path):
    src = EnergyCurve([CurveRow("stm", 0.1, 1 / 3, 0.0, 2 / 7),
                       CurveRow("sv", 0.2, math.inf, 1e-300, 5e300)])
    back = read_csv(emit_csv(src, tmp_path / "c.csv")).rows
    assert back == src.rows


def test_other_row_types(tmp_path):
    p = emit_csv([DefectSample(0.25, 0, 1e-3, 2e-3, 1e-5)], tmp_path / "d.csv")
    assert p.read_text().splitlines()[0] == "k,n,d1_msq,d2_msq,d1_stderr"
    p = emit_csv([StabilityRow("sv", 0.5, 3.0, True, True, math.inf)], tmp_path / "s.csv")
    assert p.read_text().splitlines()[1] == "sv,0.5,3,true,true,inf"


def test_unwritable_path(tmp_path):
    with pytest.raises(OSError):
        emit_csv(table(2), tmp_path / "missing-dir" / "t.csv")


def spec3(**kw):
    return PlotSpec(series={"stm": ([0.5, 0.25, 0.125], [0.2, 0.1, 0.05])}, **kw)


def test_single_series_is_valid_standalone_svg(tmp_path):
    p = emit_svg(spec3(slopes=[1.0]), tmp_path / "f.svg")
    root = ET.parse(p).getroot()
    assert root.tag == SVG_NS + "svg"
    text = p.read_text()
    assert "<image" not in text
    # only internal references
    for el in root.iter():
        for k, v in el.attrib.items():
            if k.endswith("href"):
                assert v.startswith("#")
    assert "slope 1" in text


def test_svg_is_byte_stable(tmp_path):
    a = emit_svg(spec3(slopes=[0.5]), tmp_path / "a.svg").read_bytes()
    b = emit_svg(spec3(slopes=[0.5]), tmp_path / "b.svg").read_bytes()
    assert a == b


def test_log_plot_rejects_nonpositive(tmp_path):
    with pytest.raises(PlotError):
        emit_svg(PlotSpec(series={"x": ([0.5, 0.25, 0.0], [1, 2, 3])}), tmp_path / "f.svg")
    with pytest.raises(PlotError):
        emit_svg(PlotSpec(series={"x": ([0.5, 0.25, 0.1], [1, -2, 3])}), tmp_path / "f.svg")
    # a linear plot accepts the same data
    emit_svg(PlotSpec(loglog=False, series={"x": ([0.5, 0.25, 0.0], [1, -2, 3])}),
             tmp_path / "g.svg")


def test_empty_series_rejected(tmp_path):
    with pytest.raises(PlotError):
        emit_svg(PlotSpec(), tmp_path / "f.svg")
    with pytest.raises(PlotError):
        emit_svg(PlotSpec(series={"x": ([], [])}), tmp_path / "f.svg")


def test_guide_through_geometric_midpoint():
    x = np.array([0.5, 0.25, 0.125, 0.0625])
    y = np.array([0.3, 0.2, 0.09, 0.05])
    gx, gy = guide_line(x, y, 0.5)
    xm, ym = np.exp(np.log(x).mean()), np.exp(np.log(y).mean())
    # the guide is a straight line in log-log coordinates through (xm, ym)
    slope = np.diff(np.log(gy))[0] / np.diff(np.log(gx))[0]
    assert slope == pytest.approx(0.5)
    assert np.log(gy[0]) + 0.5 * (np.log(xm) - np.log(gx[0])) == pytest.approx(np.log(ym))


def test_decade_ticks():
    fig = build_figure(PlotSpec(series={"a": ([0.3, 0.03], [0.02, 0.0007])}))
    ax = fig.axes[0]
    lo, hi = ax.get_xlim()
    for value in (lo, hi, *ax.get_ylim()):
        assert np.log10(value) == pytest.approx(round(np.log10(value)))
    ticks = [t for t in ax.get_xticks() if lo <= t <= hi]
    assert ticks and all(np.log10(t) == pytest.approx(round(np.log10(t))) for t in ticks)


def test_exploded_points_get_a_marker(tmp_path):
    spec = PlotSpec(series={"sv": ([0.5, 0.25, 0.125], [math.inf, math.inf, 0.01]),
                            "stm": ([0.5, 0.25, 0.125], [0.2, 0.1, 0.05])})
    fig = build_figure(spec)
    labels = [t.get_text() for t in fig.axes[0].get_legend().get_texts()]
    assert "exploded" in labels
    assert "exploded" in emit_svg(spec, tmp_path / "f.svg").read_text()
