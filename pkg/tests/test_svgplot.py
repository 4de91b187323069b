"""SVG chart generation: well-formed markup, series layout, report plots."""

import xml.etree.ElementTree as ET

import pytest

from padrec.bench import BenchRow
from padrec.errors import RangeError
from padrec.svgplot import line_chart, plot_report, sweep_chart, write_svg


def _row(depth, tau, speedup=None, temperature=0.0, width=2, seed=0):
    return BenchRow(
        config_id=f"sd-b{depth}-w{width}-t{temperature:g}", seed=seed,
        ablation="full", temperature=temperature, depth=depth, width=width,
        tau=tau, target_calls=10.0, draft_calls=10.0 * depth, committed=tau * 10.0,
        wall_ms_sd=1.0 if speedup is not None else None,
        wall_ms_ar=speedup if speedup is not None else None,
        speedup=speedup, recall_at_10=0.1, ndcg_at_10=0.05, flag_rate=0.0)


def _tags(markup):
    root = ET.fromstring(markup)
    assert root.tag.endswith("svg")
    return [el.tag.split("}")[-1] for el in root.iter()]


def test_line_chart_parses_and_counts():
    svg = line_chart([1, 2, 4], [("tau", [1.0, 1.5, 2.0]), ("speedup", [0.9, 1.1, 1.3])],
                     title="sweep", x_label="depth", y_label="value")
    tags = _tags(svg)
    # one data polyline per series plus a legend line segment each
    assert tags.count("polyline") == 2
    assert tags.count("circle") == 6


def test_line_chart_escapes_text():
    svg = line_chart([0, 1], [("a<b & c", [0.0, 1.0])], title="x<y & z")
    root = ET.fromstring(svg)
    texts = [el.text for el in root.iter() if el.tag.endswith("text")]
    assert "x<y & z" in texts


def test_line_chart_flat_series_still_renders():
    svg = line_chart([1, 2], [("tau", [1.0, 1.0])])
    ET.fromstring(svg)


def test_line_chart_validates():
    with pytest.raises(RangeError):
        line_chart([], [("tau", [])])
    with pytest.raises(RangeError):
        line_chart([1, 2], [("tau", [1.0])])


def test_sweep_chart_dual_series_when_timed():
    rows = [_row(1, 1.2, speedup=0.8), _row(2, 1.6, speedup=1.1)]
    assert _tags(sweep_chart(rows)).count("polyline") == 2
    rows = [_row(1, 1.2), _row(2, 1.6)]
    assert _tags(sweep_chart(rows)).count("polyline") == 1


def test_sweep_chart_needs_sd_rows():
    with pytest.raises(RangeError):
        sweep_chart([])


def test_plot_report_writes_group_files(tmp_path):
    rows = [_row(1, 1.2), _row(2, 1.5), _row(2, 1.4, temperature=0.5)]
    files = plot_report(rows, tmp_path)
    assert len(files) == 2
    for f in files:
        ET.fromstring(open(f, encoding="utf-8").read())


def test_write_svg_roundtrip(tmp_path):
    path = tmp_path / "c.svg"
    svg = line_chart([1, 2], [("tau", [1.0, 2.0])])
    write_svg(svg, path)
    assert path.read_text(encoding="utf-8") == svg
