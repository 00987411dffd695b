import math

from causal_audit import svg


def test_line_chart_breaks_on_missing_values():
    out = svg.line_chart({"a": [(0, 1.0), (1, None), (2, 3.0), (3, 2.0)]}, "t", "x", "y", hline=0.0)
    assert out.startswith("<svg") and out.rstrip().endswith("</svg>")
    assert out.count("<polyline") == 1
    assert out == svg.line_chart({"a": [(0, 1.0), (1, None), (2, 3.0), (3, 2.0)]}, "t", "x", "y", hline=0.0)


def test_histogram_and_forest_tolerate_empty_and_nan():
    h = svg.histogram({"g1": [0.0, 2.0], "g0": [1.0, 1.0]}, [0.0, 0.5, 1.0], "overlap", "score")
    assert h.count('fill-opacity="0.45"') == 3
    f = svg.forest_plot([("race IPW", -0.3, -0.4, -0.2), ("gender IPW", None, None, None),
                         ("x", math.nan, math.nan, math.nan)], "ATE")
    assert "race IPW" in f and "gender IPW" in f


def test_labels_are_escaped():
    assert "&lt;b&gt;" in svg.line_chart({"<b>": [(0, 1), (1, 2)]}, "t", "x", "y")
