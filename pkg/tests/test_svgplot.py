"""Deterministic SVG rendering and the CSV-driven plot kinds."""

import pytest

from isswalk.errors import SchemaMismatch
from isswalk.svgplot import Figure, _nice_ticks, plot_csv

TRACE_CSV = (
    "schema_version,step,domain,t,"
    + ",".join(f"x{i}" for i in range(14)) + ","
    + ",".join(f"u{i}" for i in range(4)) + ","
    + ",".join(f"d{i}" for i in range(4))
    + ",tau,eta0,eta1,lam_lead_x,lam_lead_z,lam_trail_x,lam_trail_z\n"
    + "\n".join(
        f"1,0,ds,{0.001 * k}," + ",".join("0.1" for _ in range(14)) + ","
        + ",".join("0.2" for _ in range(4)) + ","
        + ",".join("0.01" for _ in range(4))
        + f",{0.001 * k},{0.3 - 0.01 * k},{0.1},1,100,1,50"
        for k in range(5)
    )
    + "\n"
)


def test_render_is_deterministic():
    def build():
        f = Figure("x", "y", "t")
        f.line([0, 1, 2], [0.0, 1.5, 0.7], label="a")
        f.bar(0.0, 0.5, 3.0)
        return f.render()

    assert build() == build()


def test_render_is_valid_svg_with_labels():
    f = Figure("time (s)", "value", "demo")
    f.line([0, 1], [2, 3], label="series")
    s = f.render()
    assert s.startswith("<svg ")
    assert s.rstrip().endswith("</svg>")
    for needle in ("time (s)", "value", "demo", "series", "polyline"):
        assert needle in s


def test_degenerate_ranges_handled():
    f = Figure("x", "y")
    f.line([1.0, 1.0], [2.0, 2.0])  # zero-span data
    s = f.render()
    assert "<polyline" in s


def test_nice_ticks_cover_range():
    ticks = _nice_ticks(0.0, 1.0)
    assert ticks[0] >= 0.0 and ticks[-1] <= 1.0 + 1e-12
    assert len(ticks) >= 3
    assert 0.0 in ticks


def test_plot_trace_kind():
    s = plot_csv(TRACE_CSV, "trace")
    assert "eta0" in s and "eta1" in s


def test_plot_phase_portrait_kind():
    s = plot_csv(TRACE_CSV, "phase_portrait")
    assert "torso" in s and "knee_l" in s


def test_plot_histogram_kind():
    s = plot_csv(TRACE_CSV, "histogram")
    assert "<rect" in s


def test_plot_gain_curve_kind():
    csv = ("delta,mean,ci_lo,ci_hi\n"
           "0,1e-6,5e-7,2e-6\n"
           "0.5,0.01,0.008,0.012\n"
           "1.0,0.02,0.016,0.024\n")
    s = plot_csv(csv, "gain_curve")
    assert "95% CI lo" in s


def test_plot_missing_columns_rejected():
    with pytest.raises(SchemaMismatch):
        plot_csv("a,b\n1,2\n", "gain_curve")


def test_plot_unknown_kind_rejected():
    with pytest.raises(SchemaMismatch):
        plot_csv(TRACE_CSV, "surface")
