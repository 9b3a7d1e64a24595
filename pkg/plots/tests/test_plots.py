"""Figure rendering from literal CSV fixtures (no simulator import)."""

import pytest

from deffuant_plots import FigureRequest, SchemaMismatch, read_csv, render
from deffuant_plots.cli import main

SWEEP = """# deffuant-sweep v1
# config=abc123def456 seed=19 replicas=100
# theta_c=0.5
# crossing=0.52083333333333337
theta,p,blocked_replica_fraction,mean_blocked_edge_fraction,mean_abs_dev,mean_max_gap,weak_fraction,strong_fraction,undecided_fraction
0.29999999999999999,nan,1,0.41999999999999998,0.2,0.97999999999999998,0,0,0
0.45000000000000001,nan,1,0.02,0.05,0.88,0,0,0
0.5,nan,0.68000000000000005,0.001,0.01,0.5,0.050000000000000003,0.27000000000000002,0
0.55000000000000004,nan,0,0,0.004,0.0089999999999999993,0.29999999999999999,0.69999999999999996,0
0.69999999999999996,nan,0,0,0.001,0.002,0.10000000000000001,0.90000000000000002,0
"""

SWEEP_EMPTY = """# deffuant-sweep v1
# config=abc123def456 seed=19 replicas=0
# theta_c=0.5
# crossing=nan
theta,p,blocked_replica_fraction,mean_blocked_edge_fraction,mean_abs_dev,mean_max_gap,weak_fraction,strong_fraction,undecided_fraction
"""

TRACE = """# deffuant-eventlog v1
time,edge,accepted,pre_u,pre_v,u,v
0.10000000000000001,0,1,0.90000000000000002,0.10000000000000001,0,1
0.25,1,1,0.5,0.29999999999999999,1,2
0.40000000000000002,2,1,0.40000000000000002,0.59999999999999998,2,3
0.55000000000000004,3,0,0.5,0.5,3,0
0.69999999999999996,0,1,0.5,0.40000000000000002,0,1
0.84999999999999998,1,1,0.45000000000000001,0.5,1,2
"""

TRACE_NO_ENDPOINTS = """# deffuant-eventlog v1
time,edge,accepted,pre_u,pre_v
0.10000000000000001,0,1,0.90000000000000002,0.10000000000000001
"""

PROFILE = """# deffuant-sadprofile v1
# target=7
vertex,weight
5,0.125
6,0.25
7,0.5
8,0.125
"""

BOUNDS = """# deffuant-bounds v1
distribution,theta_c,bound_abs,bound_opt,bend,ratio
Uniform(lower=0.0; upper=1.0),0.5,0.75,0.75000000000031064,0.5,1.0
"""


@pytest.fixture
def files(tmp_path):
    paths = {}
    for name, text in [("sweep.csv", SWEEP), ("empty.csv", SWEEP_EMPTY),
                       ("trace.csv", TRACE), ("thin.csv", TRACE_NO_ENDPOINTS),
                       ("profile.csv", PROFILE), ("bounds.csv", BOUNDS)]:
        p = tmp_path / name
        p.write_text(text)
        paths[name] = str(p)
    return paths


def test_read_csv_parses_meta_and_rows(files):
    meta, cols, rows = read_csv(files["sweep.csv"], "deffuant-sweep v1")
    assert meta["theta_c"] == "0.5"
    assert meta["seed"] == "19"
    assert cols[0] == "theta"
    assert len(rows) == 5


def test_read_csv_rejects_wrong_schema(files):
    with pytest.raises(SchemaMismatch):
        read_csv(files["sweep.csv"], "deffuant-bounds v1")


def test_sweep_figure_annotates_theta_c(files, tmp_path):
    out = str(tmp_path / "sweep.svg")
    render(FigureRequest("sweep", files["sweep.csv"], out))
    body = (tmp_path / "sweep.svg").read_text()
    assert "theta_c = 0.5" in body
    assert "blocked edges" in body


def test_sweep_rerender_is_byte_identical(files, tmp_path):
    a, b = str(tmp_path / "a.svg"), str(tmp_path / "b.svg")
    render(FigureRequest("sweep", files["sweep.csv"], a))
    render(FigureRequest("sweep", files["sweep.csv"], b))
    assert (tmp_path / "a.svg").read_bytes() == (tmp_path / "b.svg").read_bytes()


def test_sweep_empty_draws_no_data_placeholder(files, tmp_path):
    out = str(tmp_path / "empty.svg")
    assert main(["--kind", "sweep", "--in", files["empty.csv"],
                 "--out", out]) == 0
    assert "no data" in (tmp_path / "empty.svg").read_text()


def test_sweep_takes_theta_c_from_bounds_file(files, tmp_path):
    out = str(tmp_path / "sweep.svg")
    render(FigureRequest("sweep", files["sweep.csv"], out,
                         bounds=files["bounds.csv"]))
    assert "theta_c = 0.5" in (tmp_path / "sweep.svg").read_text()


def test_trajectory_and_raster_render(files, tmp_path):
    for kind in ("trajectory", "raster"):
        out = str(tmp_path / f"{kind}.svg")
        render(FigureRequest(kind, files["trace.csv"], out))
        assert (tmp_path / f"{kind}.svg").stat().st_size > 0


def test_trajectory_requires_endpoint_columns(files, tmp_path):
    code = main(["--kind", "trajectory", "--in", files["thin.csv"],
                 "--out", str(tmp_path / "x.svg")])
    assert code == 4


def test_sad_profile_marks_target(files, tmp_path):
    out = str(tmp_path / "profile.svg")
    render(FigureRequest("sad_profile", files["profile.csv"], out))
    assert "target 7" in (tmp_path / "profile.svg").read_text()


def test_bounds_table_renders(files, tmp_path):
    out = str(tmp_path / "bounds.svg")
    render(FigureRequest("bounds_table", files["bounds.csv"], out))
    assert "0.75" in (tmp_path / "bounds.svg").read_text()


def test_schema_mismatch_exits_nonzero(files, tmp_path):
    code = main(["--kind", "sweep", "--in", files["bounds.csv"],
                 "--out", str(tmp_path / "x.svg")])
    assert code == 4


def test_missing_file_exits_2(tmp_path):
    assert main(["--kind", "sweep", "--in", str(tmp_path / "nope.csv"),
                 "--out", str(tmp_path / "x.svg")]) == 2


def test_invalid_kind_rejected(files, tmp_path):
    with pytest.raises(ValueError):
        render(FigureRequest("pie", files["sweep.csv"],
                             str(tmp_path / "x.svg")))


def test_png_output_is_deterministic(files, tmp_path):
    a, b = str(tmp_path / "a.png"), str(tmp_path / "b.png")
    render(FigureRequest("raster", files["trace.csv"], a))
    render(FigureRequest("raster", files["trace.csv"], b))
    assert (tmp_path / "a.png").read_bytes() == (tmp_path / "b.png").read_bytes()
