"""Unit tests for experiment configs, presets, slope fits and experiment runs"""
import copy
import json
import os
import sys
import numpy as np
import pytest
import mock
from stress_basis.config import Config
from stress_basis.exceptions import NumericalError
from stress_basis.experiments import (
    PRESETS,
    ExperimentConfig,
    build_oracle,
    convergence_csv,
    dump_preset,
    fit_slope,
    list_presets,
    preset_document,
    run_experiment,
    validate_document,
)

tests_path = os.path.dirname(os.path.abspath(__file__))
src_path = tests_path + "/../"
sys.path.insert(0, src_path)

TINY = {
    "name": "tiny_lame",
    "description": "Pressurized annulus on a coarse grid",
    "domain": {"kind": "annulus", "r_a": 0.1, "r_b": 0.3},
    "mesh": {"elements": 32},
    "material": {"kind": "isotropic", "Y": 1.0, "nu": 0.33},
    "loading": {"kind": "pressure", "p_in": 1.0, "p_out": 0.0},
    "particular": {"recipe": "axisym_airy"},
    "basis": {"wavenumbers": [0], "parities": ["cos"]},
    "principles": ["SE", "PT"],
    "N": 6,
    "oracle": {"kind": "lame", "p": 1.0},
    "slope_window": [1, 6],
    "checks": [
        {"kind": "monotone", "principle": "SE", "column": "energy"},
        {"kind": "slope", "principle": "SE", "target": 0.0, "tol": 1000.0},
        {"kind": "energy_within", "principle": "SE", "N": 6, "rel": 0.5, "scale": "full"},
        {"kind": "error_at", "principle": "PT", "N": 6, "target": 5.0, "tol": 0.01},
        {"kind": "basis_verified"},
    ],
}


def _tiny(**changes):
    doc = copy.deepcopy(TINY)
    doc.update(changes)
    return doc


@pytest.fixture(name="tiny_report", scope="module")
def fixture_tiny_report(tmp_path_factory):
    cache = tmp_path_factory.mktemp("cache")
    out_dir = tmp_path_factory.mktemp("results")
    with mock.patch.object(Config, "CACHE_DIR", cache):
        report = run_experiment(TINY, out_dir)
    return report, out_dir, cache


def test_fit_slope():
    ns = np.arange(1, 21)
    assert fit_slope(ns, ns**-1.5, (1, 20)) == pytest.approx(-1.5)
    assert fit_slope(ns, 3.0 * ns**-0.5, (5, 20)) == pytest.approx(-0.5)
    assert fit_slope(ns, np.full(20, 0.2), (1, 20)) == pytest.approx(0.0, abs=1e-12)


def test_fit_slope_errors():
    ns = np.arange(0, 21)
    with pytest.raises(ValueError):
        # only N = 1..4 inside
        fit_slope(ns, np.ones(21), (0, 4))
    errors = np.ones(21)
    errors[10] = 0.0
    with pytest.raises(ValueError):
        fit_slope(ns, errors, (1, 20))


def test_list_presets():
    assert list_presets(machine=True).splitlines() == list(PRESETS)
    assert len(PRESETS) == 8
    human = list_presets()
    assert human.splitlines()[0] == "Available presets:"
    assert all(name in human for name in PRESETS)


@pytest.mark.parametrize("name", list(PRESETS))
def test_presets_validate(name):
    desk = ExperimentConfig.preset(name)
    full = ExperimentConfig.preset(name, full=True)
    assert desk.scale == "desk"
    assert full.scale == "full"
    assert full.n >= desk.n
    assert json.loads(dump_preset(name)) == PRESETS[name]


def test_full_scale_merges_nested_blocks():
    desk = ExperimentConfig.preset("example1")
    full = ExperimentConfig.preset("example1", full=True)
    assert (desk.n, desk.mesh["elements"], desk.slope_window) == (60, 128, (10, 60))
    assert (full.n, full.mesh["elements"], full.slope_window) == (500, 640, (100, 500))


def test_unknown_preset():
    with pytest.raises(ValueError) as excinfo:
        preset_document("example3")
    assert "example1" in str(excinfo.value)
    # callers get copies
    preset_document("example1")["N"] = 1
    assert PRESETS["example1"]["N"] == 60


# fmt: off
schema_cases = [
    {k: v for k, v in TINY.items() if k != "N"},
    _tiny(N=-1),
    _tiny(colour="blue"),
    _tiny(principles=["SE", "SE"]),
    _tiny(loading={"kind": "wind"}),
    _tiny(mesh={"elements": 2}),
    _tiny(name="has spaces"),
]
# fmt: on


@pytest.mark.parametrize("doc", schema_cases)
def test_schema_violations(doc):
    with pytest.raises(ValueError) as excinfo:
        validate_document(doc)
    assert "Invalid experiment config" in str(excinfo.value)


# fmt: off
combination_cases = [
    _tiny(loading={"kind": "band", "p": 1.0}),
    _tiny(particular={"recipe": "gravity"}),
    _tiny(oracle={"kind": "annulus_m1"}),
    _tiny(oracle={"kind": "fem"}),
    _tiny(domain={"kind": "rectangle"}, loading={"kind": "traction_free"},
          particular={"recipe": "oracle"}, oracle={"kind": "none"}, checks=[]),
    _tiny(slope_window=[6, 6]),
    _tiny(slope_window=None, checks=[{"kind": "slope", "principle": "SE", "target": -1.0, "tol": 1.0}]),
    _tiny(checks=[{"kind": "monotone", "principle": "PT_body"}]),
    _tiny(checks=[{"kind": "monotone"}]),
    _tiny(checks=[{"kind": "energy_within", "principle": "SE", "N": 7, "rel": 0.1}]),
    _tiny(oracle={"kind": "none"}),
]
# fmt: on


@pytest.mark.parametrize("doc", combination_cases)
def test_undefined_combinations(doc):
    doc = {key: value for key, value in doc.items() if value is not None}
    with pytest.raises(ValueError):
        ExperimentConfig.from_dict(doc)


def test_rectangle_rejects_basis_block():
    doc = copy.deepcopy(PRESETS["example2_cp"])
    doc["basis"] = {"wavenumbers": [0]}
    with pytest.raises(ValueError):
        ExperimentConfig.from_dict(doc)


def test_config_from_file(tmp_path):
    path = tmp_path.joinpath("tiny.json")
    path.write_text(json.dumps(TINY), encoding="utf-8")
    config = ExperimentConfig.from_file(path)
    assert config.principles == ("SE", "PT")
    assert config.to_dict()["slope_window"] == [1, 6]
    broken = tmp_path.joinpath("broken.json")
    broken.write_text("{not json", encoding="utf-8")
    with pytest.raises(ValueError):
        ExperimentConfig.from_file(broken)


def test_convergence_csv():
    rows = [
        {"N": 0, "a_N": 0.0, "objective": 2.5, "energy": None, "E_N": None},
        {"N": 1, "a_N": -0.25, "objective": 1.0, "energy": 1.0, "E_N": 0.5},
    ]
    lines = convergence_csv(rows).splitlines()
    assert lines == ["N,a_N,objective,energy,E_N", "0,0,2.5,,", "1,-0.25,1,1,0.5"]


def test_run_writes_outputs(tiny_report):
    _, out_dir, cache = tiny_report
    for principle in ("SE", "PT"):
        directory = out_dir.joinpath(principle)
        for name in ("convergence.csv", "sigma_N.csv", "sigma_p.csv", "sigma_h.csv"):
            assert directory.joinpath(name).exists(), f"{principle}/{name} missing"
        header = directory.joinpath("convergence.csv").read_text(encoding="utf-8").splitlines()
        assert header[0] == "N,a_N,objective,energy,E_N"
        assert len(header) == 8
    assert out_dir.joinpath("sigma_oracle.csv").read_text(encoding="utf-8").startswith("#")
    assert list(cache.glob("*")), "basis was not cached"


def test_run_report(tiny_report):
    report, out_dir, _ = tiny_report
    doc = json.loads(out_dir.joinpath("report.json").read_text(encoding="utf-8"))
    assert doc["experiment"] == "tiny_lame"
    assert doc["scale"] == "desk"
    assert doc["basis"]["modes"] == 6
    assert doc["tolerances"]["l2"] == Config.L2_TOLERANCE
    assert doc["oracle"]["method"] == "analytic"
    assert set(doc["principles"]) == {"SE", "PT"}
    assert isinstance(doc["principles"]["SE"]["slope"], float)
    assert doc["principles"]["SE"]["condition"] >= 1.0
    statuses = [check["passed"] for check in doc["checks"]]
    assert statuses == [True, True, None, False, True]
    assert "full scale" in doc["checks"][2]["skipped"]
    assert doc["passed"] is False
    assert report.passed is False


def test_run_summary(tiny_report):
    report, _, _ = tiny_report
    summary = report.principles["SE"]
    assert summary["N"] == 6
    assert 0.0 <= summary["E_N"] < 1.0


def test_run_rejects_unknown_principle():
    config = ExperimentConfig.from_dict(TINY)
    broken = ExperimentConfig(**{**config.__dict__, "principles": ("SE", "LSQ")})
    with pytest.raises(ValueError):
        run_experiment(broken)


def test_build_oracle(tmp_path):
    with mock.patch.object(Config, "CACHE_DIR", tmp_path):
        path = build_oracle(ExperimentConfig.from_dict(TINY))
        assert path.exists()
        assert path.name.startswith("oracle-tiny_lame-")
        no_oracle = _tiny(oracle={"kind": "none"}, checks=[])
        with pytest.raises(ValueError):
            build_oracle(ExperimentConfig.from_dict(no_oracle))


def test_rerun_is_byte_identical(tmp_path):
    """A second run, served from the basis cache, rewrites identical tables and report"""
    outputs = [tmp_path.joinpath("first"), tmp_path.joinpath("second")]
    with mock.patch.object(Config, "CACHE_DIR", tmp_path.joinpath("cache")):
        for out_dir in outputs:
            run_experiment(TINY, out_dir)
    names = sorted(str(p.relative_to(outputs[0])) for p in outputs[0].rglob("*") if p.is_file())
    assert "report.json" in names
    assert "SE/convergence.csv" in names
    assert names == sorted(
        str(p.relative_to(outputs[1])) for p in outputs[1].rglob("*") if p.is_file()
    )
    for name in names:
        first = outputs[0].joinpath(name).read_bytes()
        assert first == outputs[1].joinpath(name).read_bytes(), f"{name} differs between runs"
    report = json.loads(outputs[0].joinpath("report.json").read_text(encoding="utf-8"))
    assert not {"time", "timestamp", "elapsed", "started"} & set(report)


def test_failing_basis_stops_the_run(tmp_path):
    failing = mock.Mock(passed=False, checks={"h1_orthogonality": False}, max_offdiag_h1=1e-3)
    out_dir = tmp_path.joinpath("results")
    with mock.patch.object(Config, "CACHE_DIR", tmp_path.joinpath("cache")), mock.patch(
        "stress_basis.basis.verify_basis", return_value=failing
    ), mock.patch("stress_basis.experiments.solve") as solve:
        with pytest.raises(NumericalError) as excinfo:
            run_experiment(TINY, out_dir)
    assert "h1_orthogonality" in str(excinfo.value)
    solve.assert_not_called()
    assert not out_dir.joinpath("report.json").exists()


def test_annulus_wavenumber_one_preset(tmp_path):
    """The hole-force preset end to end at desk scale"""
    with mock.patch.object(Config, "CACHE_DIR", tmp_path.joinpath("cache")):
        report = run_experiment(ExperimentConfig.preset("example5"), tmp_path.joinpath("example5"))
    assert report.extra["oracle"]["method"] == "ode-bvp"
    assert report.extra["oracle"]["condition_rank"] == 4
    outcomes = {check["kind"]: check for check in report.checks}
    assert set(outcomes) == {"plateau", "error_ratio", "cesaro_trace", "cesaro_zero"}
    for kind, check in outcomes.items():
        assert check["passed"] is True, f"{kind}: {check}"
    summary = report.principles
    assert summary["SE"]["E_N"] < summary["PT"]["E_N"]


# fmt: off
desk_check_cases = [
    ("example1", "energy_within", {"N": 20, "rel": 1e-4}),
    ("example2_cp", "energy_within", {"N": 40, "rel": 0.01}),
    ("example7_ramp", "slope", {"target": -0.69, "tol": 0.15, "scale": "desk"}),
]
# fmt: on


@pytest.mark.parametrize("name,kind,expected", desk_check_cases)
def test_preset_checks_sit_where_they_hold(name, kind, expected):
    checks = [c for c in ExperimentConfig.preset(name).checks if c["kind"] == kind]
    assert any(expected.items() <= check.items() for check in checks), f"{name}: {checks}"
    # every check keeps the tolerance it started with
    tolerances = [check.get("rel", check.get("tol")) for check in checks]
    assert all(tol <= {"energy_within": 0.01, "slope": 0.2}[kind] for tol in tolerances)
