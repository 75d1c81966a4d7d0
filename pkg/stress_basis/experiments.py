"""Declarative experiments: presets, config validation, runs, convergence tables and reports.

An experiment is a JSON document validated against `schema/experiment.schema.json`. Presets are
embedded documents of the same shape, so `preset dump` output can be edited and passed back with
`run --config`.
"""
import copy
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Tuple

import jsonschema
import numpy as np

from stress_basis.basis import (
    EigenSolveConfig,
    airy_bump_basis,
    cached_basis,
    require_verified,
    solve_basis_annulus,
    solve_basis_rectangle,
    verify_basis,
)
from stress_basis.config import Config
from stress_basis.constitutive import material_from_dict, strain_energy
from stress_basis.exceptions import NumericalError
from stress_basis.fields import write_field_csv
from stress_basis.files import atomic_write_text
from stress_basis.loading import (
    annulus_m1_loading,
    band_loading,
    gravity_loading,
    no_loading,
    pressurized_annulus,
)
from stress_basis.meshes import build_radial_grid, build_rectangle_mesh, domain_from_dict
from stress_basis.oracles import (
    CesaroLoop,
    cesaro_diagnostic,
    expected_trace_cesaro,
    oracle_from_dict,
)
from stress_basis.particular import body_potential, particular_from_dict
from stress_basis.solvers import PRINCIPLES, solve, solve_strain_energy

logger = logging.getLogger(__name__)

SCHEMA_PATH = Path(__file__).parent.joinpath("schema", "experiment.schema.json")
CONVERGENCE_COLUMNS = ("N", "a_N", "objective", "energy", "E_N")
MIN_SLOPE_POINTS = 5
MONOTONE_TOL = 1e-12

_LOADING_DOMAINS = {
    "traction_free": ("rectangle", "annulus"),
    "pressure": ("annulus",),
    "annulus_m1": ("annulus",),
    "band": ("rectangle",),
    "gravity": ("rectangle",),
}
_RECIPE_LOADINGS = {
    "axisym_airy": ("pressure",),
    "band": ("band",),
    "gravity": ("gravity",),
    "annulus_m1": ("annulus_m1",),
    "oracle": tuple(_LOADING_DOMAINS),
}
_ORACLE_LOADINGS = {
    "none": tuple(_LOADING_DOMAINS),
    "lame": ("pressure",),
    "annulus_m1": ("annulus_m1",),
    "fem": ("traction_free", "band", "gravity"),
}
_ORACLE_CHECKS = ("energy_within", "error_at", "slope", "plateau", "error_ratio")

_ISOTROPIC = {"kind": "isotropic", "Y": 1.0, "nu": 0.33}
_ANNULUS = {"kind": "annulus", "r_a": 0.1, "r_b": 0.3}
_SQUARE = {"kind": "rectangle", "Lx": 1.0, "Ly": 1.0}

# fmt: off
PRESETS = {
    "example1": {
        "name": "example1",
        "description": "Annulus pressurized from the inside, axisymmetric modes, Lame reference",
        "domain": _ANNULUS,
        "mesh": {"elements": 128},
        "material": _ISOTROPIC,
        "loading": {"kind": "pressure", "p_in": 1.0, "p_out": 0.0},
        "particular": {"recipe": "axisym_airy"},
        "basis": {"wavenumbers": [0], "parities": ["cos"]},
        "principles": ["PT", "SE"],
        "N": 60,
        "report_every": 1,
        "oracle": {"kind": "lame", "p": 1.0},
        "slope_window": [10, 60],
        "checks": [
            {"kind": "energy_within", "principle": "SE", "N": 20, "rel": 1e-4},
            {"kind": "monotone", "principle": "SE", "column": "energy"},
            {"kind": "monotone", "principle": "SE", "column": "E_N"},
            {"kind": "slope", "principle": "SE", "target": -1.5, "tol": 0.3, "scale": "full"},
            {"kind": "basis_verified"},
        ],
        "full": {"N": 500, "mesh": {"elements": 640}, "slope_window": [100, 500]},
    },
    "example2_dp": {
        "name": "example2_dp",
        "description": "Square block pressed on the middle halves of both horizontal edges",
        "domain": _SQUARE,
        "mesh": {"elements": 48, "feature_lines": [["x", 0.25], ["x", 0.75]]},
        "material": _ISOTROPIC,
        "loading": {"kind": "band", "p": 1.0, "profile": "discontinuous"},
        "particular": {"recipe": "band"},
        "principles": ["SE"],
        "N": 120,
        "oracle": {"kind": "fem", "refinement": 2},
        "slope_window": [20, 120],
        "checks": [
            {"kind": "monotone", "principle": "SE", "column": "objective"},
            {"kind": "slope", "principle": "SE", "target": -0.22, "tol": 0.15},
        ],
        "full": {"N": 500, "slope_window": [50, 500]},
    },
    "example2_cp": {
        "name": "example2_cp",
        "description": "Square block under a smooth quartic band pressure",
        "domain": _SQUARE,
        "mesh": {"elements": 48, "feature_lines": [["x", 0.25], ["x", 0.75]]},
        "material": _ISOTROPIC,
        "loading": {"kind": "band", "p": 1.0, "profile": "quartic"},
        "particular": {"recipe": "band"},
        "principles": ["SE"],
        "N": 120,
        "oracle": {"kind": "fem", "refinement": 2},
        "slope_window": [20, 120],
        "checks": [
            {"kind": "energy_within", "principle": "SE", "N": 40, "rel": 0.01},
            {"kind": "monotone", "principle": "SE", "column": "objective"},
            {"kind": "slope", "principle": "SE", "target": -0.72, "tol": 0.2},
        ],
        "full": {"N": 500, "slope_window": [50, 500]},
    },
    "example4": {
        "name": "example4",
        "description": "Two-density square block resting on a frictionless table under gravity",
        "domain": _SQUARE,
        "mesh": {"elements": 48, "feature_lines": [["y", 0.5]]},
        "material": _ISOTROPIC,
        "loading": {"kind": "gravity", "rho1": 1.0, "rho2": 3.0, "g": 1.0},
        "particular": {"recipe": "gravity"},
        "principles": ["PT_body", "SE"],
        "N": 120,
        "oracle": {"kind": "fem", "refinement": 2},
        "slope_window": [10, 120],
        "checks": [
            {"kind": "error_at", "principle": "PT_body", "N": 0, "target": 0.04, "tol": 0.01},
            {"kind": "monotone", "principle": "PT_body", "column": "objective"},
            {"kind": "slope", "principle": "PT_body", "target": -0.58, "tol": 0.25},
        ],
        "full": {"N": 500, "slope_window": [50, 500]},
    },
    "example5": {
        "name": "example5",
        "description": "Annulus whose hole carries a net force, wavenumber-one loading",
        "domain": _ANNULUS,
        "mesh": {"elements": 128},
        "material": _ISOTROPIC,
        "loading": {"kind": "annulus_m1"},
        "particular": {"recipe": "annulus_m1"},
        "basis": {"wavenumbers": [1], "parities": ["cos"]},
        "principles": ["PT", "SE"],
        "N": 120,
        "oracle": {"kind": "annulus_m1"},
        "slope_window": [10, 120],
        "checks": [
            {"kind": "plateau", "principle": "PT", "n_low": 40, "min_ratio": 0.8},
            {"kind": "error_ratio", "principle": "SE", "against": "PT", "max_ratio": 0.1},
            {"kind": "cesaro_trace", "principle": "PT", "rel": 0.05},
            {"kind": "cesaro_zero", "principle": "SE", "tol": 1e-3},
        ],
        "full": {"N": 200, "mesh": {"elements": 256}},
    },
    "example7_dc": {
        "name": "example7_dc",
        "description": "Two-modulus block pressed on both horizontal edges, jump in Y",
        "domain": _SQUARE,
        "mesh": {"elements": 48},
        "material": {"kind": "isotropic", "Y": "discontinuous", "Y1": 1.0, "Y2": 3.0,
                     "interface": 0.5, "nu": 0.33},
        "loading": {"kind": "band", "p": 1.0, "profile": "uniform"},
        "particular": {"recipe": "band"},
        "principles": ["SE"],
        "N": 120,
        "oracle": {"kind": "fem", "refinement": 2},
        "slope_window": [20, 120],
        "checks": [
            {"kind": "monotone", "principle": "SE", "column": "objective"},
            {"kind": "slope", "principle": "SE", "target": -0.22, "tol": 0.2},
        ],
        "full": {"N": 500, "slope_window": [50, 500]},
    },
    "example7_ramp": {
        "name": "example7_ramp",
        "description": "Two-modulus block pressed on both horizontal edges, ramped Y",
        "domain": _SQUARE,
        "mesh": {"elements": 40, "feature_lines": [["y", 0.45], ["y", 0.55]]},
        "material": {"kind": "isotropic", "Y": "ramp", "Y1": 1.0, "Y2": 3.0,
                     "interface": 0.5, "zeta": 0.05, "nu": 0.33},
        "loading": {"kind": "band", "p": 1.0, "profile": "uniform"},
        "particular": {"recipe": "band"},
        "principles": ["SE"],
        "N": 120,
        "oracle": {"kind": "fem", "refinement": 2},
        "slope_window": [20, 120],
        "checks": [
            {"kind": "energy_within", "principle": "SE", "N": 40, "rel": 1e-3},
            {"kind": "monotone", "principle": "SE", "column": "objective"},
            {"kind": "slope", "principle": "SE", "target": -0.69, "tol": 0.15, "scale": "desk"},
            {"kind": "slope", "principle": "SE", "target": -0.42, "tol": 0.2, "scale": "full"},
        ],
        "full": {"N": 500, "slope_window": [50, 500]},
    },
    "example8_square_ortho": {
        "name": "example8_square_ortho",
        "description": "Orthotropic square block under a smooth band pressure",
        "domain": _SQUARE,
        "mesh": {"elements": 48, "feature_lines": [["x", 0.25], ["x", 0.75]]},
        "material": {"kind": "orthotropic", "Yx": 1.0, "Yy": 2.0, "nu_xy": 0.33, "Gxy": 1.0},
        "loading": {"kind": "band", "p": 1.0, "profile": "quartic"},
        "particular": {"recipe": "band"},
        "principles": ["SE"],
        "N": 36,
        "oracle": {"kind": "fem", "refinement": 2},
        "checks": [
            {"kind": "monotone", "principle": "SE", "column": "objective"},
            {"kind": "bump_span", "principle": "SE", "n_modes": 36, "rel": 0.01},
        ],
        "full": {"N": 120},
    },
}
# fmt: on


def _load_schema():
    with open(SCHEMA_PATH, encoding="utf-8") as schema_file:
        return json.load(schema_file)


def validate_document(doc):
    """Raise ValueError naming the first schema violation of an experiment document"""
    try:
        jsonschema.validate(instance=doc, schema=_load_schema())
    except jsonschema.ValidationError as err:
        where = "/".join(str(part) for part in err.absolute_path) or "<root>"
        raise ValueError(f"Invalid experiment config at {where}: {err.message}") from err


def _merged(doc, full):
    """The document with its `full` block applied, nested blocks merged key by key"""
    doc = copy.deepcopy(doc)
    overrides = doc.pop("full", {})
    if not full:
        return doc
    for key, value in overrides.items():
        if isinstance(value, dict) and isinstance(doc.get(key), dict):
            doc[key] = {**doc[key], **value}
        else:
            doc[key] = value
    return doc


@dataclass(frozen=True)
class ExperimentConfig:
    """A validated experiment; `scale` says whether the full-scale overrides were applied"""

    name: str
    domain: dict
    mesh: dict
    material: dict
    loading: dict
    particular: dict
    principles: Tuple[str, ...]
    n: int
    report_every: int = 1
    oracle: dict = field(default_factory=lambda: {"kind": "none"})
    basis: dict = field(default_factory=dict)
    slope_window: Optional[Tuple[int, int]] = None
    checks: Tuple[dict, ...] = ()
    output: Optional[str] = None
    description: str = ""
    scale: str = "desk"

    @classmethod
    def from_dict(cls, doc, full=False):
        validate_document(doc)
        merged = _merged(doc, full)
        validate_document(merged)
        window = merged.get("slope_window")
        config = cls(
            name=merged["name"],
            domain=merged["domain"],
            mesh=merged["mesh"],
            material=merged["material"],
            loading=merged["loading"],
            particular=merged["particular"],
            principles=tuple(merged["principles"]),
            n=int(merged["N"]),
            report_every=int(merged.get("report_every", 1)),
            oracle=merged.get("oracle", {"kind": "none"}),
            basis=merged.get("basis", {}),
            slope_window=tuple(window) if window else None,
            checks=tuple(merged.get("checks", ())),
            output=merged.get("output"),
            description=merged.get("description", ""),
            scale="full" if full else "desk",
        )
        config.check_combinations()
        return config

    @classmethod
    def from_file(cls, path, full=False):
        with open(path, encoding="utf-8") as config_file:
            try:
                doc = json.load(config_file)
            except json.JSONDecodeError as err:
                raise ValueError(f"{path} is not valid JSON: {err}") from err
        return cls.from_dict(doc, full)

    @classmethod
    def preset(cls, name, full=False):
        return cls.from_dict(preset_document(name), full)

    def check_combinations(self):
        """Reject recipe, loading, oracle and check combinations that are not defined"""
        domain_kind = self.domain["kind"]
        loading_kind = self.loading["kind"]
        recipe = self.particular["recipe"]
        oracle_kind = self.oracle.get("kind", "none")
        if domain_kind not in _LOADING_DOMAINS[loading_kind]:
            raise ValueError(f"Loading '{loading_kind}' is not defined on a {domain_kind}")
        if loading_kind not in _RECIPE_LOADINGS[recipe]:
            raise ValueError(f"Particular recipe '{recipe}' does not answer loading '{loading_kind}'")
        if loading_kind not in _ORACLE_LOADINGS[oracle_kind]:
            raise ValueError(f"Oracle '{oracle_kind}' does not answer loading '{loading_kind}'")
        if oracle_kind == "fem" and domain_kind != "rectangle":
            raise ValueError("The displacement oracle needs a rectangle")
        if recipe == "oracle" and oracle_kind == "none":
            raise ValueError("The oracle recipe needs an oracle")
        if self.basis and domain_kind == "rectangle":
            raise ValueError("Basis wavenumbers and parities only apply to an annulus")
        if self.slope_window is not None and self.slope_window[0] >= self.slope_window[1]:
            raise ValueError(f"Slope window {list(self.slope_window)} is empty")
        for check in self.checks:
            self._check_check(check, oracle_kind, domain_kind)

    def _check_check(self, check, oracle_kind, domain_kind):
        kind = check["kind"]
        for key in ("principle", "against"):
            if key in check and check[key] not in self.principles:
                raise ValueError(
                    f"Check '{kind}' refers to principle {check[key]} which is not run"
                )
        if kind in _ORACLE_CHECKS and oracle_kind == "none":
            raise ValueError(f"Check '{kind}' needs an oracle")
        if kind == "slope" and self.slope_window is None:
            raise ValueError("Slope checks need a slope_window")
        if kind.startswith("cesaro") and domain_kind != "annulus":
            raise ValueError(f"Check '{kind}' needs an annulus")
        if kind == "bump_span" and (domain_kind != "rectangle" or "SE" not in self.principles):
            raise ValueError("The bump span check needs a rectangle and the SE principle")
        if kind != "basis_verified" and "principle" not in check:
            raise ValueError(f"Check '{kind}' needs a principle")
        for key in ("N", "n_low", "n_high"):
            if check.get(key, 0) > self.n:
                raise ValueError(f"Check '{kind}' asks for {key}={check[key]} beyond N={self.n}")

    def to_dict(self):
        doc = {
            "name": self.name,
            "description": self.description,
            "domain": self.domain,
            "mesh": self.mesh,
            "material": self.material,
            "loading": self.loading,
            "particular": self.particular,
            "basis": self.basis,
            "principles": list(self.principles),
            "N": self.n,
            "report_every": self.report_every,
            "oracle": self.oracle,
            "checks": list(self.checks),
        }
        if self.slope_window is not None:
            doc["slope_window"] = list(self.slope_window)
        if self.output is not None:
            doc["output"] = self.output
        return doc


def preset_document(name):
    """A deep copy of a preset, ValueError listing the presets for unknown names"""
    if name not in PRESETS:
        raise ValueError(f"Unknown preset '{name}', available presets: {', '.join(PRESETS)}")
    return copy.deepcopy(PRESETS[name])


def list_presets(machine=False):
    if not PRESETS:
        raise RuntimeError("The preset registry is empty")
    if machine:
        return "\n".join(PRESETS)
    width = max(len(name) for name in PRESETS)
    lines = ["Available presets:"]
    for name, doc in PRESETS.items():
        lines.append(f"  {name.ljust(width)}  {doc.get('description', '')}")
    return "\n".join(lines)


def dump_preset(name):
    return json.dumps(preset_document(name), indent=2) + "\n"


def fit_slope(ns, errors, window):
    """Least-squares slope of log E_N against log N over N in the closed window"""
    low, high = window
    ns = np.asarray(ns, dtype=float)
    errors = np.asarray(errors, dtype=float)
    inside = (ns >= low) & (ns <= high) & (ns > 0)
    if np.count_nonzero(inside) < MIN_SLOPE_POINTS:
        raise ValueError(
            f"Slope window [{low}, {high}] holds {np.count_nonzero(inside)} points, "
            f"at least {MIN_SLOPE_POINTS} are needed"
        )
    selected = errors[inside]
    if np.any(~(selected > 0)):
        raise ValueError("Slope fits need strictly positive errors")
    slope, _ = np.polyfit(np.log(ns[inside]), np.log(selected), 1)
    return float(slope)


def loading_from_dict(domain, spec):
    kind = spec["kind"]
    if kind == "traction_free":
        return no_loading(domain)
    if kind == "pressure":
        return pressurized_annulus(domain, float(spec.get("p_in", 1.0)), float(spec.get("p_out", 0.0)))
    if kind == "annulus_m1":
        return annulus_m1_loading(domain)
    if kind == "band":
        return band_loading(domain, float(spec.get("p", 1.0)), spec.get("profile", "discontinuous"))
    if kind == "gravity":
        return gravity_loading(
            domain,
            float(spec.get("rho1", 1.0)),
            float(spec.get("rho2", 3.0)),
            float(spec.get("g", 1.0)),
        )
    raise ValueError(f"Unknown loading '{kind}'")


def build_mesh(config, loading, material):
    """Radial grid or rectangle mesh whose edges carry every declared and implied line"""
    domain = loading.domain
    if domain.kind == "annulus":
        return build_radial_grid(domain, int(config.mesh.get("elements", Config.ANNULUS_ELEMENTS)))
    elements = int(config.mesh.get("elements", Config.RECTANGLE_ELEMENTS))
    nx = int(config.mesh.get("nx", elements))
    ny = int(config.mesh.get("ny", elements))
    lines = {(axis, float(value)) for axis, value in config.mesh.get("feature_lines", [])}
    lines |= set(loading.jump_lines) | set(material.jump_lines)
    if loading.body_force is not None:
        lines |= set(loading.body_force.jump_lines)
    return build_rectangle_mesh(domain, nx, ny, tuple(sorted(lines)))


def build_basis(config, mesh, use_cache=True):
    """The eigenbasis the experiment expands in, through the basis cache"""
    n_modes = max(int(config.basis.get("n_modes", config.n)), 1)
    if mesh.radial:
        wavenumbers = config.basis.get("wavenumbers", list(range(Config.MAX_WAVENUMBER + 1)))
        parities = tuple(config.basis.get("parities", ("cos", "sin")))
        cfg = EigenSolveConfig(n_modes, resolution=mesh.shape[0], parities=parities)
        backend = "eigen-annulus"
        extra = "m" + "_".join(str(m) for m in sorted(set(wavenumbers))) + "-" + "".join(parities)

        def build():
            return solve_basis_annulus(mesh, wavenumbers, cfg)

    else:
        cfg = EigenSolveConfig(n_modes)
        backend, extra = "eigen-rectangle", ""

        def build():
            return solve_basis_rectangle(mesh, cfg)

    if not use_cache:
        return require_verified(build())
    return cached_basis(mesh, backend, n_modes, build, extra)


@dataclass(frozen=True, eq=False)
class Setup:
    """Everything an experiment builds before solving"""

    config: ExperimentConfig
    material: object
    loading: object
    mesh: object
    oracle: object


def prepare(config):
    """Material, loading, mesh and oracle of an experiment"""
    material = material_from_dict(config.material)
    domain = domain_from_dict(config.domain)
    loading = loading_from_dict(domain, config.loading)
    mesh = build_mesh(config, loading, material)
    oracle_spec = dict(config.oracle)
    if oracle_spec.get("kind") == "lame":
        oracle_spec.setdefault("p", config.loading.get("p_in", 1.0))
        oracle_spec.setdefault("p_out", config.loading.get("p_out", 0.0))
    oracle = oracle_from_dict(mesh, oracle_spec, loading, material)
    return Setup(config, material, loading, mesh, oracle)


def build_oracle(config):
    """Compute the reference stress and store it in the cache directory as a field CSV"""
    setup = prepare(config)
    if setup.oracle is None:
        raise ValueError(f"Experiment '{config.name}' declares no oracle")
    path = Config.CACHE_DIR.joinpath(f"oracle-{config.name}-{setup.mesh.fingerprint[:16]}.csv")
    provenance = json.dumps(
        {"experiment": config.name, "mesh": setup.mesh.fingerprint, **setup.oracle.describe()},
        sort_keys=True,
        default=_plain,
    )
    write_field_csv(setup.oracle.field, path, provenance)
    logger.info("Oracle %s for %s written to %s", setup.oracle.method, config.name, path)
    return path


def _cell(value):
    if value is None:
        return ""
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return f"{float(value):.17g}"


def _plain(value):
    """numpy scalars and arrays as JSON values"""
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, Path):
        return str(value)
    raise TypeError(f"{type(value).__name__} is not JSON serializable")


def convergence_csv(rows):
    lines = [",".join(CONVERGENCE_COLUMNS)]
    for row in rows:
        lines.append(",".join(_cell(row[column]) for column in CONVERGENCE_COLUMNS))
    return "\n".join(lines) + "\n"


@dataclass
class ExperimentReport:
    """What a run produced: per-principle summaries, check outcomes and file locations"""

    config: ExperimentConfig
    out_dir: Path
    basis: dict
    principles: dict
    checks: list
    extra: dict = field(default_factory=dict)

    @property
    def passed(self):
        return all(check["passed"] is not False for check in self.checks)

    def to_dict(self):
        return {
            "experiment": self.config.name,
            "scale": self.config.scale,
            "config": self.config.to_dict(),
            "basis": self.basis,
            "tolerances": {
                "degenerate_gap": Config.DEGENERATE_GAP,
                "l2": Config.L2_TOLERANCE,
                "h1": Config.H1_TOLERANCE,
                "residual": Config.RESIDUAL_TOLERANCE,
            },
            "slope_window": list(self.config.slope_window) if self.config.slope_window else None,
            "principles": self.principles,
            "checks": self.checks,
            "passed": self.passed,
            **self.extra,
        }


class _Run:
    """Solutions of one experiment and the check evaluators that read them"""

    def __init__(self, setup, particular, basis, approximations, rows, slopes):
        self.setup = setup
        self.particular = particular
        self.basis = basis
        self.approximations = approximations
        self.rows = rows
        self.slopes = slopes

    @property
    def truth(self):
        return None if self.setup.oracle is None else self.setup.oracle.field

    def row(self, principle, n=None):
        rows = self.rows[principle]
        if n is None:
            return rows[-1]
        for row in rows:
            if row["N"] == n:
                return row
        raise ValueError(f"N={n} was not reported for {principle}")

    def evaluate(self, check):
        result = {key: value for key, value in check.items() if key != "scale"}
        scale = check.get("scale", "any")
        if scale not in ("any", self.setup.config.scale):
            result.update(passed=None, skipped=f"runs at {scale} scale only")
            return result
        try:
            passed, value = getattr(self, f"_check_{check['kind']}")(check)
        except ValueError as err:
            result.update(passed=None, skipped=str(err))
            return result
        result.update(passed=bool(passed), value=value)
        return result

    def _check_monotone(self, check):
        column = check.get("column", "objective")
        values = [row[column] for row in self.rows[check["principle"]]]
        if any(value is None for value in values):
            raise ValueError(f"Column {column} is empty")
        rises = [
            (later - earlier) / max(abs(earlier), 1.0)
            for earlier, later in zip(values, values[1:])
        ]
        worst = max(rises, default=0.0)
        return worst <= MONOTONE_TOL, worst

    def _check_energy_within(self, check):
        reference = strain_energy(self.setup.material, self.truth)
        energy = self.row(check["principle"], check.get("N"))["energy"]
        relative = abs(energy - reference) / reference
        return relative <= check["rel"], {"energy": energy, "reference": reference, "rel": relative}

    def _check_error_at(self, check):
        error = self.row(check["principle"], check.get("N"))["E_N"]
        return abs(error - check["target"]) <= check["tol"], error

    def _check_slope(self, check):
        slope = self.slopes.get(check["principle"])
        if slope is None:
            raise ValueError("No slope was fitted")
        return abs(slope - check["target"]) <= check["tol"], slope

    def _check_plateau(self, check):
        low = self.row(check["principle"], check["n_low"])["E_N"]
        high = self.row(check["principle"], check.get("n_high"))["E_N"]
        ratio = high / low
        return ratio >= check["min_ratio"], ratio

    def _check_error_ratio(self, check):
        error = self.row(check["principle"], check.get("N"))["E_N"]
        against = self.row(check["against"], check.get("N"))["E_N"]
        ratio = error / against
        return ratio <= check["max_ratio"], ratio

    def _loop(self, check):
        domain = self.setup.mesh.domain
        return CesaroLoop.circle(check.get("radius", 0.5 * (domain.r_a + domain.r_b)))

    def _check_cesaro_trace(self, check):
        sigma = self.approximations[check["principle"]].sigma_n
        f_1, f_2 = cesaro_diagnostic(sigma, self._loop(check), self.setup.material)
        expected = expected_trace_cesaro(self.setup.loading, self.setup.material)
        relative = abs(f_2 - expected) / abs(expected)
        return relative <= check.get("rel", 0.05), {"F1": f_1, "F2": f_2, "expected": expected}

    def _check_cesaro_zero(self, check):
        sigma = self.approximations[check["principle"]].sigma_n
        f_1, f_2 = cesaro_diagnostic(sigma, self._loop(check), self.setup.material)
        return max(abs(f_1), abs(f_2)) <= check.get("tol", 1e-3), {"F1": f_1, "F2": f_2}

    def _check_bump_span(self, check):
        n_modes = check.get("n_modes", self.setup.config.n)
        bumps = airy_bump_basis(self.setup.mesh, n_modes)
        approximation = solve_strain_energy(self.particular, bumps, self.setup.material, bumps.size)
        bump_energy = approximation.objectives[approximation.n]
        eigen_energy = self.row(check["principle"])["objective"]
        relative = abs(bump_energy - eigen_energy) / abs(eigen_energy)
        return relative <= check.get("rel", 0.01), {
            "bump_modes": bumps.size,
            "bump_energy": bump_energy,
            "eigen_energy": eigen_energy,
            "rel": relative,
        }

    def _check_basis_verified(self, check):
        del check
        report = self.basis.provenance.get("verification") or verify_basis(self.basis).to_dict()
        return report["passed"], report


def _principle_dir(out_dir, principle):
    return Path(out_dir).joinpath(principle)


def _write_principle(out_dir, config, approximation, rows, basis):
    directory = _principle_dir(out_dir, approximation.principle)
    atomic_write_text(directory.joinpath("convergence.csv"), convergence_csv(rows))
    tag = f"{config.name} {approximation.principle} N={approximation.n} basis={basis.fingerprint}"
    write_field_csv(approximation.sigma_n, directory.joinpath("sigma_N.csv"), tag)
    write_field_csv(approximation.particular.field, directory.joinpath("sigma_p.csv"), tag)
    write_field_csv(approximation.sigma_h, directory.joinpath("sigma_h.csv"), tag)


def _summary(approximation, rows, slope, slope_note):
    final = rows[-1]
    diagnostics = approximation.diagnostics
    summary = {
        "N": approximation.n,
        "objective": final["objective"],
        "energy": final["energy"],
        "E_N": final["E_N"],
        "slope": slope,
    }
    if slope_note:
        summary["slope_note"] = slope_note
    if "condition" in diagnostics and approximation.n in diagnostics["condition"]:
        summary["condition"] = diagnostics["condition"][approximation.n]
        summary["galerkin_residual"] = diagnostics["galerkin_residual"][approximation.n]
    return summary


def _run(config, out_dir, use_cache):
    started = time.perf_counter()
    setup = prepare(config)
    particular_spec = {**config.loading, **config.particular}
    particular = particular_from_dict(setup.mesh, particular_spec, setup.oracle)
    basis = build_basis(config, setup.mesh, use_cache)
    potential = body_potential(setup.mesh, setup.loading) if "PT_body" in config.principles else None
    if setup.material.kind != "isotropic" or not setup.material.homogeneous:
        for principle in config.principles:
            if principle != "SE":
                logger.warning(
                    "%s assumes a homogeneous isotropic body; %s is neither", principle, config.name
                )

    approximations, all_rows, slopes, summaries = {}, {}, {}, {}
    for principle in config.principles:
        approximation = solve(
            principle,
            particular,
            basis,
            config.n,
            material=setup.material,
            potential=potential,
            report_every=config.report_every,
        )
        rows = approximation.rows(setup.material, setup.oracle.field if setup.oracle else None)
        slope, note = None, None
        if setup.oracle is not None and config.slope_window is not None:
            try:
                slope = fit_slope(
                    [row["N"] for row in rows], [row["E_N"] for row in rows], config.slope_window
                )
            except ValueError as err:
                note = str(err)
                logger.warning("No slope for %s %s: %s", config.name, principle, err)
        approximations[principle] = approximation
        all_rows[principle] = rows
        slopes[principle] = slope
        summaries[principle] = _summary(approximation, rows, slope, note)
        _write_principle(out_dir, config, approximation, rows, basis)

    run = _Run(setup, particular, basis, approximations, all_rows, slopes)
    checks = [run.evaluate(check) for check in config.checks]
    extra = {"loading": setup.loading.describe(), "particular": particular.describe()}
    if setup.oracle is not None:
        extra["oracle"] = setup.oracle.describe()
        write_field_csv(
            setup.oracle.field,
            Path(out_dir).joinpath("sigma_oracle.csv"),
            f"{config.name} oracle {setup.oracle.method}",
        )
    report = ExperimentReport(
        config=config,
        out_dir=Path(out_dir),
        basis={
            "fingerprint": basis.fingerprint,
            "provenance_hash": basis.digest,
            "backend": basis.backend,
            "modes": basis.size,
            "mesh": setup.mesh.describe(),
            "lowest_eigenvalues": [float(v) for v in basis.eigenvalues[:3]],
        },
        principles=summaries,
        checks=checks,
        extra=extra,
    )
    atomic_write_text(
        Path(out_dir).joinpath("report.json"),
        json.dumps(report.to_dict(), indent=2, sort_keys=True, default=_plain) + "\n",
    )
    logger.info(
        "Experiment %s finished in %.1f s, checks %s, outputs in %s",
        config.name,
        time.perf_counter() - started,
        "passed" if report.passed else "FAILED",
        out_dir,
    )
    for check in checks:
        if check["passed"] is False:
            logger.warning("Check failed in %s: %s", config.name, check)
    return report


def run_experiment(config, out_dir=None, use_cache=True):
    """Run every principle of an experiment and write its tables, fields and report"""
    if isinstance(config, dict):
        config = ExperimentConfig.from_dict(config)
    for principle in config.principles:
        if principle not in PRINCIPLES:
            raise ValueError(f"Unknown principle '{principle}'")
    out_dir = Path(out_dir or config.output or Path("results").joinpath(config.name))
    logger.info("Running %s (%s scale) into %s", config.name, config.scale, out_dir)
    try:
        return _run(config, out_dir, use_cache)
    except NumericalError as err:
        raise NumericalError(f"Experiment '{config.name}': {err}", err.residual) from err
    except ValueError as err:
        raise type(err)(f"Experiment '{config.name}': {err}") from err


__all__ = [
    "ExperimentConfig",
    "ExperimentReport",
    "PRESETS",
    "build_basis",
    "build_oracle",
    "dump_preset",
    "fit_slope",
    "list_presets",
    "preset_document",
    "run_experiment",
    "validate_document",
]
