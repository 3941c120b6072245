"""File formats: rule files, schema sidecars, scenario configs, CSV reports.

Everything is plain text.  Rules and configs use INI syntax (configparser);
datasets and reports are CSV.  Floats are written with repr() so that
save/load round-trips are exact and repeated runs are byte-identical.

Rule file layout (sections use dotted prefixes for nesting)::

    [meta]
    format = twophase-rule-v1
    varpi = 0.3
    kappa = 0.0447509...

    [rule]
    kind = truncated          ; or uniform / mixture
    tau = 1.87...

    [rule.lambda]             ; sqrt(sum_j coefs_j * sigma_j(v)^2)
    n_components = 2
    coefs = 1.0 0.0

    [rule.lambda.1]           ; one fitted moment model per component
    v_min = -3.1 0.0
    v_max = 2.9 1.0
    gamma1 = ...
    gamma2 = ...

Schema sidecar::

    [schema]
    problem = ate_binary      ; mean / multi_mean / linear_coef / ate_binary /
                              ; ate_multi / classification_triple
    v = y t z1
    u = x
    r1 = pilot                ; optional column names
    r2 = sampled
    rho = rho_n
    n_arms = 3                ; ate_multi only

Scenario config: a single [scenario] section whose keys mirror ScenarioSpec.
"""

import configparser
import io

import numpy as np
import pandas as pd

from .moments import BasisSpec, MomentModel
from .problems import make_problem
from .rules import Mixture, SigmaCombo, Truncated, Uniform
from .simulate import ScenarioSpec

RULE_FORMAT = "twophase-rule-v1"


def _fmt(x):
    return repr(float(x))


def _fmt_vec(v):
    return " ".join(_fmt(x) for x in np.asarray(v, dtype=float).ravel())


def _parse_vec(s):
    return np.array([float(tok) for tok in s.split()], dtype=float)


# ---------------------------------------------------------------------------
# rule files
# ---------------------------------------------------------------------------

def _lambda_parts(lam):
    """Split a truncated rule's lambda into (moment models, coefficients)."""
    if isinstance(lam, SigmaCombo):
        fns, coefs = lam.sigma_fns, lam.coefs
    else:
        fns, coefs = [lam], np.ones(1)
    models = []
    for fn in fns:
        owner = getattr(fn, "__self__", None)
        if not isinstance(owner, MomentModel):
            raise ValueError(
                "only rules built from fitted moment models can be serialized"
            )
        models.append(owner)
    return models, coefs


def _write_rule(cp, prefix, rule):
    cp[prefix] = {}
    if isinstance(rule, Uniform):
        cp[prefix]["kind"] = "uniform"
        cp[prefix]["c"] = _fmt(rule.c)
    elif isinstance(rule, Truncated):
        cp[prefix]["kind"] = "truncated"
        cp[prefix]["tau"] = _fmt(rule.tau)
        models, coefs = _lambda_parts(rule.lam)
        lam_sec = f"{prefix}.lambda"
        cp[lam_sec] = {
            "n_components": str(len(models)),
            "coefs": _fmt_vec(coefs),
        }
        for j, model in enumerate(models, start=1):
            cp[f"{lam_sec}.{j}"] = {
                "v_min": _fmt_vec(model.basis.v_min),
                "v_max": _fmt_vec(model.basis.v_max),
                "gamma1": _fmt_vec(model.gamma1),
                "gamma2": _fmt_vec(model.gamma2),
            }
    elif isinstance(rule, Mixture):
        cp[prefix]["kind"] = "mixture"
        cp[prefix]["weights"] = _fmt_vec(rule.weights)
        _write_rule(cp, f"{prefix}.base", rule.base)
        for j, comp in enumerate(rule.components, start=1):
            _write_rule(cp, f"{prefix}.component.{j}", comp)
    else:
        raise ValueError(f"cannot serialize rule of type {type(rule).__name__}")


def _read_model(cp, sec):
    basis = BasisSpec(v_min=_parse_vec(cp[sec]["v_min"]), v_max=_parse_vec(cp[sec]["v_max"]))
    return MomentModel(
        gamma1=_parse_vec(cp[sec]["gamma1"]),
        gamma2=_parse_vec(cp[sec]["gamma2"]),
        basis=basis,
    )


def _read_rule(cp, prefix):
    kind = cp[prefix]["kind"]
    if kind == "uniform":
        return Uniform(float(cp[prefix]["c"]))
    if kind == "truncated":
        lam_sec = f"{prefix}.lambda"
        n_comp = int(cp[lam_sec]["n_components"])
        coefs = _parse_vec(cp[lam_sec]["coefs"])
        models = [_read_model(cp, f"{lam_sec}.{j}") for j in range(1, n_comp + 1)]
        lam = SigmaCombo([m.predict_sigma for m in models], coefs)
        return Truncated(lam, float(cp[prefix]["tau"]))
    if kind == "mixture":
        weights = _parse_vec(cp[prefix]["weights"])
        base = _read_rule(cp, f"{prefix}.base")
        comps = [_read_rule(cp, f"{prefix}.component.{j}") for j in range(1, len(weights) + 1)]
        return Mixture(base, comps, weights)
    raise ValueError(f"unknown rule kind {kind!r}")


def save_rule(path, rule, varpi=None, kappa=None):
    """Write a sampling rule (and its fitted moment models) to an INI file."""
    cp = configparser.ConfigParser()
    cp.optionxform = str
    cp["meta"] = {"format": RULE_FORMAT}
    if varpi is not None:
        cp["meta"]["varpi"] = _fmt(varpi)
    if kappa is not None:
        cp["meta"]["kappa"] = _fmt(kappa)
    _write_rule(cp, "rule", rule)
    buf = io.StringIO()
    cp.write(buf)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(buf.getvalue())


def load_rule(path):
    """Read a rule file; returns (rule, meta dict with varpi/kappa when present)."""
    cp = configparser.ConfigParser()
    cp.optionxform = str
    with open(path, encoding="utf-8") as fh:
        cp.read_file(fh)
    fmt = cp.get("meta", "format", fallback=None)
    if fmt != RULE_FORMAT:
        raise ValueError(f"unsupported rule file format {fmt!r}")
    meta = {}
    for key in ("varpi", "kappa"):
        if cp.has_option("meta", key):
            meta[key] = float(cp["meta"][key])
    return _read_rule(cp, "rule"), meta


# ---------------------------------------------------------------------------
# dataset schema + CSV ingestion
# ---------------------------------------------------------------------------

VALID_PROBLEMS = (
    "mean",
    "multi_mean",
    "linear_coef",
    "ate_binary",
    "ate_multi",
    "classification_triple",
)


def load_schema(path):
    cp = configparser.ConfigParser()
    cp.optionxform = str
    with open(path, encoding="utf-8") as fh:
        cp.read_file(fh)
    if not cp.has_section("schema"):
        raise ValueError(f"{path}: missing [schema] section")
    sec = cp["schema"]
    pid = sec.get("problem", "").strip()
    if pid not in VALID_PROBLEMS:
        raise ValueError(f"{path}: unknown problem {pid!r}; choose from {VALID_PROBLEMS}")
    schema = {
        "problem": pid,
        "v": sec.get("v", "").split(),
        "u": sec.get("u", "").split(),
        "r1": sec.get("r1", "").strip() or None,
        "r2": sec.get("r2", "").strip() or None,
        "rho": sec.get("rho", "").strip() or None,
        "n_arms": int(sec["n_arms"]) if sec.get("n_arms") else None,
    }
    if not schema["v"] or not schema["u"]:
        raise ValueError(f"{path}: schema must list v and u columns")
    return schema


def load_dataset(csv_path, schema):
    """Read a CSV against a schema; empty second-phase cells become NaN.

    Returns (problem, V, U, R1, R2, rho_n); R2 and rho_n are None when the
    schema does not name those columns.
    """
    frame = pd.read_csv(csv_path)
    needed = list(schema["v"]) + list(schema["u"])
    for key in ("r1", "r2", "rho"):
        if schema[key]:
            needed.append(schema[key])
    missing = [c for c in needed if c not in frame.columns]
    if missing:
        raise ValueError(f"{csv_path}: missing columns {missing}")

    V = frame[schema["v"]].to_numpy(dtype=float)
    U = frame[schema["u"]].to_numpy(dtype=float)
    if not np.all(np.isfinite(V)):
        raise ValueError(f"{csv_path}: first-phase columns contain missing values")

    R1 = None
    if schema["r1"]:
        R1 = frame[schema["r1"]].to_numpy(dtype=float).astype(bool)
    R2 = frame[schema["r2"]].to_numpy(dtype=float).astype(bool) if schema["r2"] else None
    rho = frame[schema["rho"]].to_numpy(dtype=float) if schema["rho"] else None

    problem = make_problem(
        schema["problem"],
        d_v=V.shape[1],
        d_u=U.shape[1],
        n_arms=schema["n_arms"],
    )
    return problem, V, U, R1, R2, rho


# ---------------------------------------------------------------------------
# scenario configs
# ---------------------------------------------------------------------------

def load_scenario(path, overrides=None):
    """Read a scenario INI into a ScenarioSpec; overrides win over the file."""
    cp = configparser.ConfigParser()
    cp.optionxform = str
    with open(path, encoding="utf-8") as fh:
        cp.read_file(fh)
    if not cp.has_section("scenario"):
        raise ValueError(f"{path}: missing [scenario] section")
    sec = cp["scenario"]

    def pick(key, cast, default=None):
        if overrides and overrides.get(key) is not None:
            return overrides[key]
        raw = sec.get(key, "").strip()
        return cast(raw) if raw else default

    spec = ScenarioSpec(
        dgp=pick("dgp", str),
        n=pick("n", int),
        q=pick("q", int, 1),
        varpi=pick("varpi", float, 0.3),
        reps=pick("reps", int, 500),
        seed=pick("seed", int, 0),
        rules=tuple(pick("rules", str.split, ["uniform", "sopt"])),
        estimators=tuple(pick("estimators", str.split, ["one_step"])),
        kappa_c=pick("kappa_c", float),
        priority=(lambda p: tuple(p) if p is not None else None)(
            pick("priority", lambda s: [float(t) for t in s.split()])
        ),
        threads=pick("threads", int, 1),
    )
    if spec.dgp is None or spec.n is None:
        raise ValueError(f"{path}: scenario must set dgp and n")
    return spec


# ---------------------------------------------------------------------------
# report emission
# ---------------------------------------------------------------------------

def _cell(x):
    if x is None:
        return ""
    if isinstance(x, float) and not np.isfinite(x):
        return ""
    if isinstance(x, float):
        return repr(x)
    return str(x)


def echo_header(config):
    """Comment block recording the effective configuration; no timestamps."""
    lines = ["# twophase report"]
    for key, val in config.items():
        lines.append(f"# {key} = {val}")
    return "\n".join(lines) + "\n"


def write_estimates(path, reports, config):
    """EstimateReport rows as CSV, one line per parameter component."""
    cols = ("component", "estimator", "rule", "estimate", "se", "ci_lo", "ci_hi",
            "sampled_fraction")
    lines = [echo_header(config) + ",".join(cols)]
    for rep in reports:
        for j in range(len(rep.theta)):
            row = (
                j + 1,
                rep.kind,
                rep.rule,
                float(rep.theta[j]),
                float(rep.se[j]),
                float(rep.ci_lo[j]),
                float(rep.ci_hi[j]),
                float(rep.sampled_fraction),
            )
            lines.append(",".join(_cell(c) for c in row))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def write_aggregate(path, table, config):
    """AggregateTable rows as CSV (bias / se / re / coverage per cell)."""
    cols = ("rule", "estimator", "component", "bias", "se", "re", "coverage",
            "sampled_fraction")
    lines = [echo_header(config) + ",".join(cols)]
    for row in table.rows:
        lines.append(",".join(_cell(row[c]) for c in cols))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
