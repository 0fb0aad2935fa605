"""Configuration, data-file ingestion, and result export.

File formats
------------
Config: INI text with sections [constants], [sampler], [priors],
[integrator]; every key optional (defaults follow the reference analysis),
unknown sections or keys are rejected.

Data: CSV with header ``week,y,n1,n2,n3``; weeks contiguous from 1; empty
n1..n3 fields mean no virological tests that week.

Parameter file (for ``simulate``): INI with [kinetic] and [aux] sections.

All writes go to a temporary file in the target directory and are renamed
into place, so failures never leave partial output.
"""
from __future__ import annotations

import configparser
import csv
import os
from dataclasses import dataclass, fields, replace
from pathlib import Path

import numpy as np

from .model import FixedConstants, KineticParams, aggregate_observation_vector
from .filtering import AuxParams, Dataset
from .lna import IntegratorConfig
from .posterior import PARAM_NAMES, PriorConfig
from .sampler import SamplerConfig

__all__ = [
    "InputError", "RunConfig", "read_config", "read_params_file",
    "read_data", "write_data", "write_truth", "write_archive",
    "read_archive", "summarize_archive", "write_summary",
    "write_trajectories", "write_predictive", "atomic_write_text",
]


class InputError(ValueError):
    """Malformed configuration or data input (CLI exit code 2)."""


@dataclass(frozen=True)
class RunConfig:
    constants: FixedConstants
    sampler: SamplerConfig
    priors: PriorConfig
    integrator: IntegratorConfig
    use_virological: bool = True


_CONSTANT_KEYS = {"omega", "omega_c", "r_h", "gamma_per_year", "mu_per_year"}
_SAMPLER_KEYS = {"chains", "iterations", "adapt", "seed", "ladder", "thin",
                 "swap_interval", "use_virological", "init_scale"}
_PRIOR_KEYS = {f.name for f in fields(PriorConfig)}
_INTEGRATOR_KEYS = {"rel_tol", "abs_tol", "max_step", "max_steps"}
_SECTIONS = {
    "constants": _CONSTANT_KEYS,
    "sampler": _SAMPLER_KEYS,
    "priors": _PRIOR_KEYS,
    "integrator": _INTEGRATOR_KEYS,
}


def _load_ini(path, allowed_sections) -> configparser.ConfigParser:
    parser = configparser.ConfigParser(interpolation=None)
    try:
        with open(path, encoding="utf-8") as fh:
            parser.read_file(fh, source=str(path))
    except OSError as err:
        raise InputError(f"cannot read {path}: {err}") from err
    except configparser.Error as err:
        raise InputError(f"{path}: {err}") from err
    for section in parser.sections():
        if section not in allowed_sections:
            raise InputError(f"{path}: unknown section [{section}]")
        extra = set(parser[section]) - allowed_sections[section]
        if extra:
            raise InputError(
                f"{path}: unknown key(s) in [{section}]: {sorted(extra)}")
    return parser


def _get(parser, section, key, cast, default):
    if parser.has_option(section, key):
        raw = parser.get(section, key)
        try:
            return cast(raw)
        except ValueError as err:
            raise InputError(f"[{section}] {key} = {raw!r}: {err}") from err
    return default


def _parse_bool(raw: str) -> bool:
    val = raw.strip().lower()
    if val in ("true", "1", "yes", "on"):
        return True
    if val in ("false", "0", "no", "off"):
        return False
    raise ValueError("expected a boolean")


def _parse_ladder(raw: str):
    raw = raw.strip()
    if raw.startswith("geometric:"):
        return ("geometric", float(raw.split(":", 1)[1]))
    return ("explicit", np.array([float(t) for t in raw.split(",")]))


def read_config(path) -> RunConfig:
    parser = _load_ini(path, _SECTIONS)
    defaults_k = FixedConstants()
    constants = FixedConstants(
        omega=_get(parser, "constants", "omega", float, defaults_k.omega),
        omega_c=_get(parser, "constants", "omega_c", float, defaults_k.omega_c),
        r_h=_get(parser, "constants", "r_h", float, defaults_k.r_h),
        gamma=_get(parser, "constants", "gamma_per_year", float,
                   defaults_k.gamma),
        mu=_get(parser, "constants", "mu_per_year", float, defaults_k.mu))

    n_chains = _get(parser, "sampler", "chains", int, 8)
    ladder_spec = _get(parser, "sampler", "ladder", _parse_ladder,
                       ("geometric", 50.0))
    if ladder_spec[0] == "geometric":
        ladder = None
        t_max = ladder_spec[1]
    else:
        ladder = ladder_spec[1]
        t_max = None
    sampler = SamplerConfig(
        n_chains=n_chains,
        n_iter=_get(parser, "sampler", "iterations", int, 200_000),
        n_adapt=_get(parser, "sampler", "adapt", int, 100_000),
        ladder=ladder,
        swap_interval=_get(parser, "sampler", "swap_interval", int, 10),
        thin=_get(parser, "sampler", "thin", int, 10),
        seed=_get(parser, "sampler", "seed", int, 0),
        init_scale=_get(parser, "sampler", "init_scale", float, 0.05))
    if t_max is not None:
        from .sampler import geometric_ladder
        sampler = replace(sampler, ladder=geometric_ladder(n_chains, t_max))

    prior_kwargs = {name: _get(parser, "priors", name, float,
                               getattr(PriorConfig(), name))
                    for name in _PRIOR_KEYS}
    priors = PriorConfig(**prior_kwargs)

    cfg_default = IntegratorConfig()
    integrator = IntegratorConfig(
        rel_tol=_get(parser, "integrator", "rel_tol", float,
                     cfg_default.rel_tol),
        abs_tol=_get(parser, "integrator", "abs_tol", float,
                     cfg_default.abs_tol),
        max_step=_get(parser, "integrator", "max_step", float,
                      cfg_default.max_step),
        max_steps=_get(parser, "integrator", "max_steps", int,
                       cfg_default.max_steps))

    use_viro = _get(parser, "sampler", "use_virological", _parse_bool, True)
    return RunConfig(constants=constants, sampler=sampler, priors=priors,
                     integrator=integrator, use_virological=use_viro)


_KINETIC_KEYS = {"beta1", "beta2", "sigma1", "sigma2", "c0", "x0"}
_AUX_KEYS = {"c", "nu", "r", "sigma_obs", "v"}


def read_params_file(path, constants: FixedConstants):
    """Parse a [kinetic]/[aux] parameter file into (theta, tau)."""
    parser = _load_ini(path, {"kinetic": _KINETIC_KEYS, "aux": _AUX_KEYS})
    for section, keys in (("kinetic", _KINETIC_KEYS), ("aux", _AUX_KEYS)):
        if not parser.has_section(section):
            raise InputError(f"{path}: missing section [{section}]")
        missing = keys - set(parser[section])
        if missing:
            raise InputError(
                f"{path}: missing key(s) in [{section}]: {sorted(missing)}")
    try:
        x0 = np.array([float(t) for t
                       in parser.get("kinetic", "x0").split(",")])
        theta = KineticParams(
            beta1=parser.getfloat("kinetic", "beta1"),
            beta2=parser.getfloat("kinetic", "beta2"),
            sigma1=parser.getfloat("kinetic", "sigma1"),
            sigma2=parser.getfloat("kinetic", "sigma2"),
            x0=x0, c0=parser.getfloat("kinetic", "c0"))
        theta.validate_population(constants)
        tau = AuxParams.tied(
            c=parser.getfloat("aux", "c"), nu=parser.getfloat("aux", "nu"),
            r=parser.getfloat("aux", "r"),
            sigma_obs=parser.getfloat("aux", "sigma_obs"),
            v=parser.getfloat("aux", "v"), c0=theta.c0)
    except ValueError as err:
        raise InputError(f"{path}: {err}") from err
    return theta, tau


def atomic_write_text(path, text: str):
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)


DATA_HEADER = "week,y,n1,n2,n3"


def read_data(path, constants: FixedConstants) -> Dataset:
    """Parse a weekly data CSV into a Dataset."""
    try:
        with open(path, encoding="utf-8", newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as err:
        raise InputError(f"cannot read {path}: {err}") from err
    if not rows or [c.strip() for c in rows[0]] != DATA_HEADER.split(","):
        raise InputError(f"{path}:1: expected header '{DATA_HEADER}'")
    weeks, y, n1, n2, n3 = [], [], [], [], []
    for ln, row in enumerate(rows[1:], start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != 5:
            raise InputError(f"{path}:{ln}: expected 5 fields, got {len(row)}")
        try:
            week = int(row[0])
            yv = int(row[1])
        except ValueError as err:
            raise InputError(f"{path}:{ln}: {err}") from err
        if yv < 0:
            raise InputError(f"{path}:{ln}: y must be nonnegative")
        nvals = []
        blanks = [not c.strip() for c in row[2:5]]
        if any(blanks) and not all(blanks):
            raise InputError(
                f"{path}:{ln}: n1,n2,n3 must be all present or all empty")
        for col, cell in zip(("n1", "n2", "n3"), row[2:5]):
            if not cell.strip():
                nvals.append(np.nan)
                continue
            try:
                nv = int(cell)
            except ValueError as err:
                raise InputError(f"{path}:{ln}: column {col}: {err}") from err
            if nv < 0:
                raise InputError(f"{path}:{ln}: {col} must be nonnegative")
            nvals.append(float(nv))
        weeks.append(week)
        y.append(float(yv))
        n1.append(nvals[0])
        n2.append(nvals[1])
        n3.append(nvals[2])
    if len(weeks) < 2:
        raise InputError(f"{path}: need at least 2 data rows")
    if weeks != list(range(1, len(weeks) + 1)):
        raise InputError(f"{path}: weeks must be contiguous starting at 1")
    times = (np.array(weeks, dtype=float) - 1.0) / 52.0
    try:
        return Dataset(y=np.array(y), n1=np.array(n1), n2=np.array(n2),
                       n3=np.array(n3), times=times, constants=constants)
    except ValueError as err:
        raise InputError(f"{path}: {err}") from err


def write_data(dataset: Dataset, path):
    lines = [DATA_HEADER]
    for i in range(dataset.n_weeks):
        def cell(arr):
            return "" if np.isnan(arr[i]) else str(int(arr[i]))
        lines.append(f"{i + 1},{int(dataset.y[i])},"
                     f"{cell(dataset.n1)},{cell(dataset.n2)},{cell(dataset.n3)}")
    atomic_write_text(path, "\n".join(lines) + "\n")


def write_truth(truth, path):
    """Companion file for synthetic data: true parameters + latent states."""
    theta, tau = truth.theta, truth.tau
    lines = []
    for name, val in (("beta1", theta.beta1), ("beta2", theta.beta2),
                      ("sigma1", theta.sigma1), ("sigma2", theta.sigma2),
                      ("c0", theta.c0), ("Sigma", tau.sigma_obs),
                      ("r", tau.r), ("c", tau.c), ("nu", tau.nu),
                      ("v", tau.v)):
        lines.append(f"# {name} = {val!r}")
    lines.append("# x0 = " + ",".join(str(int(v)) for v in theta.x0))
    lines.append("week," + ",".join(PARAM_NAMES[10:]) + ",d")
    for i in range(truth.states.shape[0]):
        cells = ",".join(str(int(v)) for v in truth.states[i])
        lines.append(f"{i + 1},{cells},{truth.background[i]!r}")
    atomic_write_text(path, "\n".join(lines) + "\n")


ARCHIVE_HEADER = ("iteration", "seed", "log_posterior") + PARAM_NAMES


def write_archive(archive, params: np.ndarray, path):
    """Posterior-sample CSV: one row per archived draw, full precision."""
    lines = [",".join(ARCHIVE_HEADER)]
    for i in range(archive.n_draws):
        cells = [str(archive.iterations[i]), str(archive.seeds[i]),
                 f"{archive.log_post[i]:.17g}"]
        cells += [f"{v:.17g}" for v in params[i]]
        lines.append(",".join(cells))
    atomic_write_text(path, "\n".join(lines) + "\n")


def read_archive(path):
    """Read a posterior-sample CSV; returns (params, log_post, seeds, iters)."""
    try:
        with open(path, encoding="utf-8", newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as err:
        raise InputError(f"cannot read {path}: {err}") from err
    if not rows or tuple(rows[0]) != ARCHIVE_HEADER:
        raise InputError(f"{path}: not a posterior-sample archive")
    try:
        # seeds are 63-bit integers and must not pass through float
        iters = np.array([int(row[0]) for row in rows[1:]], dtype=np.int64)
        seeds = np.array([int(row[1]) for row in rows[1:]], dtype=np.uint64)
        body = np.array([[float(c) for c in row[2:]] for row in rows[1:]])
    except (ValueError, IndexError) as err:
        raise InputError(f"{path}: corrupt archive: {err}") from err
    if body.ndim != 2 or body.shape[0] < 1 \
            or body.shape[1] != len(ARCHIVE_HEADER) - 2:
        raise InputError(f"{path}: corrupt archive shape")
    log_post = body[:, 0]
    params = body[:, 1:]
    return params, log_post, seeds, iters


def _sig6(x: float) -> str:
    return f"{x:.6g}"


def summarize_archive(params: np.ndarray, log_post: np.ndarray):
    """MAP draw plus equal-tailed 95% intervals, one row per parameter."""
    best = int(np.argmax(log_post))
    lo = np.percentile(params, 2.5, axis=0)
    hi = np.percentile(params, 97.5, axis=0)
    display = {"x_ss": "X_SS", "x_is": "X_IS", "x_rs": "X_RS",
               "x_si": "X_SI", "x_ri": "X_RI", "x_sr": "X_SR",
               "x_ir": "X_IR", "x_rr": "X_RR", "c0": "C_0"}
    rows = []
    for j, name in enumerate(PARAM_NAMES):
        rows.append((display.get(name, name), params[best, j], lo[j], hi[j]))
    return rows


def write_summary(rows, path):
    lines = ["parameter,map,ci_lower,ci_upper"]
    for name, mapv, lo, hi in rows:
        lines.append(f"{name},{_sig6(mapv)},{_sig6(lo)},{_sig6(hi)}")
    atomic_write_text(path, "\n".join(lines) + "\n")


def write_trajectories(bands: dict, path):
    """Per-week 2.5/50/97.5 percentile bands for the plotted quantities."""
    names = ("influenza", "rsv", "background", "aggregate")
    header = ["week"]
    for name in names:
        header += [f"{name}_lo", f"{name}_med", f"{name}_hi"]
    lines = [",".join(header)]
    weeks = bands["weeks"]
    for i, wk in enumerate(weeks):
        cells = [str(int(wk))]
        for name in names:
            lo, med, hi = bands[name][:, i]
            cells += [_sig6(lo), _sig6(med), _sig6(hi)]
        lines.append(",".join(cells))
    atomic_write_text(path, "\n".join(lines) + "\n")


def write_predictive(weeks, y, mean, lo, hi, path):
    lines = ["week,y,pred_mean,pred_lo,pred_hi"]
    for i, wk in enumerate(weeks):
        lines.append(f"{int(wk)},{_sig6(y[i])},{_sig6(mean[i])},"
                     f"{_sig6(lo[i])},{_sig6(hi[i])}")
    atomic_write_text(path, "\n".join(lines) + "\n")
