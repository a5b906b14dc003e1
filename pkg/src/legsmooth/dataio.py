"""Dataset and configuration file I/O.

Dataset files are line-delimited, whitespace-separated, first token a tag:

  IMU t ax ay az gx gy gz
  ENC t foot a1 ... aN
  CNT t foot {0|1}
  LC  t_i t_j r11 ... r33 tx ty tz c11 c12 ... c66   (21 upper-tri entries)
  TRU t r11 ... r33 px py pz vx vy vz

Rotations are row-major. Floats are printed with 17 significant digits, so
write/read round-trips are bit-exact. Lines starting with '#' are ignored.
Records are grouped by tag and time-sorted within each group.

Config files are INI: sections [sim], [noise], [solver], [prior], and
[chain<foot>] with keys link0..linkN, each "9 rotation entries, 3
translation entries, axis tag (x/y/z/none)". Every key is optional and
falls back to its default; unknown keys are rejected.
"""

from __future__ import annotations

import configparser
import dataclasses
import io

import numpy as np

from .graph import LmConfig
from .kinematics import EncoderReading, KinematicChain, LinkParam
from .pipeline import EstimatorConfig, PriorConfig
from .preintegration import ContactEvent, ImuSample
from .sim import Dataset, LoopClosure, NoiseConfig, SimConfig, TruthRecord


class ParseError(ValueError):
    """File could not be parsed; carries a 1-based line number when known."""

    def __init__(self, message, line=None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line else message)


def _fmt(x):
    return "%.17g" % x


def _fmt_all(values):
    return " ".join(_fmt(v) for v in np.asarray(values).ravel())


_TRI = [(i, j) for i in range(6) for j in range(i, 6)]


def _pack_upper(cov):
    return [cov[i, j] for i, j in _TRI]


def _unpack_upper(entries):
    cov = np.empty((6, 6))
    for (i, j), v in zip(_TRI, entries):
        cov[i, j] = v
        cov[j, i] = v
    return cov


# ------------------------------------------------------------------- datasets

def save_dataset(path, dataset):
    with open(path, "w") as fh:
        for s in dataset.imu:
            fh.write(f"IMU {_fmt(s.timestamp)} {_fmt_all(s.accel)} {_fmt_all(s.gyro)}\n")
        for foot in sorted(dataset.encoders):
            for r in dataset.encoders[foot]:
                fh.write(f"ENC {_fmt(r.timestamp)} {foot} {_fmt_all(r.angles)}\n")
        for e in dataset.contacts:
            fh.write(f"CNT {_fmt(e.timestamp)} {e.foot} {1 if e.in_contact else 0}\n")
        for rec in dataset.loop_closures:
            fh.write(f"LC {_fmt(rec.time_i)} {_fmt(rec.time_j)} "
                     f"{_fmt_all(rec.rotation)} {_fmt_all(rec.position)} "
                     f"{_fmt_all(_pack_upper(rec.covariance))}\n")
        for rec in dataset.truth:
            fh.write(f"TRU {_fmt(rec.timestamp)} {_fmt_all(rec.rotation)} "
                     f"{_fmt_all(rec.position)} {_fmt_all(rec.velocity)}\n")


def _floats(tokens, n, lineno):
    if len(tokens) != n:
        raise ParseError(f"expected {n} numeric fields, got {len(tokens)}", lineno)
    try:
        return [float(t) for t in tokens]
    except ValueError as e:
        raise ParseError(str(e), lineno) from None


def load_dataset(path):
    imu, contacts, lcs, truth = [], [], [], []
    encoders = {}
    try:
        fh = open(path)
    except OSError as e:
        raise ParseError(f"cannot open dataset: {e}") from None
    with fh:
        for lineno, line in enumerate(fh, start=1):
            tokens = line.split()
            if not tokens or tokens[0].startswith("#"):
                continue
            tag, rest = tokens[0], tokens[1:]
            if tag == "IMU":
                v = _floats(rest, 7, lineno)
                imu.append(ImuSample(v[0], np.array(v[1:4]), np.array(v[4:7])))
            elif tag == "ENC":
                if len(rest) < 3:
                    raise ParseError("ENC needs time, foot, and angles", lineno)
                t = _floats(rest[:1], 1, lineno)[0]
                try:
                    foot = int(rest[1])
                except ValueError:
                    raise ParseError(f"bad foot id {rest[1]!r}", lineno) from None
                angles = np.array(_floats(rest[2:], len(rest) - 2, lineno))
                encoders.setdefault(foot, []).append(EncoderReading(t, angles))
            elif tag == "CNT":
                if len(rest) != 3 or rest[2] not in ("0", "1"):
                    raise ParseError("CNT needs time, foot, and a 0/1 flag", lineno)
                t = _floats(rest[:1], 1, lineno)[0]
                try:
                    foot = int(rest[1])
                except ValueError:
                    raise ParseError(f"bad foot id {rest[1]!r}", lineno) from None
                contacts.append(ContactEvent(t, foot, rest[2] == "1"))
            elif tag == "LC":
                v = _floats(rest, 2 + 9 + 3 + 21, lineno)
                lcs.append(LoopClosure(v[0], v[1],
                                       np.array(v[2:11]).reshape(3, 3),
                                       np.array(v[11:14]),
                                       _unpack_upper(v[14:])))
            elif tag == "TRU":
                v = _floats(rest, 1 + 9 + 3 + 3, lineno)
                truth.append(TruthRecord(v[0], np.array(v[1:10]).reshape(3, 3),
                                         np.array(v[10:13]), np.array(v[13:16])))
            else:
                raise ParseError(f"unknown record tag {tag!r}", lineno)
    return Dataset(imu, encoders, contacts, lcs, truth)


# -------------------------------------------------------------- configurations

@dataclasses.dataclass(frozen=True)
class RunConfig:
    """Everything a generate or run invocation needs."""

    sim: SimConfig
    estimator: EstimatorConfig


_SIM_KEYS = {"duration": float, "imu_rate": float, "speed": float,
             "turn_rate": float, "base_height": float, "bob_amplitude": float,
             "sway_pitch": float, "sway_roll": float, "step_period": float,
             "duty_factor": float, "lc_stride": int, "seed": int}
_NOISE_KEYS = {f.name: float for f in dataclasses.fields(NoiseConfig)}
_SOLVER_KEYS = {"lambda_init": float, "max_iterations": int,
                "cost_tolerance": float, "gradient_tolerance": float,
                "jacobian_mode": str, "contact_kind": str,
                "contact_sigma_omega": float, "fk_variance_floor": float}
_PRIOR_KEYS = {"sigma_rot": float, "sigma_pos": float,
               "sigma_vel": float, "sigma_bias": float}


def _section(parser, name, known):
    if not parser.has_section(name):
        return {}
    out = {}
    for key, raw in parser.items(name):
        if key not in known:
            raise ParseError(f"unknown key {key!r} in section [{name}]")
        conv = known[key]
        try:
            out[key] = conv(raw)
        except ValueError:
            raise ParseError(
                f"bad value {raw!r} for {key} in section [{name}]") from None
    return out


def _parse_link(raw, section):
    tokens = raw.split()
    if len(tokens) != 13:
        raise ParseError(f"link in [{section}] needs 13 fields "
                         f"(9 rotation, 3 translation, axis), got {len(tokens)}")
    try:
        numbers = [float(t) for t in tokens[:12]]
    except ValueError as e:
        raise ParseError(f"bad link number in [{section}]: {e}") from None
    axis = tokens[12].lower()
    try:
        return LinkParam(np.array(numbers[:9]).reshape(3, 3),
                         np.array(numbers[9:12]),
                         None if axis == "none" else axis)
    except ValueError as e:
        raise ParseError(f"bad link in [{section}]: {e}") from None


def _parse_chain(parser, section):
    links = []
    keys = dict(parser.items(section))
    for idx in range(len(keys)):
        key = f"link{idx}"
        if key not in keys:
            raise ParseError(f"[{section}] must use contiguous keys link0..linkN; "
                             f"missing {key}")
        links.append(_parse_link(keys[key], section))
    try:
        return KinematicChain(tuple(links))
    except ValueError as e:
        raise ParseError(f"bad chain in [{section}]: {e}") from None


def load_config(path):
    parser = configparser.ConfigParser(interpolation=None)
    try:
        with open(path) as fh:
            parser.read_file(fh, source=str(path))
    except OSError as e:
        raise ParseError(f"cannot open config: {e}") from None
    except configparser.Error as e:
        raise ParseError(str(e), getattr(e, "lineno", None)) from None

    for section in parser.sections():
        if section in ("sim", "noise", "solver", "prior"):
            continue
        if section.startswith("chain") and section[5:].isdigit():
            continue
        raise ParseError(f"unknown section [{section}]")

    sim_kw = _section(parser, "sim", _SIM_KEYS)
    noise_kw = _section(parser, "noise", _NOISE_KEYS)
    solver_kw = _section(parser, "solver", _SOLVER_KEYS)
    prior_kw = _section(parser, "prior", _PRIOR_KEYS)

    chains = {}
    for section in parser.sections():
        if section.startswith("chain") and section[5:].isdigit():
            chains[int(section[5:])] = _parse_chain(parser, section)

    lm_kw = {k: v for k, v in solver_kw.items() if k in
             ("lambda_init", "max_iterations", "cost_tolerance",
              "gradient_tolerance", "jacobian_mode")}
    est_kw = {k: v for k, v in solver_kw.items() if k in
              ("contact_kind", "contact_sigma_omega", "fk_variance_floor")}
    try:
        noise = NoiseConfig(**noise_kw)
        if chains:
            sim_kw["chains"] = chains
        sim = SimConfig(noise=noise, **sim_kw)
        estimator = EstimatorConfig(lm=LmConfig(**lm_kw),
                                    prior=PriorConfig(**prior_kw), **est_kw)
    except ValueError as e:
        raise ParseError(str(e)) from None
    if estimator.lm.jacobian_mode not in ("analytic", "numeric"):
        raise ParseError(f"jacobian_mode must be analytic or numeric, "
                         f"got {estimator.lm.jacobian_mode!r}")
    if estimator.contact_kind not in ("point", "rigid"):
        raise ParseError(f"contact_kind must be point or rigid, "
                         f"got {estimator.contact_kind!r}")
    return RunConfig(sim=sim, estimator=estimator)


def default_config():
    return RunConfig(sim=SimConfig(), estimator=EstimatorConfig())


def save_config(path, config):
    """Write every setting explicitly; floats keep full precision."""
    sim, est = config.sim, config.estimator
    out = io.StringIO()
    out.write("[sim]\n")
    for key in _SIM_KEYS:
        value = getattr(sim, key)
        out.write(f"{key} = {_fmt(value) if isinstance(value, float) else value}\n")
    out.write("\n[noise]\n")
    for key in _NOISE_KEYS:
        out.write(f"{key} = {_fmt(getattr(sim.noise, key))}\n")
    out.write("\n[solver]\n")
    lm = est.lm
    out.write(f"lambda_init = {_fmt(lm.lambda_init)}\n")
    out.write(f"max_iterations = {lm.max_iterations}\n")
    out.write(f"cost_tolerance = {_fmt(lm.cost_tolerance)}\n")
    out.write(f"gradient_tolerance = {_fmt(lm.gradient_tolerance)}\n")
    out.write(f"jacobian_mode = {lm.jacobian_mode}\n")
    out.write(f"contact_kind = {est.contact_kind}\n")
    out.write(f"contact_sigma_omega = {_fmt(est.contact_sigma_omega)}\n")
    out.write(f"fk_variance_floor = {_fmt(est.fk_variance_floor)}\n")
    out.write("\n[prior]\n")
    for key in _PRIOR_KEYS:
        out.write(f"{key} = {_fmt(getattr(est.prior, key))}\n")
    for foot in sorted(sim.chains):
        out.write(f"\n[chain{foot}]\n")
        for idx, link in enumerate(sim.chains[foot].links):
            axis = link.axis if link.axis is not None else "none"
            out.write(f"link{idx} = {_fmt_all(link.rotation)} "
                      f"{_fmt_all(link.translation)} {axis}\n")
    with open(path, "w") as fh:
        fh.write(out.getvalue())
