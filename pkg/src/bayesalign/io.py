"""CSV point sets, strict JSON run configs and result writers.

Coordinates are written with 17 significant digits so a write/read round
trip is bit exact. Config files are JSON objects whose keys must all be
known; relative paths inside a config resolve against the config's folder.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .experiments import MODEL_KINDS, GroundTruth, SimConfig
from .geom import PointSet
from .init_jumps import JumpConfig
from .model import UNMATCHED, MatchMatrix, ModelConfig

FLOAT_FMT = "%.17g"
POINT_HEADER = ["id", "x", "y", "z"]
TRUTH_HEADER = ["x_id", "mu_id"]
INIT_KEYWORDS = ("unmatched", "random")


class ConfigError(ValueError):
    """Invalid or unknown entry in a JSON config file."""


class DataError(ValueError):
    """Malformed point-set or truth file. Messages carry the line number."""


def fmt(x) -> str:
    return FLOAT_FMT % x


# --------------------------------------------------------------- point sets


def _open_data(path):
    try:
        return open(path, newline="")
    except OSError as e:
        raise DataError(f"{path}: cannot open ({e.strerror})") from e


def read_pointset(path) -> PointSet:
    """Read a CSV with header ``id,x,y,z`` into a PointSet."""
    path = Path(path)
    fh = _open_data(path)
    ids, pts, seen = [], [], {}
    with fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != POINT_HEADER:
            raise DataError(f"{path}:1: header must be id,x,y,z")
        for row in reader:
            line = reader.line_num
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 4:
                raise DataError(f"{path}:{line}: expected 4 fields, got {len(row)}")
            pid = row[0].strip()
            if not pid:
                raise DataError(f"{path}:{line}: empty id")
            if pid in seen:
                raise DataError(f"{path}:{line}: duplicate id {pid!r} (first on line {seen[pid]})")
            try:
                xyz = [float(c) for c in row[1:]]
            except ValueError:
                raise DataError(f"{path}:{line}: coordinates must be decimal numbers") from None
            if not all(math.isfinite(v) for v in xyz):
                raise DataError(f"{path}:{line}: non-finite coordinate")
            seen[pid] = line
            ids.append(pid)
            pts.append(xyz)
    if not pts:
        raise DataError(f"{path}: no points")
    return PointSet(np.array(pts), tuple(ids))


def write_pointset(path, ps: PointSet) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(POINT_HEADER)
        for pid, row in zip(ps.ids, ps.points):
            w.writerow([pid, fmt(row[0]), fmt(row[1]), fmt(row[2])])


def volume_bounding_box(X, mu) -> float:
    """Product over axes of the larger of the two sets' coordinate extents."""
    a = np.asarray(X, dtype=np.float64)
    b = np.asarray(mu, dtype=np.float64)
    if a.size == 0 or b.size == 0:
        raise ValueError("both point sets must be nonempty")
    ext = np.maximum(a.max(axis=0) - a.min(axis=0), b.max(axis=0) - b.min(axis=0))
    return float(np.prod(ext))


def read_truth(path, X: PointSet, mu: PointSet) -> GroundTruth:
    """CSV ``x_id,mu_id``; a blank ``mu_id`` marks a truly unmatched point."""
    xi = {k: i for i, k in enumerate(X.ids)}
    mj = {k: j for j, k in enumerate(mu.ids)}
    pairs, unmatched = [], []
    with _open_data(path) as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != TRUTH_HEADER:
            raise DataError(f"{path}:1: header must be x_id,mu_id")
        for row in reader:
            line = reader.line_num
            if not row:
                continue
            if len(row) != 2:
                raise DataError(f"{path}:{line}: expected 2 fields")
            a, b = row[0].strip(), row[1].strip()
            if a not in xi:
                raise DataError(f"{path}:{line}: unknown X id {a!r}")
            if b == "":
                unmatched.append(xi[a])
            elif b in mj:
                pairs.append((xi[a], mj[b]))
            else:
                raise DataError(f"{path}:{line}: unknown mu id {b!r}")
    try:
        return GroundTruth(tuple(pairs), tuple(unmatched))
    except ValueError as e:
        raise DataError(f"{path}: {e}") from None


def read_match(path, X: PointSet, mu: PointSet) -> MatchMatrix:
    """Starting match from a CSV whose first two columns are ``x_id,mu_id``.

    Extra columns are ignored, so a ``threshold_match.csv`` from an earlier
    run can seed a new one. Rows not listed, or with a blank ``mu_id``, start
    unmatched.
    """
    xi = {k: i for i, k in enumerate(X.ids)}
    mj = {k: j for j, k in enumerate(mu.ids)}
    assign = np.full(len(X), UNMATCHED, dtype=np.int64)
    seen = set()
    with _open_data(path) as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header[:2]] != TRUTH_HEADER:
            raise DataError(f"{path}:1: first two header fields must be x_id,mu_id")
        for row in reader:
            line = reader.line_num
            if not row:
                continue
            if len(row) < 2:
                raise DataError(f"{path}:{line}: expected at least 2 fields")
            a, b = row[0].strip(), row[1].strip()
            if a not in xi:
                raise DataError(f"{path}:{line}: unknown X id {a!r}")
            if a in seen:
                raise DataError(f"{path}:{line}: duplicate X id {a!r}")
            seen.add(a)
            if b == "":
                continue
            if b not in mj:
                raise DataError(f"{path}:{line}: unknown mu id {b!r}")
            assign[xi[a]] = mj[b]
    return MatchMatrix(assign, len(mu))


def write_truth(path, truth: GroundTruth, X: PointSet, mu: PointSet) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRUTH_HEADER)
        for i, j in truth.pairs:
            w.writerow([X.ids[i], mu.ids[j]])
        for i in truth.unmatched:
            w.writerow([X.ids[i], ""])


# ------------------------------------------------------------------ configs


def _check(kind, v, where):
    if kind is bool:
        if not isinstance(v, bool):
            raise ConfigError(f"{where}: expected true/false, got {v!r}")
        return v
    if kind is int:
        if isinstance(v, bool) or not isinstance(v, int):
            raise ConfigError(f"{where}: expected an integer, got {v!r}")
        return v
    if kind is float:
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise ConfigError(f"{where}: expected a number, got {v!r}")
        return float(v)
    if kind is str:
        if not isinstance(v, str):
            raise ConfigError(f"{where}: expected a string, got {v!r}")
        return v
    return v


def _from_dict(cls, d, where, kinds):
    if not isinstance(d, dict):
        raise ConfigError(f"{where}: expected an object")
    names = {f.name for f in dataclasses.fields(cls) if f.init}
    unknown = sorted(set(d) - names)
    if unknown:
        raise ConfigError(f"{where}: unknown key(s) {', '.join(unknown)}")
    kw = {}
    for k, v in d.items():
        kind = kinds.get(k)
        if v is None:
            kw[k] = None
        elif isinstance(kind, tuple):  # fixed-length numeric vector
            if not isinstance(v, list) or len(v) != kind[1]:
                raise ConfigError(f"{where}.{k}: expected a list of {kind[1]} numbers")
            kw[k] = [_check(kind[0], x, f"{where}.{k}") for x in v]
        elif kind == "floats":
            if not isinstance(v, list) or not v:
                raise ConfigError(f"{where}.{k}: expected a nonempty list of numbers")
            kw[k] = [_check(float, x, f"{where}.{k}") for x in v]
        elif kind == "strs":
            if not isinstance(v, list) or not v:
                raise ConfigError(f"{where}.{k}: expected a nonempty list of strings")
            kw[k] = [_check(str, x, f"{where}.{k}") for x in v]
        else:
            kw[k] = _check(kind, v, f"{where}.{k}")
    try:
        return cls(**kw)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"{where}: {e}") from None


def _kinds(cls):
    out = {}
    for f in dataclasses.fields(cls):
        t = f.type if isinstance(f.type, str) else getattr(f.type, "__name__", "")
        out[f.name] = {"int": int, "float": float, "bool": bool, "str": str}.get(t.replace("Optional[", "").rstrip("]"), None)
    return out


@dataclass
class ModelSection:
    alpha0: float = 1.0
    beta0: float = 36.0
    psi: float = 0.2
    volume_A: Optional[float] = None  # None: bounding box of the data
    mu_gamma: list = field(default_factory=lambda: [0.0, 0.0, 0.0])
    sigma_gamma: float = 50.0
    schmidler_q: bool = False

    def __post_init__(self):
        # validate ranges now so `validate` catches them
        self.to_model_config(self.volume_A or 1.0)

    def to_model_config(self, volume: float) -> ModelConfig:
        return ModelConfig(
            alpha0=self.alpha0,
            beta0=self.beta0,
            psi=self.psi,
            volume_A=volume,
            mu_gamma=tuple(self.mu_gamma),
            sigma_gamma=self.sigma_gamma,
            schmidler_q=self.schmidler_q,
        )


@dataclass
class ProposalSection:
    p_reject: float = 0.2
    fast_ratio: bool = False
    lambda_updates: int = 1
    width12: float = 0.2
    width13: float = 0.1
    width23: float = 0.2

    def __post_init__(self):
        from .sampler_config import AngleProposalConfig
        from .sampler_procrustes import ProposalConfig

        ProposalConfig(self.p_reject, self.fast_ratio, 0, self.lambda_updates)
        AngleProposalConfig(self.width12, self.width13, self.width23)


_MODEL_KINDS = dict(_kinds(ModelSection), mu_gamma=(float, 3))
_PROPOSAL_KINDS = _kinds(ProposalSection)
_JUMP_KINDS = {f.name: (int if f.type in ("int", int) else float) for f in dataclasses.fields(JumpConfig)}


def _resolve(base: Path, p: Optional[str]) -> Optional[Path]:
    if p is None:
        return None
    q = Path(p)
    return q if q.is_absolute() else base / q


def _load_json(path):
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as e:
        raise ConfigError(f"{path}: cannot read ({e.strerror})") from e
    try:
        d = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}:{e.lineno}: invalid JSON ({e.msg})") from None
    if not isinstance(d, dict):
        raise ConfigError(f"{path}: top level must be an object")
    return d


def _section(d, key, cls, kinds, where):
    v = d.pop(key, None)
    return cls() if v is None else _from_dict(cls, v, f"{where}.{key}", kinds)


@dataclass
class RunConfig:
    """One ``fit`` run: data files, model, proposal and optional big jumps."""

    x: str
    mu: str
    model_kind: str = "procrustes"
    truth: Optional[str] = None
    output_dir: str = "out"
    n_iter: int = 10000
    burn_in: int = 0
    thin: int = 1
    seed: int = 0
    init: str = "random"
    center: bool = True
    model: ModelSection = field(default_factory=ModelSection)
    proposal: ProposalSection = field(default_factory=ProposalSection)
    jumps: Optional[JumpConfig] = None
    base_dir: Path = field(default=Path("."), compare=False, repr=False)

    def __post_init__(self):
        if self.model_kind not in MODEL_KINDS:
            raise ConfigError(f"model_kind must be one of {', '.join(MODEL_KINDS)}")
        if not self.n_iter > self.burn_in >= 0:
            raise ConfigError("need n_iter > burn_in >= 0")
        if self.thin < 1:
            raise ConfigError("thin must be >= 1")
        if not 0 <= self.seed < 2**64:
            raise ConfigError("seed must be a 64-bit unsigned integer")
        if not self.init:
            raise ConfigError("init must be 'unmatched', 'random' or a match CSV path")
        if self.jumps is not None and self.model_kind != "procrustes":
            raise ConfigError("big jumps are only available for the procrustes model")

    @classmethod
    def from_dict(cls, d, base_dir=".", where="config") -> "RunConfig":
        d = dict(d)
        model = _section(d, "model", ModelSection, _MODEL_KINDS, where)
        prop = _section(d, "proposal", ProposalSection, _PROPOSAL_KINDS, where)
        jumps_raw = d.pop("jumps", None)
        jumps = None if jumps_raw is None else _from_dict(JumpConfig, jumps_raw, f"{where}.jumps", _JUMP_KINDS)
        for req in ("x", "mu"):
            if req not in d:
                raise ConfigError(f"{where}: missing required key {req!r}")
        kinds = {k: v for k, v in _kinds(cls).items() if k not in ("model", "proposal", "jumps", "base_dir")}
        kinds["base_dir"] = None
        if "base_dir" in d:
            raise ConfigError(f"{where}: unknown key(s) base_dir")
        cfg = _from_dict(cls, d, where, kinds)
        cfg.model, cfg.proposal, cfg.jumps = model, prop, jumps
        cfg.base_dir = Path(base_dir)
        cfg.__post_init__()
        return cfg

    @classmethod
    def load(cls, path) -> "RunConfig":
        path = Path(path)
        return cls.from_dict(_load_json(path), path.parent, str(path))

    def to_dict(self) -> dict:
        d = {f.name: getattr(self, f.name) for f in dataclasses.fields(self) if f.name != "base_dir"}
        d["model"] = dataclasses.asdict(self.model)
        d["proposal"] = dataclasses.asdict(self.proposal)
        d["jumps"] = None if self.jumps is None else dataclasses.asdict(self.jumps)
        return d

    def path(self, key) -> Optional[Path]:
        return _resolve(self.base_dir, getattr(self, key))

    def estimator(self):
        from .estimators import ConfigurationMatcher, ProcrustesMatcher

        m, p = self.model, self.proposal
        common = dict(
            n_iter=self.n_iter,
            burn_in=self.burn_in,
            thin=self.thin,
            alpha0=m.alpha0,
            beta0=m.beta0,
            psi=m.psi,
            volume_A=m.volume_A,
            p_reject=p.p_reject,
            lambda_updates=p.lambda_updates,
            # a match-file start is read with the data and passed to fit()
            init=self.init if self.init in INIT_KEYWORDS else "unmatched",
            center=self.center,
            random_state=self.seed,
        )
        if self.model_kind == "configuration":
            return ConfigurationMatcher(
                mu_gamma=tuple(m.mu_gamma),
                sigma_gamma=m.sigma_gamma,
                width12=p.width12,
                width13=p.width13,
                width23=p.width23,
                **common,
            )
        j = self.jumps or JumpConfig()
        return ProcrustesMatcher(
            fast_ratio=p.fast_ratio,
            schmidler_q=m.schmidler_q,
            big_jumps=self.jumps is not None,
            p_n=j.p_n,
            p_r=j.p_r,
            p_t=j.p_t,
            p_f=j.p_f,
            sigma_T=j.sigma_T,
            n_settle=j.n_settle,
            n_initialisation=j.n_initialisation,
            jump_delay=j.delay,
            **common,
        )


_SIM_KINDS = {f.name: (int if f.type in ("int", int) else float) for f in dataclasses.fields(SimConfig)}


@dataclass
class SimRunConfig:
    """The synthetic simulation study over a sweep of perturbation sds."""

    sim: SimConfig = field(default_factory=SimConfig)
    s_values: list = field(default_factory=lambda: [0.1, 0.2, 0.4, 1.0])
    model_kinds: list = field(default_factory=lambda: list(MODEL_KINDS))
    seed: int = 0
    output_dir: str = "out"
    model: ModelSection = field(default_factory=lambda: ModelSection(beta0=0.1))
    proposal: ProposalSection = field(default_factory=ProposalSection)
    base_dir: Path = field(default=Path("."), compare=False, repr=False)

    def __post_init__(self):
        bad = [k for k in self.model_kinds if k not in MODEL_KINDS]
        if bad:
            raise ConfigError(f"unknown model kind(s) {', '.join(bad)}")
        for s in self.s_values:
            if not 0 <= s < self.sim.d_min:
                raise ConfigError("each s must satisfy 0 <= s < d_min")
        if not 0 <= self.seed < 2**64:
            raise ConfigError("seed must be a 64-bit unsigned integer")

    @classmethod
    def from_dict(cls, d, base_dir=".", where="config") -> "SimRunConfig":
        d = dict(d)
        sim = _section(d, "sim", SimConfig, _SIM_KINDS, where)
        if "model" in d:
            model = _from_dict(ModelSection, d.pop("model"), f"{where}.model", _MODEL_KINDS)
        else:
            model = ModelSection(beta0=0.1)
        prop = _section(d, "proposal", ProposalSection, _PROPOSAL_KINDS, where)
        if "base_dir" in d:
            raise ConfigError(f"{where}: unknown key(s) base_dir")
        kinds = dict(s_values="floats", model_kinds="strs", seed=int, output_dir=str)
        cfg = _from_dict(cls, d, where, kinds)
        cfg.sim, cfg.model, cfg.proposal = sim, model, prop
        cfg.base_dir = Path(base_dir)
        cfg.__post_init__()
        return cfg

    @classmethod
    def load(cls, path) -> "SimRunConfig":
        path = Path(path)
        return cls.from_dict(_load_json(path), path.parent, str(path))

    def to_dict(self) -> dict:
        return {
            "sim": dataclasses.asdict(self.sim),
            "s_values": list(self.s_values),
            "model_kinds": list(self.model_kinds),
            "seed": self.seed,
            "output_dir": self.output_dir,
            "model": dataclasses.asdict(self.model),
            "proposal": dataclasses.asdict(self.proposal),
        }


@dataclass
class LaplaceRunConfig:
    """Laplace-link diagnostic on a synthetic instance or user data.

    With ``x``/``mu``/``truth`` unset an instance is drawn from ``sim``;
    candidates are sub-matches of the truth plus ``n_wrong`` corrupted ones.
    """

    sim: SimConfig = field(default_factory=lambda: SimConfig(L=10.0, d_min=4.0, M=6, N=8, n_ones=5, s=0.1))
    x: Optional[str] = None
    mu: Optional[str] = None
    truth: Optional[str] = None
    tau: float = 0.2
    n_mc: int = 100_000
    n_wrong: int = 6
    gamma_mode: str = "analytic"
    seed: int = 0
    output_dir: str = "out"
    model: ModelSection = field(default_factory=ModelSection)
    base_dir: Path = field(default=Path("."), compare=False, repr=False)

    def __post_init__(self):
        given = [k for k in ("x", "mu", "truth") if getattr(self, k) is not None]
        if given and len(given) != 3:
            raise ConfigError("x, mu and truth must be given together")
        if not self.tau > 0:
            raise ConfigError("tau must be positive")
        if self.n_mc < 1000:
            raise ConfigError("n_mc must be >= 1000")
        if self.n_wrong < 0:
            raise ConfigError("n_wrong must be >= 0")
        if self.gamma_mode not in ("analytic", "prior"):
            raise ConfigError("gamma_mode must be 'analytic' or 'prior'")
        if not 0 <= self.seed < 2**64:
            raise ConfigError("seed must be a 64-bit unsigned integer")

    @classmethod
    def from_dict(cls, d, base_dir=".", where="config") -> "LaplaceRunConfig":
        d = dict(d)
        sim = _section(d, "sim", SimConfig, _SIM_KINDS, where) if "sim" in d else cls().sim
        model = _section(d, "model", ModelSection, _MODEL_KINDS, where)
        if "base_dir" in d:
            raise ConfigError(f"{where}: unknown key(s) base_dir")
        kinds = dict(x=str, mu=str, truth=str, tau=float, n_mc=int, n_wrong=int, gamma_mode=str, seed=int, output_dir=str)
        cfg = _from_dict(cls, d, where, kinds)
        cfg.sim, cfg.model = sim, model
        cfg.base_dir = Path(base_dir)
        cfg.__post_init__()
        return cfg

    @classmethod
    def load(cls, path) -> "LaplaceRunConfig":
        path = Path(path)
        return cls.from_dict(_load_json(path), path.parent, str(path))

    def to_dict(self) -> dict:
        d = {f.name: getattr(self, f.name) for f in dataclasses.fields(self) if f.name != "base_dir"}
        d["sim"] = dataclasses.asdict(self.sim)
        d["model"] = dataclasses.asdict(self.model)
        return d

    def path(self, key) -> Optional[Path]:
        return _resolve(self.base_dir, getattr(self, key))


def dump_config(cfg, path) -> None:
    Path(path).write_text(json.dumps(cfg.to_dict(), indent=2) + "\n")


# ------------------------------------------------------------------ outputs


def _writer(path):
    fh = open(path, "w", newline="")
    return fh, csv.writer(fh, lineterminator="\n")


def write_trace(path, trace) -> None:
    """``iteration, tau, p, log_posterior`` plus pose columns when sampled."""
    pose = trace.angles is not None
    fh, w = _writer(path)
    with fh:
        head = ["iteration", "tau", "p", "log_posterior"]
        if pose:
            head += ["theta12", "theta13", "theta23", "gamma_x", "gamma_y", "gamma_z"]
        w.writerow(head)
        for k in range(len(trace)):
            row = [int(trace.iteration[k]), fmt(trace.tau[k]), int(trace.n_matched[k]), fmt(trace.log_posterior[k])]
            if pose:
                row += [fmt(v) for v in trace.angles[k]] + [fmt(v) for v in trace.gamma[k]]
            w.writerow(row)


def write_match_probs(path, probs, x_ids, mu_ids) -> None:
    fh, w = _writer(path)
    with fh:
        w.writerow(["x_id", *mu_ids, "unmatched"])
        for pid, row in zip(x_ids, probs):
            w.writerow([pid, *(fmt(v) for v in row)])


def write_threshold_match(path, lam, probs, x_ids, mu_ids) -> None:
    fh, w = _writer(path)
    with fh:
        w.writerow(["x_id", "mu_id", "probability"])
        for i, j in enumerate(lam.assign):
            col = probs.shape[1] - 1 if j == UNMATCHED else j
            w.writerow([x_ids[i], "" if j == UNMATCHED else mu_ids[j], fmt(probs[i, col])])


def write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True, allow_nan=True) + "\n")


SIM_HEADER = ["point_index", "true_role", "mean_proportion", "variance", "s", "model_kind"]


def write_sim_results(path, results) -> None:
    fh, w = _writer(path)
    with fh:
        w.writerow(SIM_HEADER)
        for res in results:
            for r in res.rows():
                w.writerow([r["point_index"], r["true_role"], fmt(r["mean_proportion"]), fmt(r["variance"]), fmt(r["s"]), r["model_kind"]])


def write_laplace(path, estimates) -> None:
    fh, w = _writer(path)
    with fh:
        w.writerow(["candidate", "n_matched", "log_pi_c", "log_pi_p", "mc_se"])
        for k, e in enumerate(estimates):
            w.writerow([k, e.n_matched, fmt(e.log_pi_c), fmt(e.log_pi_p), fmt(e.mc_se)])


def ensure_dir(path) -> Path:
    p = Path(path)
    os.makedirs(p, exist_ok=True)
    return p
