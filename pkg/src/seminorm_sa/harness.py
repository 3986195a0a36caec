"""Experiment orchestration: JSON configs in, CSV traces and a manifest out.

A config is a JSON document with a top-level ``kind``. Every run writes into
one output directory and finishes with ``manifest.json``, which records the
resolved config, package version, seed and a SHA-256 per written file. No
timestamps are stored, so equal (config, seed) pairs give identical bytes.
"""
from __future__ import annotations

import hashlib
import json
import os
from dataclasses import asdict, dataclass, field

import numpy as np

from . import __version__
from .lyapunov import LyapunovError, solve_continuous, solve_discrete, stability_verdict
from .markov import MarkovChain
from .rl import FeatureMap, Mdp, q_learning_run, q_star_oracle, random_mrp, random_unichain_mdp
from .rl import select_J, solve_mrp, td_instance, td_lambda_run
from .sa import (LinearSAProblem, StepsizeSchedule, bound_envelope,
                 linear_bound_constants, linear_bound_envelope, random_linear_problem,
                 run_linear_sa, run_sa, sa_c1_c2, scalar_test_problem)
from .seminorm import Seminorm, affine_fixed_point, complement_basis, fixed_point_iterate

__all__ = [
    "KINDS",
    "ConfigError",
    "ExperimentConfig",
    "ExperimentResult",
    "load_config",
    "read_matrix",
    "run_experiment",
]

KINDS = ("lyapunov", "fp-iterate", "sa-run", "linear-sa-run", "td-lambda", "q-learn",
         "verify-bounds", "acceptance")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_ACCEPTANCE = 0, 1, 2, 3

# Above this horizon traces are recorded on a log grid instead of every step.
FULL_RECORD_LIMIT = 10_000
LOG_POINTS = 200


class ConfigError(ValueError):
    """Invalid or inconsistent experiment configuration."""


def _try_envelope(fn, *args, **kw):
    try:
        return fn(*args, **kw)
    except ValueError as exc:
        if "burn-in" in str(exc):
            return None
        raise


@dataclass
class ExperimentConfig:
    kind: str
    seed: int = 0
    horizon: int = 1000
    trials: int = 100
    out: str = "out"
    schedule: dict = field(default_factory=lambda: {"kind": "constant", "alpha": 0.01})
    instance: dict = field(default_factory=dict)
    params: dict = field(default_factory=dict)
    record: object = "auto"
    base_dir: str = "."

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown experiment kind {self.kind!r}; expected one of {KINDS}")
        if not isinstance(self.seed, (int, np.integer)) or not 0 <= self.seed < 2**64:
            raise ConfigError("seed must be an integer in [0, 2^64)")
        if int(self.horizon) < 1:
            raise ConfigError("horizon must be >= 1")
        if int(self.trials) < 1:
            raise ConfigError("trials must be >= 1")
        self.horizon, self.trials, self.seed = int(self.horizon), int(self.trials), int(self.seed)
        for key in ("A", "Q", "E", "mdp", "chain", "x0", "b"):
            val = self.instance.get(key)
            if isinstance(val, str) and not os.path.exists(self._path(val)):
                raise ConfigError(f"referenced file not found: {val}")

    def _path(self, p):
        return p if os.path.isabs(p) else os.path.join(self.base_dir, p)

    @classmethod
    def from_dict(cls, doc, base_dir="."):
        if not isinstance(doc, dict) or "kind" not in doc:
            raise ConfigError("config must be a JSON object with a 'kind' field")
        known = {f for f in cls.__dataclass_fields__ if f != "base_dir"}
        extra = set(doc) - known
        if extra:
            raise ConfigError(f"unknown config fields: {sorted(extra)}")
        return cls(**doc, base_dir=base_dir)

    def to_dict(self):
        d = asdict(self)
        d.pop("base_dir")
        return d

    def schedule_obj(self):
        s = dict(self.schedule)
        try:
            kind = s.pop("kind")
            return StepsizeSchedule(kind, float(s.pop("alpha")), float(s.pop("h", 0.0)),
                                    float(s.pop("xi", 1.0)))
        except (KeyError, ValueError, TypeError) as exc:
            raise ConfigError(f"invalid schedule: {exc}") from exc

    def record_at(self):
        if self.record == "all" or (self.record == "auto" and self.horizon <= FULL_RECORD_LIMIT):
            return None
        n = LOG_POINTS if self.record == "auto" else int(self.record)
        ks = np.unique(np.geomspace(1, self.horizon, n).astype(np.int64) - 1)
        return np.unique(np.r_[0, ks, self.horizon - 1])


def load_config(path):
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return ExperimentConfig.from_dict(doc, base_dir=os.path.dirname(os.path.abspath(path)))


def read_matrix(source, base_dir="."):
    """Matrix from an inline array, a CSV file, or a JSON array-of-rows file."""
    if source is None:
        return None
    if isinstance(source, str):
        path = source if os.path.isabs(source) else os.path.join(base_dir, source)
        if path.endswith(".json"):
            with open(path) as fh:
                return np.asarray(json.load(fh), dtype=float)
        return np.loadtxt(path, delimiter=",", ndmin=2)
    return np.asarray(source, dtype=float)


# ---------------------------------------------------------------------------
# output
# ---------------------------------------------------------------------------

@dataclass
class ExperimentResult:
    status: int
    out_dir: str
    files: list
    info: dict = field(default_factory=dict)


class _Writer:
    def __init__(self, out_dir):
        self.out_dir = out_dir
        os.makedirs(out_dir, exist_ok=True)
        self.files = []

    def path(self, name):
        self.files.append(name)
        return os.path.join(self.out_dir, name)

    def csv(self, name, header, columns, fmts):
        rows = zip(*columns)
        with open(self.path(name), "w", newline="") as fh:
            fh.write(",".join(header) + "\n")
            for row in rows:
                fh.write(",".join(f.format(v) for f, v in zip(fmts, row)) + "\n")

    def json(self, name, doc):
        with open(self.path(name), "w") as fh:
            json.dump(doc, fh, indent=2, sort_keys=True, default=_jsonable)
            fh.write("\n")

    def manifest(self, cfg, info):
        entries = []
        for name in sorted(set(self.files)):
            with open(os.path.join(self.out_dir, name), "rb") as fh:
                entries.append({"file": name, "sha256": hashlib.sha256(fh.read()).hexdigest()})
        doc = {"config": cfg.to_dict(), "version": __version__, "seed": cfg.seed,
               "files": entries, "info": info}
        with open(os.path.join(self.out_dir, "manifest.json"), "w") as fh:
            json.dump(doc, fh, indent=2, sort_keys=True, default=_jsonable)
            fh.write("\n")


def _jsonable(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer, np.bool_)):
        return o.item()
    raise TypeError(f"not JSON serializable: {type(o)}")


R17 = "{:.17g}"


def _write_run(w, run):
    n, m = run.p_errors.shape
    ks = np.tile(run.ks, n)
    trial = np.repeat(np.arange(n), m)
    w.csv("traces.csv", ["k", "trial", "p_error", "coord_sup"],
          [ks, trial, run.p_errors.ravel(), run.coord_sup.ravel()],
          ["{}", "{}", R17, R17])
    s = run.summary()
    w.csv("summary.csv", ["k", "mean_sq_error", "ci_low", "ci_high"],
          [s["k"], s["mean_sq_error"], s["ci_low"], s["ci_high"]], ["{}", R17, R17, R17])


def _write_envelope(w, env):
    w.csv("envelope.csv", ["k", "bound_exact", "bound_closed_form"],
          [env.ks, env.exact, env.closed_form], ["{}", R17, R17])


# ---------------------------------------------------------------------------
# experiment kinds
# ---------------------------------------------------------------------------

def _x0(cfg, d):
    x0 = cfg.instance.get("x0")
    if x0 is None:
        return np.zeros(d)
    return read_matrix(x0, cfg.base_dir).reshape(d)


def _lyapunov(cfg, w):
    inst = cfg.instance
    mode = {"d": "discrete", "c": "continuous"}.get(inst.get("mode", "d"), inst.get("mode"))
    if mode not in ("discrete", "continuous"):
        raise ConfigError("mode must be d, c, discrete or continuous")
    if "A" not in inst or "Q" not in inst:
        raise ConfigError("lyapunov needs matrices A and Q")
    A = read_matrix(inst["A"], cfg.base_dir)
    Q = read_matrix(inst["Q"], cfg.base_dir)
    E = read_matrix(inst.get("E"), cfg.base_dir)
    solve = solve_discrete if mode == "discrete" else solve_continuous
    cert = solve(A, Q, E)
    w.json("certificate.json", cert.to_dict())
    rep = stability_verdict(A, cert.E_basis, mode, seed=cfg.seed)
    w.json("verdict.json", {"mode": mode, "statements": {str(k): v for k, v in rep.statements.items()},
                            "unanimous": rep.unanimous, "verdict": rep.verdict})
    return {"residual": cert.residual, "c2_prime": cert.c2_prime}


def _example_affine():
    return np.diag([0.5, 2.0]), np.zeros(2), Seminorm.quadratic(np.diag([1.0, 0.0])), np.ones(2)


def _fp_iterate(cfg, w):
    inst = cfg.instance
    if inst.get("example", "A" not in inst):
        A, b, p, x0 = _example_affine()
    else:
        A = read_matrix(inst["A"], cfg.base_dir)
        d = A.shape[0]
        b = np.zeros(d) if "b" not in inst else read_matrix(inst["b"], cfg.base_dir).reshape(d)
        p = Seminorm.from_dict(inst["seminorm"]) if "seminorm" in inst else Seminorm.span(d)
        x0 = _x0(cfg, d)
    xs = affine_fixed_point(A, b, p)
    trace = fixed_point_iterate(lambda x: A @ x + b, p, x0, cfg.horizon - 1, x_star=xs)
    its = np.asarray(trace.iterates)
    n = len(trace.errors)
    w.csv("traces.csv", ["k", "trial", "p_error", "coord_sup"],
          [np.arange(n), np.zeros(n, int), trace.errors, np.abs(its).max(axis=1)],
          ["{}", "{}", R17, R17])
    return {"gamma": trace.gamma, "final_error": float(trace.errors[-1])}


def _scalar_problem(cfg):
    inst = cfg.instance
    kw = {k: inst[k] for k in ("sigma", "switch") if k in inst}
    for k in ("a", "b"):
        if k in inst:
            kw[k] = tuple(inst[k])
    return scalar_test_problem(**kw)


def _sa_run(cfg, w, verify=False):
    prob = _scalar_problem(cfg)
    sched = cfg.schedule_obj()
    x0 = _x0(cfg, prob.dim)
    consts = prob.constants(cfg.params.get("theta"))
    c1, c2 = sa_c1_c2(prob, consts, x0)
    env = _try_envelope(bound_envelope, consts, sched, prob.chain, c1, c2, cfg.horizon)
    run = run_sa(prob, sched, cfg.horizon, cfg.trials, cfg.seed, x0=x0,
                 record_at=cfg.record_at(), check=False)
    _write_run(w, run)
    return _envelope_info(w, run, env, consts, verify)


def _envelope_info(w, run, env, consts, verify):
    if env is None:
        # horizon shorter than the burn-in: nothing to bound
        return {"K": None, "threshold": consts.threshold()}
    _write_envelope(w, env)
    info = {"K": env.K, "condition_holds": env.binding, "threshold": consts.threshold()}
    if verify:
        info.update(_compare(run, env))
    return info


def _compare(run, env, n_se=3.0):
    ks = run.ks[run.ks >= env.K]
    sel = np.isin(run.ks, ks)
    m, se = run.mean_sq()[sel], run.stderr_sq()[sel]
    b = env.exact[ks - env.K]
    margin = b + n_se * se - m
    return {"envelope_holds": bool((margin >= 0).all()),
            "worst_ratio": float(np.max(m / b)) if ks.size else 0.0}


def _linear_problem(cfg):
    inst = cfg.instance
    if "A_table" in inst:
        A_t = np.asarray(inst["A_table"], dtype=float)
        b_t = np.asarray(inst["b_table"], dtype=float)
        chain = MarkovChain(read_matrix(inst["chain"], cfg.base_dir))
        A_bar = np.tensordot(chain.stationary, A_t, axes=1)
        E = read_matrix(inst.get("E"), cfg.base_dir)
        d = A_bar.shape[0]
        if E is None:
            E = np.zeros((d, 0))
        C = complement_basis(E.reshape(d, -1), d)
        cert = solve_continuous(A_bar, C @ C.T, E)
        return LinearSAProblem(A_t, b_t, chain, cert)
    return random_linear_problem(int(inst.get("d", 3)), int(inst.get("n_states", 3)),
                                 int(inst.get("kernel_dim", 1)), int(inst.get("seed", 0)))


def _linear_sa_run(cfg, w):
    prob = _linear_problem(cfg)
    sched = cfg.schedule_obj()
    x0 = _x0(cfg, prob.dim)
    consts = linear_bound_constants(prob, x0)
    env = _try_envelope(linear_bound_envelope, prob, sched, consts, cfg.horizon,
                        mixing=cfg.params.get("mixing", "operator"))
    run = run_linear_sa(prob, sched, cfg.horizon, cfg.trials, cfg.seed, x0=x0,
                        record_at=cfg.record_at())
    _write_run(w, run)
    w.json("certificate.json", prob.cert.to_dict())
    return _envelope_info(w, run, env, consts, True)


def _mdp(cfg):
    inst = cfg.instance
    if "mdp" in inst:
        path = inst["mdp"]
        return Mdp.load(path if os.path.isabs(path) else os.path.join(cfg.base_dir, path))
    gen = inst.get("generator", {})
    return random_unichain_mdp(int(gen.get("n_states", 3)), int(gen.get("n_actions", 2)),
                               seed=int(gen.get("seed", 0)))


def _td_lambda(cfg, w):
    inst = cfg.instance
    lam = float(cfg.params.get("lambda", 0.0))
    if "mdp" in inst or "generator" in inst:
        mdp = _mdp(cfg)
        pol = inst.get("policy")
        pol = (np.full((mdp.n_states, mdp.n_actions), 1.0 / mdp.n_actions)
               if pol is None else np.asarray(pol))
        mrp = solve_mrp(mdp, pol)
    else:
        mrp = random_mrp(int(inst.get("n_states", 5)), seed=int(inst.get("seed", 0)))
    feats = inst.get("features", "tabular")
    fm = FeatureMap.tabular(mrp.n_states) if feats == "tabular" else FeatureMap(
        read_matrix(feats, cfg.base_dir))
    ti = td_instance(mrp, fm, lam, cfg.params.get("c_alpha"))
    run = td_lambda_run(ti, cfg.schedule_obj(), cfg.horizon, cfg.trials, cfg.seed,
                        record_at=cfg.record_at())
    _write_run(w, run)
    w.json("td_solution.json", {"average_reward": ti.mrp.r, "theta_star": ti.theta_star,
                                "kernel_basis": ti.S_basis, "Delta": ti.Delta,
                                "c_alpha": ti.c_alpha, "c_alpha_min": ti.c_alpha_min})
    return {"Delta": ti.Delta, "c_alpha": ti.c_alpha}


def _q_learn(cfg, w):
    mdp = _mdp(cfg)
    J = cfg.params.get("J")
    gamma_hat = None
    if J is None:
        J, gamma_hat = select_J(mdp, seed=cfg.seed)
    J = int(J)
    Qs, r = q_star_oracle(mdp, J)
    run = q_learning_run(mdp, J, cfg.schedule_obj(), cfg.horizon, cfg.trials, cfg.seed,
                         q_star=Qs, record_at=cfg.record_at())
    _write_run(w, run)
    w.json("q_star.json", {"J": J, "average_reward": r, "Q_star": Qs, "gamma_hat": gamma_hat})
    return {"J": J, "average_reward": r}


def _acceptance(cfg, w):
    from .acceptance import acceptance_suite

    report = acceptance_suite(cfg.seed, thresholds=cfg.params.get("thresholds"),
                              only=cfg.params.get("only"))
    w.json("acceptance.json", report.to_dict())
    return {"all_passed": report.all_passed, "lines": report.lines()}


_RUNNERS = {
    "lyapunov": _lyapunov,
    "fp-iterate": _fp_iterate,
    "sa-run": _sa_run,
    "linear-sa-run": _linear_sa_run,
    "td-lambda": _td_lambda,
    "q-learn": _q_learn,
    "verify-bounds": lambda cfg, w: _sa_run(cfg, w, verify=True),
    "acceptance": _acceptance,
}


def run_experiment(cfg: ExperimentConfig) -> ExperimentResult:
    """Run one experiment and write its artifacts.

    Returns status 0 on success, 1 for config errors, 2 for numerical
    failures and 3 when a bound check or acceptance criterion fails.
    """
    out = cfg.out if os.path.isabs(cfg.out) else os.path.join(os.getcwd(), cfg.out)
    w = _Writer(out)
    try:
        info = _RUNNERS[cfg.kind](cfg, w)
    except ConfigError as exc:
        return ExperimentResult(EXIT_CONFIG, out, w.files, {"error": str(exc)})
    except (LyapunovError, np.linalg.LinAlgError, RuntimeError, ValueError, ArithmeticError) as exc:
        return ExperimentResult(EXIT_NUMERIC, out, w.files, {"error": str(exc)})
    status = EXIT_OK
    if info.get("envelope_holds") is False or info.get("all_passed") is False:
        status = EXIT_ACCEPTANCE
    w.manifest(cfg, {k: v for k, v in info.items() if k != "lines"})
    return ExperimentResult(status, out, w.files + ["manifest.json"], info)
