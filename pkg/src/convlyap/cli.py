"""Config-driven experiment runner.

Each subcommand recomputes its prerequisites from the config and seed, so
running ``certify`` alone and running ``pipeline`` give the same
certificate bytes. Exit status: 0 when every verdict passes, 2 when one
fails, 1 on bad input or an unexpected error.

Set ``CONVLYAP_THREADS`` to evaluate independent states concurrently.
"""

from __future__ import annotations

import argparse
import copy
import json
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from .certify import (
    StabilizationCertificate,
    fit_batches,
    hoeffding_n,
    mean_to_as_check,
    uniform_envelope,
)
from .chain import GoalSet, LinearFeedback, linear_uniform_chain, simulate_batch
from .errors import ConfigurationError, CoverageError
from .kappa.sontag import sontag_factorize
from .lyapunov import (
    KAPPA_UP_FACTOR,
    ProbabilisticLF,
    TabulatedLF,
    mean_lf_kappas,
    truncation_horizon,
    verify_decay_mean,
    verify_decay_prob,
)
from .synth import (
    SynthesisConfig,
    reaching_time_bound,
    stability_radius,
    steepest_descent_policy,
    verify_reaching,
)

SUBCOMMANDS = (
    "simulate",
    "certify",
    "construct-lf",
    "verify-decay",
    "synthesize",
    "verify-reaching",
    "pipeline",
)

DEFAULTS = {
    "seed": 0,
    "certify": {
        "horizon": 30,
        "n_traj": None,
        "accuracy": 0.05,
        "confidence": 0.05,
        "eta": 0.04,
        "eta_prime": 0.01,
        "lambda_kappa": 0.01,
        "lam_floor": 1e-3,
    },
    "lyapunov": {
        "tol": 1e-6,
        "n_traj": 50,
        "n_mc": 50,
        "mean_n_mc": 2000,
        "grid_points": 81,
    },
    "synth": {"n_actions": 41, "n_mc_per_action": 32, "n_traj": 200, "rtol": 1e-6},
}


def bundled_configs() -> list[str]:
    return sorted(p.name for p in resources.files("convlyap.configs").iterdir() if p.name.endswith(".json"))


def load_bundled(name: str) -> dict:
    return json.loads(resources.files("convlyap.configs").joinpath(name).read_text())


# -- config ---------------------------------------------------------------------


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        out[k] = _merge(out[k], v) if isinstance(v, dict) and isinstance(out.get(k), dict) else v
    return out


def _need(cfg: dict, path: str):
    node = cfg
    for part in path.split("."):
        if not isinstance(node, dict) or part not in node:
            raise ConfigurationError(f"config field '{path}' is missing")
        node = node[part]
    return node


def _matrix(value, path: str) -> np.ndarray:
    try:
        arr = np.atleast_2d(np.asarray(value, dtype=float))
    except (TypeError, ValueError):
        raise ConfigurationError(f"config field '{path}' must be a numeric matrix") from None
    if not np.all(np.isfinite(arr)):
        raise ConfigurationError(f"config field '{path}' has non-finite entries")
    return arr


@dataclass(frozen=True)
class Experiment:
    """A validated configuration with its derived objects."""

    config: dict
    model: object
    goal: GoalSet
    policy: LinearFeedback
    initial_states: np.ndarray
    test_states: np.ndarray
    grid_axes: tuple
    action_low: np.ndarray
    action_high: np.ndarray
    reach_states: np.ndarray

    @property
    def seed(self) -> int:
        return int(self.config["seed"])

    def section(self, name: str) -> dict:
        return self.config[name]


def resolve_config(raw: dict, seed: int | None = None) -> Experiment:
    """Fill defaults and validate every field before any computation."""
    if not isinstance(raw, dict):
        raise ConfigurationError("config must be a JSON object")
    cfg = _merge(DEFAULTS, raw)
    if seed is not None:
        cfg["seed"] = int(seed)
    if not (isinstance(cfg["seed"], int) and 0 <= cfg["seed"] < 2**64):
        raise ConfigurationError("config field 'seed' must be an unsigned 64-bit integer")

    F = _matrix(_need(cfg, "chain.F"), "chain.F")
    G = _matrix(_need(cfg, "chain.G"), "chain.G")
    wbar = float(_need(cfg, "chain.wbar"))
    model = linear_uniform_chain(F, G, wbar)
    K = _matrix(_need(cfg, "policy.gain"), "policy.gain")
    if K.shape != (model.action_dim, model.dim):
        raise ConfigurationError(f"config field 'policy.gain' must have shape ({model.action_dim}, {model.dim})")
    goal = GoalSet(float(_need(cfg, "goal.radius")), float(_need(cfg, "goal.inflation")))

    c = cfg["certify"]
    eta, eta_p = float(c["eta"]), float(c["eta_prime"])
    if not (0 <= eta and eta_p > 0 and eta + eta_p < 1):
        raise ConfigurationError("config fields 'certify.eta' + 'certify.eta_prime' must be < 1 with eta >= 0, eta_prime > 0")
    if not 0 < float(c["lambda_kappa"]) < 1:
        raise ConfigurationError("config field 'certify.lambda_kappa' must lie in (0, 1)")
    if c["n_traj"] is None:
        c["n_traj"] = hoeffding_n(float(c["accuracy"]), float(c["confidence"]))
    if int(c["horizon"]) < 1 or int(c["n_traj"]) < 1:
        raise ConfigurationError("config fields 'certify.horizon' and 'certify.n_traj' must be positive")

    def states(path):
        arr = _matrix(_need(cfg, path), path)
        if arr.shape[1] != model.dim:
            raise ConfigurationError(f"config field '{path}' must list states of dimension {model.dim}")
        return arr

    init = states("certify.initial_states")
    tests = states("lyapunov.test_states")
    reach = states("synth.reach_states")
    lo = _matrix(_need(cfg, "lyapunov.grid_low"), "lyapunov.grid_low").ravel()
    hi = _matrix(_need(cfg, "lyapunov.grid_high"), "lyapunov.grid_high").ravel()
    if lo.size != model.dim or hi.size != model.dim or np.any(hi <= lo):
        raise ConfigurationError("config fields 'lyapunov.grid_low/grid_high' must bound a box in state space")
    n_pts = int(cfg["lyapunov"]["grid_points"])
    axes = tuple(np.linspace(a, b, n_pts) for a, b in zip(lo, hi))
    a_lo = _matrix(_need(cfg, "synth.action_low"), "synth.action_low").ravel()
    a_hi = _matrix(_need(cfg, "synth.action_high"), "synth.action_high").ravel()
    if a_lo.size != model.action_dim or a_hi.size != model.action_dim:
        raise ConfigurationError("config fields 'synth.action_low/action_high' must match the action dimension")
    return Experiment(cfg, model, goal, LinearFeedback(K), init, tests, axes, a_lo, a_hi, reach)


def parse_config_text(text: str) -> dict:
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"malformed config at line {exc.lineno}, column {exc.colno}: {exc.msg}") from None


# -- stages -----------------------------------------------------------------------


def _threads() -> int:
    try:
        return max(1, int(os.environ.get("CONVLYAP_THREADS", "1")))
    except ValueError:
        return 1


def _pmap(fn, items):
    items = list(items)
    n = _threads()
    if n == 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, items))


def _sub(seed: int, k: int) -> int:
    return int(np.random.SeedSequence(seed, spawn_key=(1000 + k,)).generate_state(1, dtype=np.uint64)[0])


class Run:
    """Lazily computed pipeline stages sharing one validated experiment."""

    def __init__(self, exp: Experiment):
        self.exp = exp
        self._cache: dict = {}

    def _once(self, key, fn):
        if key not in self._cache:
            self._cache[key] = fn()
        return self._cache[key]

    # simulate
    def batches(self):
        def go():
            e, c = self.exp, self.exp.section("certify")
            per = math.ceil(int(c["n_traj"]) / len(e.initial_states))
            return [
                simulate_batch(e.model, e.policy, e.goal, s0, int(c["horizon"]), per, _sub(e.seed, k))
                for k, s0 in enumerate(e.initial_states)
            ]
        return self._once("batches", go)

    def simulate_report(self):
        bs = self.batches()
        checks = [mean_to_as_check(b, tol=1e-3) for b in bs]
        diverged = int(sum(int(b.diverged.sum()) for b in bs))
        rows = [
            {
                "initial_state": b.initial_state.tolist(),
                "n_traj": b.n_traj,
                "diverged": int(b.diverged.sum()),
                "final_mean_dist": float(ch.mean_curve[-1]),
                "as_frequency": ch.frequency,
                "mean_converged": ch.mean_converged,
                "implication_holds": ch.implication_holds,
            }
            for b, ch in zip(bs, checks)
        ]
        ok = diverged == 0 and all(ch.implication_holds for ch in checks)
        return {"stage": "simulate", "batches": rows, "verdict": "PASS" if ok else "FAIL"}

    def trajectories_csv(self):
        parts = []
        offset = 0
        for b in self.batches():
            text = b.to_csv().splitlines()
            if not parts:
                parts.append(text[0])
            for line in text[1:]:
                tid, rest = line.split(",", 1)
                parts.append(f"{int(tid) + offset},{rest}")
            offset += b.n_traj
        return "\n".join(parts) + "\n"

    # certify
    def certificate(self) -> StabilizationCertificate:
        def go():
            c = self.exp.section("certify")
            return uniform_envelope(
                fit_batches(self.batches(), lam_floor=float(c["lam_floor"])), float(c["eta"]), float(c["eta_prime"]),
                lambda_kappa=float(c["lambda_kappa"]), confidence=float(c["confidence"]),
            )
        return self._once("cert", go)

    def _require_cert(self):
        cert = self.certificate()
        if not cert.passed:
            raise StageFailed("certificate verdict is FAIL; later stages need a passing certificate")
        return cert

    # construct-lf
    def lf(self) -> ProbabilisticLF:
        def go():
            cert = self._require_cert()
            env = cert.envelope
            ly = self.exp.section("lyapunov")
            e = self.exp
            return ProbabilisticLF(
                e.model, e.policy, e.goal, sontag_factorize(env), env, cert.c0,
                int(ly["n_traj"]), _sub(e.seed, 1), float(ly["tol"]),
            )
        return self._once("lf", go)

    def table(self) -> TabulatedLF:
        def go():
            lf = self.lf()
            axes = self.exp.grid_axes
            pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, len(axes))

            def val(p):
                try:
                    return lf.evaluate(p)
                except CoverageError:
                    return (math.nan, 0)
            res = _pmap(val, pts)
            vals = np.array([r[0] for r in res]).reshape(tuple(a.size for a in axes))
            if not np.all(np.isfinite(vals)):
                bad = pts[~np.isfinite(vals.ravel())][0].tolist()
                raise StageFailed(f"no covered trajectory from grid state {bad}; widen the certified initial states")
            self._cache["table_counts"] = [int(r[1]) for r in res]
            return TabulatedLF(axes, vals)
        return self._once("table", go)

    def lf_report(self):
        lf, tab = self.lf(), self.table()
        axes = self.exp.grid_axes
        pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, len(axes))
        rows, ok = [], True
        goal = self.exp.goal
        for p, L, n in zip(pts, tab.table.ravel(), self._cache["table_counts"]):
            d = float(goal.dist_prime(p))
            lo = float(lf.sontag.kappa1.inverse(d))
            hi = float(KAPPA_UP_FACTOR * lf.sontag.kappa2(d + lf.c0_prime))
            good = bool(lo <= L <= hi)
            ok = ok and good
            rows.append({"state": p.tolist(), "dist_prime": d, "L": float(L), "covered": n,
                         "kappa_low": lo, "kappa_up": hi, "sandwich": good})
        report = {
            "stage": "construct-lf",
            "kind": "probabilistic",
            "kappa1": lf.sontag.kappa1.to_dict(),
            "kappa2": lf.sontag.kappa2.to_dict(),
            "kappa_up_factor": KAPPA_UP_FACTOR,
            "c0_prime": lf.c0_prime,
            "tol": lf.tol,
            "rows": rows,
            "verdict": "PASS" if ok else "FAIL",
        }
        return report

    # verify-decay
    def decay_reports(self):
        def go():
            e, c, ly = self.exp, self.exp.section("certify"), self.exp.section("lyapunov")
            lf = self.lf()
            nu = lf.sontag.kappa1.inverse
            prob = verify_decay_prob(
                e.model, e.policy, e.goal, lf, nu, float(c["eta"]), float(c["eta_prime"]),
                e.test_states, int(ly["n_mc"]), _sub(e.seed, 2), slack=float(ly["tol"]),
            )
            vbar = e.goal.inflation if e.goal.inflation > 0 else 0.1 * max(e.goal.radius, 1.0)
            top = float(np.max(np.abs(np.concatenate([a for a in e.grid_axes]))))
            w_grid = np.linspace(0.0, max(10.0, 2.0 * top), 401)
            mk = mean_lf_kappas(lf.sontag, vbar, w_grid)
            d_sup = float(np.max(e.goal.dist_prime(e.test_states)))
            T = truncation_horizon(float(lf.sontag.kappa2(d_sup)), float(ly["tol"]))
            mean = verify_decay_mean(
                e.model, e.policy, e.goal, mk.rho_prime, e.test_states, int(ly["mean_n_mc"]),
                _sub(e.seed, 3), horizon=T,
            )
            return prob, mean
        return self._once("decay", go)

    def decay_report(self):
        prob, mean = self.decay_reports()
        ok = prob.verdict == "PASS" and mean.verdict == "PASS"
        return {"stage": "verify-decay", "probabilistic": prob.to_dict(), "mean": mean.to_dict(),
                "verdict": "PASS" if ok else "FAIL"}

    # synthesize
    def policy(self):
        def go():
            e, s = self.exp, self.exp.section("synth")
            cfg = SynthesisConfig.grid(e.action_low, e.action_high, int(s["n_actions"]),
                                       n_mc_per_action=int(s["n_mc_per_action"]),
                                       eta=float(self.certificate().eta))
            nu = self.lf().sontag.kappa1.inverse
            rtol = float(e.section("synth")["rtol"])
            return steepest_descent_policy(e.model, e.goal, self.table(), nu, cfg, _sub(e.seed, 4), rtol)
        return self._once("policy", go)

    def synth_report(self):
        pol = self.policy()
        rows = []
        for s in self.exp.test_states:
            d = pol.decide(s)
            rows.append({"state": s.tolist(), "action": d.action.tolist(), "index": d.index,
                         "probability": float(d.probabilities[d.index]), "radius": d.radius,
                         "flagged": d.flagged})
        ok = not any(r["flagged"] for r in rows)
        return {"stage": "synthesize", "rows": rows, "verdict": "PASS" if ok else "FAIL"}

    # verify-reaching
    def reaching_report(self):
        e, s = self.exp, self.exp.section("synth")
        lf, cert, pol = self.lf(), self.certificate(), self.policy()
        k1, k2 = lf.sontag.kappa1, lf.sontag.kappa2
        kup = k2.scaled(KAPPA_UP_FACTOR)
        low = _Inv(k1)
        infl = e.goal.inflation if e.goal.inflation > 0 else 0.1 * max(e.goal.radius, 1.0)
        goal_prime = GoalSet(e.goal.radius + infl)
        rows = []
        for k, s0 in enumerate(e.reach_states):
            d0 = float(e.goal.dist(s0))
            T_L = reaching_time_bound(_Shift(kup, lf.c0_prime), low, low, d0, infl)
            rep = verify_reaching(e.model, pol, goal_prime, s0, T_L, cert.eta, int(s["n_traj"]),
                                  _sub(e.seed, 10 + k))
            row = rep.to_dict()
            row["stability_radius"] = stability_radius(low, _Shift(kup, lf.c0_prime), d0, 2 * e.goal.radius)
            rows.append(row)
        ok = all(r["verdict"] == "PASS" for r in rows)
        return {"stage": "verify-reaching", "rows": rows, "verdict": "PASS" if ok else "FAIL"}


@dataclass(frozen=True)
class _Inv:
    base: object

    def __call__(self, v):
        return self.base.inverse(v)

    def inverse(self, y):
        return self.base(y)


@dataclass(frozen=True)
class _Shift:
    """``v -> f(v + c)``, the upper sandwich function with the offset folded in."""

    base: object
    c: float

    def __call__(self, v):
        return self.base(np.asarray(v, dtype=float) + self.c)

    def inverse(self, y):
        return np.maximum(0.0, np.asarray(self.base.inverse(y), dtype=float) - self.c)


class StageFailed(Exception):
    """A prerequisite stage produced a FAIL verdict or unusable output."""


# -- output -------------------------------------------------------------------------


def _dump(obj) -> str:
    return json.dumps(obj, indent=2) + "\n"


def _write(out: Path, name: str, text: str, quiet: bool):
    out.mkdir(parents=True, exist_ok=True)
    (out / name).write_text(text)
    if not quiet:
        print(f"wrote {out / name}")


def _wrap(exp: Experiment, report: dict) -> dict:
    return {"config": exp.config, "seed": exp.seed, **report}


STAGE_OUTPUTS = {
    "simulate": lambda r: [("simulate.json", _dump(_wrap(r.exp, r.simulate_report()))),
                           ("trajectories.csv", r.trajectories_csv())],
    "certify": lambda r: [("certificate.json", _dump(_wrap(r.exp, {"stage": "certify", **r.certificate().to_dict()})))],
    "construct-lf": lambda r: [("lf.json", _dump(_wrap(r.exp, r.lf_report())))],
    "verify-decay": lambda r: [("decay.json", _dump(_wrap(r.exp, r.decay_report()))),
                               ("decay_prob.csv", r.decay_reports()[0].to_csv()),
                               ("decay_mean.csv", r.decay_reports()[1].to_csv())],
    "synthesize": lambda r: [("synthesis.json", _dump(_wrap(r.exp, r.synth_report())))],
    "verify-reaching": lambda r: [("reaching.json", _dump(_wrap(r.exp, r.reaching_report())))],
}


def _verdicts(files) -> list[str]:
    out = []
    for name, text in files:
        if name.endswith(".json"):
            out.append(json.loads(text)["verdict"])
    return out


def run(subcommand: str, config: dict, out: Path, seed: int | None = None, quiet: bool = False) -> int:
    """Execute one subcommand; returns the process exit status."""
    try:
        exp = resolve_config(config, seed)
    except ConfigurationError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    r = Run(exp)
    stages = [s for s in SUBCOMMANDS if s != "pipeline"] if subcommand == "pipeline" else [subcommand]
    verdicts = []
    for stage in stages:
        try:
            files = STAGE_OUTPUTS[stage](r)
        except StageFailed as exc:
            print(f"{stage}: FAIL ({exc})", file=sys.stderr)
            _write(out, f"{stage}.error.json", _dump(_wrap(exp, {"stage": stage, "error": str(exc), "verdict": "FAIL"})), quiet)
            return 2
        for name, text in files:
            _write(out, name, text, quiet)
        verdicts += _verdicts(files)
        if not quiet:
            print(f"{stage}: {', '.join(_verdicts(files))}")
    return 0 if all(v == "PASS" for v in verdicts) else 2


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="convlyap", description=__doc__.splitlines()[0])
    p.add_argument("subcommand", choices=SUBCOMMANDS)
    p.add_argument("--config", required=True,
                   help="path to a JSON config, or the name of a bundled one (%s)" % ", ".join(bundled_configs()))
    p.add_argument("--seed", type=int, default=None, help="override the config seed (u64)")
    p.add_argument("--out", default="convlyap-out", help="output directory")
    p.add_argument("--quiet", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        path = Path(args.config)
        if path.exists():
            text = path.read_text()
        elif args.config in bundled_configs():
            text = resources.files("convlyap.configs").joinpath(args.config).read_text()
        else:
            raise ConfigurationError(f"config file not found: {args.config}")
        raw = parse_config_text(text)
    except ConfigurationError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    try:
        return run(args.subcommand, raw, Path(args.out), args.seed, args.quiet)
    except Exception as exc:  # noqa: BLE001 - report and map to the error status
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
