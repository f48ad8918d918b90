"""Command-line runner.

Verbs: ``run``, ``spectrum``, ``orbit``, ``sweep``, ``levels``, ``simulate``,
``tune-horizon``.  Global flags ``--threads`` (default: the
``ISOSTABLES_THREADS`` environment variable, else all cores), ``--output``
(overrides the configuration's ``output_dir``) and ``--seed``.

Exit codes: 0 success, 1 numerical failure, 2 I/O or configuration failure.
"""

from __future__ import annotations

import argparse
import json
import math
import shutil
import sys
import tempfile
import time
import warnings
from pathlib import Path

import numpy as np

from . import __version__
from . import averages as av
from . import config as cf
from .chart import ChartError, build_chart
from .cycle import (FourierOrbit, HarmonicBalanceError, PeriodDetectionError,
                    continuation_solve, orbit_from_integration, planar_floquet, seed_orbit)
from .fields import (Box, GridField, InverseMapHole, NotInterpolable, Plane, SweepError,
                     SweepSettings, THREADS_ENV, inverse_map, isochrons, level_sets, sweep)
from .flow import EscapedBasin, IntegratorOptions, KoopmanSpectrum, SpectrumError, floquet_spectrum
from .models import ModelError, builtin_model, hopf_amplitude, load_polynomial_model
from .reduction import (FieldBundle, InputSignal, ReductionError, classic_pulse_map,
                        compare_full, compute_prc, full_pulses, project, pulse_map,
                        simulate_classic_phase, simulate_reduced, wrap)

EXIT_OK, EXIT_NUMERICAL, EXIT_IO = 0, 1, 2

NUMERICAL_ERRORS = (HarmonicBalanceError, PeriodDetectionError, SpectrumError, ChartError,
                    SweepError, ReductionError, NotInterpolable, InverseMapHole, EscapedBasin,
                    av.OutsideBasin, av.HorizonBlowup, av.VariationalBlowup,
                    FloatingPointError, np.linalg.LinAlgError, ArithmeticError)
IO_ERRORS = (cf.ConfigError, ModelError, OSError)


class StageError(RuntimeError):
    def __init__(self, stage, exc):
        super().__init__(f"stage {stage!r} failed: {exc}")
        self.stage = stage
        self.exc = exc


def _fmt(v: float) -> str:
    return f"{v:.17g}"


def _write_json(path: Path, data) -> None:
    path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")


# --- pipeline --------------------------------------------------------------------


class Pipeline:
    """Stages of one experiment with an on-disk cache keyed by content hashes
    of the upstream configuration."""

    def __init__(self, cfg: cf.ExperimentConfig, output_dir=None, threads=None, seed=None):
        self.cfg = cfg
        self.res = cf.resolve(cfg)
        self.out = Path(output_dir if output_dir is not None else cfg.output_dir)
        self.cache = self.out / "cache"
        self.threads = threads
        self.seed = cfg.seed if seed is None else seed
        self.keys = cf.stage_keys(cfg, extra=__version__)
        self.records: dict = {}
        self.files: list = []
        self._memo: dict = {}

    # -- bookkeeping -----------------------------------------------------------

    def _stage_dir(self, stage):
        return self.cache / f"{stage}-{self.keys[stage]}"

    def _artifact(self, name) -> Path:
        p = self.out / name
        if p not in self.files:
            self.files.append(p)
        return p

    def _run_stage(self, stage, fn):
        if stage in self._memo:
            return self._memo[stage]
        t0 = time.perf_counter()
        d = self._stage_dir(stage)
        cached = (d / "done").exists()
        try:
            value = fn(d, cached)
        except Exception as exc:
            self.records[stage] = {"status": "failed", "key": self.keys[stage],
                                   "error": f"{type(exc).__name__}: {exc}"}
            raise StageError(stage, exc) from exc
        if not cached:
            d.mkdir(parents=True, exist_ok=True)
            (d / "done").write_text(self.keys[stage] + "\n")
        self.records[stage] = {"status": "ok", "key": self.keys[stage], "cached": cached,
                               "seconds": round(time.perf_counter() - t0, 3)}
        self._memo[stage] = value
        return value

    def _run_artifact_stage(self, stage, fn):
        """Stage whose products are only files plus a JSON summary; a cache hit
        restores the files instead of recomputing them."""
        def wrapped(d, cached):
            index = d / "artifacts.json"
            if cached:
                data = json.loads(index.read_text())
                for name in data["files"]:
                    shutil.copyfile(d / name, self._artifact(name))
                return data["value"]
            before = set(self.files)
            value = fn()
            d.mkdir(parents=True, exist_ok=True)
            names = [p.name for p in self.files if p not in before]
            for name in names:
                shutil.copyfile(self.out / name, d / name)
            _write_json(index, {"files": names, "value": value})
            return value
        return self._run_stage(stage, wrapped)

    def check_writable(self):
        self.out.mkdir(parents=True, exist_ok=True)
        probe = self.out / ".write_test"
        probe.write_text("")
        probe.unlink()

    def write_manifest(self, error=None):
        data = {
            "name": self.cfg.name,
            "version": __version__,
            "seed": self.seed,
            "stages": self.records,
            "files": [{"path": p.name, "sha256": cf.file_sha256(p)}
                      for p in self.files if p.exists()],
        }
        if error is not None:
            data["error"] = {"stage": getattr(error, "stage", None), "message": str(error)}
        _write_json(self.out / "manifest.json", data)

    # -- model, orbit, spectrum, chart ---------------------------------------------

    def model(self):
        if "model" not in self._memo:
            m = self.res.model
            if m.file:
                self._memo["model"] = load_polynomial_model(m.file, m.name)
            else:
                self._memo["model"] = builtin_model(m.name, **m.params)
        return self._memo["model"]

    def _solve(self, N, init=None):
        o = self.res.orbit
        model = self.model()
        if o.method == "integrate":
            x0 = o.x0 if o.x0 is not None else np.full(model.dim, 0.5)
            return orbit_from_integration(model, x0, N, samples=o.samples, gauge=o.gauge)
        if model.poly is None:
            raise cf.ConfigError(f"model {model.name!r} has no polynomial form; "
                                 "use orbit.method: integrate")
        if init is None:
            x0 = o.x0 if o.x0 is not None else np.full(model.dim, 0.5)
            init = seed_orbit(model, x0, min(3, N), gauge=o.gauge)
        schedule = o.schedule
        if schedule is None or init.N >= max(schedule):
            schedule = sorted({s for s in (5, 10, 20, 40, 80, 160, 320) if init.N < s < N} | {N})
        else:
            schedule = sorted(set(int(s) for s in schedule if s <= N) | {N})
        return continuation_solve(model.poly, schedule, init, tol=o.tol)

    def orbit(self) -> FourierOrbit:
        def fn(d, cached):
            path = d / "orbit.txt"
            if cached:
                orbit = FourierOrbit.load(path)
            else:
                orbit = self._solve(self.res.orbit.N)
                d.mkdir(parents=True, exist_ok=True)
                orbit.save(path)
            shutil.copyfile(path, self._artifact("orbit.txt"))
            return orbit
        return self._run_stage("orbit", fn)

    def spectrum(self) -> KoopmanSpectrum:
        def fn(d, cached):
            path = d / "spectrum.json"
            if cached:
                sp = KoopmanSpectrum.from_dict(json.loads(path.read_text()))
            else:
                s = self.res.spectrum
                opts = IntegratorOptions(s.method, rtol=s.rtol, atol=s.atol)
                sp = floquet_spectrum(self.model(), self.orbit(), opts, segments=s.segments)
                data = sp.to_dict()
                model = self.model()
                if model.poly is not None and model.dim == 2:
                    data["planar_floquet"] = planar_floquet(model.poly, self.orbit())
                d.mkdir(parents=True, exist_ok=True)
                _write_json(path, data)
            shutil.copyfile(path, self._artifact("spectrum.json"))
            return sp
        return self._run_stage("spectrum", fn)

    def chart_orbit(self) -> FourierOrbit:
        def fn(d, cached):
            path = d / "chart_orbit.txt"
            if cached:
                orbit = FourierOrbit.load(path)
            else:
                N = self.res.chart.N
                base = self.orbit()
                if N == base.N:
                    orbit = base
                elif self.res.orbit.method == "integrate":
                    o = self.res.orbit
                    x0 = o.x0 if o.x0 is not None else np.full(self.model().dim, 0.5)
                    orbit = orbit_from_integration(self.model(), x0, N, gauge=o.gauge,
                                                   samples=o.samples or max(8192, 16 * N))
                else:
                    orbit = self._solve(N, init=base)
                d.mkdir(parents=True, exist_ok=True)
                orbit.save(path)
            return orbit
        return self._run_stage("chart", fn)

    def chart(self):
        if "chart_obj" not in self._memo:
            c = self.res.chart
            plane = tuple(int(p) - 1 for p in c.plane)
            self._memo["chart_obj"] = build_chart(self.chart_orbit(), plane, c.table_size, c.scale)
        return self._memo["chart_obj"]

    # -- sweep --------------------------------------------------------------------

    def box(self) -> Box:
        s = self.res.sweep
        n = self.model().dim
        if s.origin is not None:
            basis = np.array(s.basis, dtype=float).T
            if basis.shape != (n, len(s.axes)):
                raise cf.ConfigError("sweep.basis must hold one state vector per axis")
            return Box(tuple(tuple(a) for a in s.axes), np.array(s.origin, float), basis)
        coords = None if s.coords is None else [int(c) - 1 for c in s.coords]
        fixed = s.fixed
        if fixed is None and len(s.axes) < n:
            raise cf.ConfigError("sweep needs 'fixed' values for the coordinates outside the box")
        return Box.aligned(s.axes, coords, fixed, n)

    def settings(self) -> SweepSettings:
        s = self.res.sweep
        return SweepSettings(
            laplace_T=s.laplace_T, laplace_count=s.laplace_count,
            laplace_horizons=None if s.laplace_horizons is None else tuple(s.laplace_horizons),
            laplace_dt=s.laplace_dt, fourier_observable=s.fourier_observable - 1,
            fourier_t_skip=s.fourier_t_skip, fourier_horizon=s.fourier_horizon,
            fourier_dt=s.fourier_dt)

    def quantities(self) -> list:
        qs = list(self.res.sweep.quantities)
        sim = self.res.simulate
        if sim is not None:
            need = ["phase", "amplitude"]
            if sim.kind == "forced":
                need += [f"prf{sim.component}", f"irf{sim.component}"]
            qs += [q for q in need if q not in qs]
        return qs

    def fields(self) -> dict:
        if self.res.sweep is None:
            raise cf.ConfigError("configuration has no sweep section")

        def fn(d, cached):
            qs = self.quantities()
            if cached:
                flds = {q: GridField.load(d / f"{q}.npz") for q in qs}
            else:
                s = self.res.sweep
                opts = IntegratorOptions(s.integrator, dt=s.step)
                flds = sweep(self.model(), self.chart(), self.chart_orbit(), self.spectrum(),
                             self.box(), qs, self.settings(), opts, self.threads, chunk=s.chunk)
                d.mkdir(parents=True, exist_ok=True)
                for q, f in flds.items():
                    f.save(d / f"{q}.npz")
            for q, f in flds.items():
                f.to_csv(self._artifact(f"field_{q}.csv"))
            return flds
        return self._run_stage("fields", fn)

    # -- levels -------------------------------------------------------------------

    def levels(self):
        def fn():
            flds = self.fields()
            out = []
            for k, spec in enumerate(self.res.levels):
                if spec.field not in flds:
                    raise cf.ConfigError(f"levels[{k}] needs the {spec.field!r} field in the sweep")
                f = flds[spec.field]
                vals = spec.level_values()
                fam = isochrons(f, vals) if f.is_phase else level_sets(f, vals)
                kind = "isochrons" if f.is_phase else "isostables"
                fam.to_csv(self._artifact(f"levels_{k}_{kind}.csv"))
                out.append({"kind": kind, "levels": vals,
                            "polylines": [len(c) for c in fam.curves]})
            return out
        return self._run_artifact_stage("levels", fn)

    # -- simulation -----------------------------------------------------------------

    def simulate(self):
        sim = self.res.simulate
        if sim is None:
            raise cf.ConfigError("configuration has no simulate section")

        def fn():
            flds = self.fields()
            model = self.model()
            sp = self.spectrum()
            orbit = self.chart_orbit()
            tg = np.linspace(0.0, 2 * math.pi, sim.theta_count, endpoint=False)
            rg = np.linspace(sim.r_min, sim.r_max, sim.r_count)
            plane = None
            if sim.plane_normal is not None and model.dim > 2:
                plane = Plane.from_equation(sim.plane_normal, sim.plane_offset)
            inv = inverse_map(flds["phase"], flds["amplitude"], tg, rg, plane=plane)
            if sim.kind == "forced":
                return self._forced(sim, flds, inv, model, sp, orbit)
            return self._pulses(sim, flds, inv, model, sp, orbit)
        return self._run_artifact_stage("simulate", fn)

    def _forced(self, sim, flds, inv, model, sp, orbit):
        j = sim.component - 1
        bundle = FieldBundle(flds["phase"], flds["amplitude"], {j: flds[f"prf{sim.component}"]},
                             {j: flds[f"irf{sim.component}"]}, inv)
        x0 = np.array(sim.x0 if sim.x0 is not None else orbit.evaluate(0.0), float)
        inp = InputSignal.sinusoid(sim.amplitude, sim.freq, model.dim, j)
        t_end = sim.t_end if sim.t_end is not None else sim.periods * sp.period
        red = simulate_reduced(bundle, sp, x0, inp, t_end, sim.dt)
        cmp_ = compare_full(model, bundle, red, x0, inp)
        metrics = {"phase_amplitude": cmp_.metrics}
        if len(cmp_.full.t) == len(red.t):
            red.to_csv(self._artifact("reduced.csv"), full=cmp_.full)
        else:
            red.to_csv(self._artifact("reduced.csv"))
            cmp_.full.to_csv(self._artifact("full.csv"))
        if sim.classic:
            prc = compute_prc(model, orbit, sp, components=(j,))
            cl = simulate_classic_phase(prc, sp, red.theta[0], inp, t_end, sim.dt)
            ccmp = compare_full(model, bundle, cl, x0, inp, full_states=cmp_.full.x
                                if len(cmp_.full.t) == len(cl.t) else None)
            metrics["classic"] = ccmp.metrics
            cl.to_csv(self._artifact("classic.csv"))
        _write_json(self._artifact("simulation_metrics.json"), metrics)
        return metrics

    def _pulses(self, sim, flds, inv, model, sp, orbit):
        bundle = FieldBundle(flds["phase"], flds["amplitude"], inverse=inv)
        x0 = np.array(sim.x0 if sim.x0 is not None else orbit.evaluate(0.0), float)
        d = np.zeros(model.dim)
        if sim.direction is None:
            d[0] = 1.0
        else:
            d[:] = sim.direction
        Xf = full_pulses(model, x0, sim.eps, sim.Dt, d, sim.n_pulses)
        thf, rf = project(bundle, Xf)
        start = (bundle.theta(x0), bundle.r(x0))
        th, r = pulse_map(bundle, sp, start, sim.eps, sim.Dt, d, sim.n_pulses)
        cols = [np.arange(sim.n_pulses + 1), np.mod(th, 2 * math.pi), r, thf, rf]
        names = ["n", "theta_map", "r_map", "theta_full", "r_full"]
        metrics = {"max_phase_error": float(np.max(np.abs(wrap(th - thf)))),
                   "final_phase_error": float(abs(wrap(th[-1] - thf[-1]))),
                   "max_amplitude_error": float(np.max(np.abs(r - rf)))}
        if sim.classic:
            prc = compute_prc(model, orbit, sp, components=tuple(int(k) for k in np.flatnonzero(d)))
            thc = classic_pulse_map(prc, sp, start[0], sim.eps, sim.Dt, d, sim.n_pulses)
            cols.append(np.mod(thc, 2 * math.pi))
            names.append("theta_classic")
            metrics["classic_final_phase_error"] = float(abs(wrap(thc[-1] - thf[-1])))
            metrics["classic_max_phase_error"] = float(np.max(np.abs(wrap(thc - thf))))
        cols += [Xf[:, i] for i in range(model.dim)]
        names += [f"x{i + 1}_full" for i in range(model.dim)]
        np.savetxt(self._artifact("pulses.csv"), np.column_stack(cols), delimiter=",",
                   header=",".join(names), comments="", fmt="%.17g")
        _write_json(self._artifact("simulation_metrics.json"), metrics)
        return metrics

    # -- horizon tuning, oracle ------------------------------------------------------

    def tune(self):
        t = self.res.tune
        if t is None:
            raise cf.ConfigError("configuration has no tune section")

        def fn():
            sp = self.spectrum()
            probe = t.probe if t.probe is not None else self.chart_orbit().evaluate(0.0) * 1.5
            cands = t.candidates if t.candidates is not None else list(
                np.round(np.arange(2.0, 40.01, 1.0), 10))
            chosen, series = av.tune_horizon(self.model(), self.chart(), sp, probe, cands,
                                             t.plateau_tol)
            with open(self._artifact("tune_horizon.csv"), "w") as fh:
                fh.write("T,value\n")
                for T, v in series:
                    fh.write(f"{_fmt(T)},{_fmt(v)}\n")
            _write_json(self._artifact("tune_horizon.json"), {"chosen": chosen})
            return chosen
        return self._run_artifact_stage("tune", fn)

    def oracle(self):
        if self.res.model.name != "radial_hopf":
            raise cf.ConfigError("the closed-form oracle exists only for radial_hopf")

        def fn():
            flds = self.fields()
            o = self.res.oracle
            summary = {}
            if "amplitude" in flds:
                f = flds["amplitude"]
                X = f.box.to_state(f.box.node_coords())
                rr = np.hypot(X[0], X[1])
                sel = (rr >= o.r_min) & (rr <= o.r_max) & (f.status.ravel() == av.OK)
                exact = hopf_amplitude(rr[sel])
                got = f.values.ravel()[sel].real
                nz = np.abs(exact) > 1e-12
                summary["amplitude_max_abs_error"] = float(np.max(np.abs(got - exact)))
                summary["amplitude_max_rel_error"] = float(np.max(np.abs(got - exact)[nz] / np.abs(exact[nz])))
                rng = np.random.default_rng(self.seed)
                rad = rng.uniform(o.r_min, o.r_max, 200)
                ang = rng.uniform(0, 2 * math.pi, 200)
                P = np.stack([rad * np.cos(ang), rad * np.sin(ang)])
                vals = f.interpolate_many(P)
                ok = np.isfinite(vals)
                summary["interpolation_max_abs_error"] = float(
                    np.max(np.abs(vals[ok] - hopf_amplitude(rad[ok]))))
            if "phase" in flds:
                f = flds["phase"]
                fam = isochrons(f, [k * math.pi / 4 for k in range(8)])
                worst = 0.0
                for lev, curves in zip(fam.levels, fam.curves):
                    for c in curves:
                        sel = np.hypot(c[:, 0], c[:, 1]) >= o.r_min
                        if np.any(sel):
                            a = np.arctan2(c[sel, 1], c[sel, 0])
                            worst = max(worst, float(np.max(np.abs(wrap(a - lev)))))
                summary["isochron_max_angle_error"] = worst
            _write_json(self._artifact("oracle_summary.json"), summary)
            return summary
        return self._run_artifact_stage("oracle", fn)

    # -- plotting script ---------------------------------------------------------------

    def write_gnuplot(self):
        lines = ["# gnuplot script for the CSV artifacts of this run",
                 "set datafile separator ','", "set key autotitle columnhead", ""]
        names = [p.name for p in self.files]
        for n in names:
            if n.startswith("field_") and self.model().dim >= 2:
                lines += [f"set title '{n}'", "set view map",
                          f"splot '{n}' using 1:2:3 with points pointtype 5 pointsize 0.3 palette",
                          "pause -1", ""]
            elif n.startswith("levels_"):
                lines += [f"set title '{n}'", "unset view",
                          f"plot '{n}' using 3:4:2 with points pointtype 7 pointsize 0.2 lc variable",
                          "pause -1", ""]
            elif n in ("reduced.csv", "full.csv", "classic.csv"):
                lines += [f"set title '{n}'", f"plot '{n}' using 1:2 with lines", "pause -1", ""]
            elif n == "pulses.csv":
                lines += ["set title 'pulse map'",
                          "plot 'pulses.csv' using 1:2 with linespoints, '' using 1:4 with linespoints",
                          "pause -1", ""]
            elif n == "tune_horizon.csv":
                lines += ["set title 'horizon tuning'",
                          "plot 'tune_horizon.csv' using 1:2 with linespoints", "pause -1", ""]
        path = self._artifact("plots.gp")
        path.write_text("\n".join(lines) + "\n")

    # -- drivers -------------------------------------------------------------------------

    def run(self, stages=None):
        if stages is None:
            stages = ["orbit", "spectrum", "chart"]
            if self.res.sweep is not None:
                stages.append("fields")
                if self.res.levels:
                    stages.append("levels")
                if self.res.simulate is not None:
                    stages.append("simulate")
                if self.res.oracle.enabled:
                    stages.append("oracle")
            if self.res.tune is not None:
                stages.append("tune")
        for s in stages:
            {"orbit": self.orbit, "spectrum": self.spectrum, "chart": self.chart,
             "fields": self.fields, "levels": self.levels, "simulate": self.simulate,
             "tune": self.tune, "oracle": self.oracle}[s]()
        self.write_gnuplot()


# --- verbs ---------------------------------------------------------------------------


def _load_config(args) -> cf.ExperimentConfig:
    return cf.load(args.config)


def _pipeline_verb(args, stages):
    cfg = _load_config(args)
    pipe = Pipeline(cfg, args.output, args.threads, args.seed)
    pipe.check_writable()
    try:
        pipe.run(stages)
    except StageError as err:
        pipe.write_manifest(err)
        raise err.exc
    pipe.write_manifest()
    print(f"wrote {len(pipe.files)} artifact(s) to {pipe.out}")
    return EXIT_OK


def _cmd_run(args):
    return _pipeline_verb(args, None)


def _cmd_sweep(args):
    return _pipeline_verb(args, ["orbit", "spectrum", "chart", "fields"])


def _cmd_levels(args):
    return _pipeline_verb(args, ["orbit", "spectrum", "chart", "fields", "levels"])


def _cmd_simulate(args):
    return _pipeline_verb(args, ["orbit", "spectrum", "chart", "fields", "simulate"])


def _cmd_tune(args):
    return _pipeline_verb(args, ["orbit", "spectrum", "chart", "tune"])


def _model_config(args) -> cf.ExperimentConfig:
    if getattr(args, "config", None):
        cfg = _load_config(args)
    else:
        cfg = cf.ExperimentConfig(name=args.model, model=cf.ModelConfig(name=args.model))
    if args.N is not None:
        cfg.orbit.N = args.N
    if getattr(args, "method", None):
        cfg.orbit.method = args.method
    return cfg


def _cmd_spectrum(args):
    cfg = _model_config(args)
    if args.output is None:
        with tempfile.TemporaryDirectory() as tmp:
            return _spectrum(args, Pipeline(cfg, tmp, args.threads, args.seed))
    pipe = Pipeline(cfg, args.output, args.threads, args.seed)
    pipe.check_writable()
    code = _spectrum(args, pipe)
    pipe.write_manifest()
    return code


def _spectrum(args, pipe):
    sp = pipe.spectrum()
    data = sp.to_dict()
    model = pipe.model()
    if model.poly is not None and model.dim == 2:
        data["planar_floquet"] = planar_floquet(model.poly, pipe.orbit())
    if args.json:
        print(json.dumps(data, indent=2, sort_keys=True))
    else:
        print(f"model  {model.name}")
        print(f"omega  {sp.omega:.6g}")
        print(f"period {sp.period:.6g}")
        for k, lam in enumerate(sp.floquet, 1):
            lam = complex(lam)
            im = f" {'+' if lam.imag >= 0 else '-'} {abs(lam.imag):.6g}i" if lam.imag else ""
            print(f"Lambda_{k} {lam.real:.6g}{im}")
        if "planar_floquet" in data:
            print(f"planar_floquet {data['planar_floquet']:.6g}")
    return EXIT_OK


def _cmd_orbit(args):
    cfg = _model_config(args)
    pipe = Pipeline(cfg, args.output or cfg.output_dir, args.threads, args.seed)
    pipe.check_writable()
    orbit = pipe.orbit()
    pipe.write_manifest()
    print(f"omega {orbit.omega:.6g}  N {orbit.N}  -> {pipe.out / 'orbit.txt'}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="isostables", description=__doc__.split("\n")[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--threads", type=int, default=None,
                        help=f"worker threads for sweeps (default: ${THREADS_ENV} or all cores)")
    common.add_argument("--output", default=None, help="output directory (overrides output_dir)")
    common.add_argument("--seed", type=int, default=None, help="seed for randomized checks")
    sub = p.add_subparsers(dest="verb", required=True)
    for name, fn, help_ in [("run", _cmd_run, "run every configured stage"),
                            ("sweep", _cmd_sweep, "compute the grid fields"),
                            ("levels", _cmd_levels, "extract isochrons and isostables"),
                            ("simulate", _cmd_simulate, "reduced vs full simulations"),
                            ("tune-horizon", _cmd_tune, "Laplace horizon plateau search")]:
        sp = sub.add_parser(name, parents=[common], help=help_)
        sp.add_argument("config", help="experiment configuration (YAML)")
        sp.set_defaults(func=fn)
    for name, fn, help_ in [("spectrum", _cmd_spectrum, "print omega and Floquet exponents"),
                            ("orbit", _cmd_orbit, "compute the Fourier orbit")]:
        sp = sub.add_parser(name, parents=[common], help=help_)
        src = sp.add_mutually_exclusive_group(required=True)
        src.add_argument("--model", help="built-in model name")
        src.add_argument("--config", help="experiment configuration (YAML)")
        sp.add_argument("--N", type=int, default=None, help="Fourier truncation")
        sp.add_argument("--method", choices=["harmonic_balance", "integrate"], default=None)
        if name == "spectrum":
            sp.add_argument("--json", action="store_true", help="print JSON instead of a table")
        sp.set_defaults(func=fn)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.threads is not None and args.threads < 1:
        parser.error("--threads must be >= 1")
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("default")
            try:
                return args.func(args)
            except StageError as err:
                raise err.exc from None
    except IO_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except NUMERICAL_ERRORS as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except ValueError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
