from pathlib import Path

import pytest
from hypothesis import given, strategies as st

from isostables import config as C

CONFIGS = sorted((Path(__file__).parent.parent / "configs").glob("*.yaml"))


@pytest.mark.parametrize("path", CONFIGS, ids=lambda p: p.stem)
def test_shipped_configs_load_and_round_trip(path):
    cfg = C.load(path)
    assert C.loads(C.dumps(cfg)) == cfg
    C.resolve(cfg)


@given(st.floats(1e-15, 1e-6), st.integers(2, 200), st.floats(-5, 5),
       st.lists(st.floats(0.01, 3.0), min_size=1, max_size=5),
       st.sampled_from(["vdp", "vdp3d", "radial_hopf", "hodgkin_huxley"]))
def test_round_trip(tol, N, gauge, values, model):
    cfg = C.ExperimentConfig(
        model=C.ModelConfig(model),
        orbit=C.OrbitConfig(N=N, tol=tol, gauge=gauge),
        levels=[C.LevelSpec(spacing="values", values=values)],
        sweep=C.SweepConfig(axes=[[-1.0, 1.0, 5], [-1.0, 1.0, 5]]))
    again = C.loads(C.dumps(cfg))
    assert again == cfg
    assert C.stage_keys(again) == C.stage_keys(cfg)


def test_unknown_keys_and_types():
    with pytest.raises(C.ConfigError, match="unknown key"):
        C.from_dict({"orbit": {"N": 10, "order": 3}})
    with pytest.raises(C.ConfigError, match="unknown section"):
        C.from_dict({"plots": {}})
    with pytest.raises(C.ConfigError, match="integer"):
        C.from_dict({"orbit": {"N": 10.5}})
    with pytest.raises(C.ConfigError, match="version"):
        C.from_dict({"version": 7})
    with pytest.raises(C.ConfigError, match="invalid YAML"):
        C.loads("model: [")
    with pytest.raises(C.ConfigError, match="cannot read"):
        C.load("/nonexistent/cfg.yaml")


def test_validation():
    with pytest.raises(C.ConfigError, match="orbit.method"):
        C.from_dict({"orbit": {"method": "shooting"}})
    with pytest.raises(C.ConfigError, match="sweep.axes"):
        C.from_dict({"sweep": {"axes": [[0, 1, 3]]}})
    with pytest.raises(C.ConfigError, match="go together"):
        C.from_dict({"sweep": {"origin": [0, 0]}})
    with pytest.raises(C.ConfigError, match="simulate.kind"):
        C.from_dict({"simulate": {"kind": "noise"}})
    with pytest.raises(C.ConfigError, match="level sets"):
        C.from_dict({"levels": [{"field": "prf1"}]})


def test_exponent_literals_are_numbers():
    # YAML 1.1 reads "1e-13" as a string
    cfg = C.loads("orbit: {tol: 1e-13}\nspectrum: {rtol: 1e-10}\n")
    assert cfg.orbit.tol == 1e-13 and cfg.spectrum.rtol == 1e-10
    with pytest.raises(C.ConfigError, match="number"):
        C.loads("orbit: {tol: small}\n")


def test_resolve_fills_defaults_without_touching_input():
    cfg = C.from_dict({"model": {"name": "vdp"}, "sweep": {}})
    res = C.resolve(cfg)
    assert res.orbit.N == 40 and res.chart.N == 80 and res.sweep.laplace_T == 20.0
    assert cfg.orbit.N is None and cfg.sweep.axes is None
    assert C.resolve(C.from_dict({"model": {"name": "custom"}, "sweep": {"axes": [[0, 1, 2]] * 2}})).orbit.N == 20
    with pytest.raises(C.ConfigError, match="no default"):
        C.resolve(C.from_dict({"model": {"name": "custom"}, "sweep": {}}))


def test_level_values():
    assert C.LevelSpec(start=0.0, step=0.5, count=3).level_values() == [0.0, 0.5, 1.0]
    log = C.LevelSpec(spacing="log", start=0.01, step=10.0, count=2, signed=True).level_values()
    assert log == pytest.approx([-0.1, -0.01, 0.01, 0.1])


def _changed(edit):
    base = C.load(CONFIGS[[p.stem for p in CONFIGS].index("radial_hopf_oracle")])
    k0 = C.stage_keys(base)
    edit(base)
    k1 = C.stage_keys(base)
    return {s for s in C.STAGES if k0[s] != k1[s]}


def test_stage_key_invalidation():
    assert _changed(lambda c: setattr(c.levels[0], "count", 7)) == {"levels"}
    assert _changed(lambda c: setattr(c.sweep, "laplace_T", 9.0)) == {"fields", "levels", "simulate", "oracle"}
    assert _changed(lambda c: setattr(c.orbit, "tol", 1e-12)) == set(C.STAGES)
    assert _changed(lambda c: setattr(c, "output_dir", "elsewhere")) == set()
    assert _changed(lambda c: setattr(c.oracle, "r_min", 0.4)) == {"oracle"}


def test_stage_key_tracks_model_file(tmp_path):
    f = tmp_path / "m.json"
    f.write_text("{}")
    cfg = C.from_dict({"model": {"name": "custom", "file": str(f)}})
    k0 = C.stage_keys(cfg)
    f.write_text('{"dim": 2}')
    assert C.stage_keys(cfg)["orbit"] != k0["orbit"]
