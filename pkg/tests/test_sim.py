import numpy as np
import pytest

from vech import model as mdl
from vech import sim
from vech.errors import InvalidConfigError
from vech.fespace import spaces
from vech.mesh import RefinementSpec
from vech.vtkio import read_checkpoint, read_vtk


def small_config(**over):
    cfg = sim.RunConfig(model=mdl.ModelParams(potential="quartic", dt=1e-3, t_end=6e-3),
                        mesh=RefinementSpec(8, 32), output=sim.OutputSpec(every=2, checkpoint_every=3), tag="t")
    return cfg.with_overrides(over)


@pytest.fixture(scope="module")
def straight(tmp_path_factory):
    out = tmp_path_factory.mktemp("straight")
    return sim.run(small_config(), out)


def test_outputs_written(straight):
    out = straight.output_dir
    names = sorted(f.name for f in out.iterdir())
    assert "config.json" in names and "monitors.csv" in names and "steps.csv" in names
    assert [f.name for f in straight.checkpoints] == ["checkpoint_000003.vech", "checkpoint_000006.vech"]
    assert {"fields_000000.vtk", "fields_000002.vtk", "fields_000006.vtk"} <= set(names)
    header = (out / "monitors.csv").read_text().splitlines()[0]
    assert header == ",".join(sim.MONITOR_COLUMNS)
    assert len(straight.monitors) == 7
    assert straight.state.t == pytest.approx(6e-3, abs=0)


def test_monitor_consistency(straight):
    st, _ = read_checkpoint(straight.checkpoints[-1])
    p = straight.config.model
    e = mdl.discrete_energy(st.mesh, st.phi, st.sigma, st.v, st.B, p)
    logged = sim.read_monitors(straight.output_dir / "monitors.csv")[-1]["F_total"]
    assert e.total == pytest.approx(logged, rel=1e-12)


def test_snapshot_fields_match_state(straight):
    _, _, data = read_vtk(straight.output_dir / "fields_000006.vtk")
    assert np.array_equal(data["phi"], straight.state.phi)


def test_mass_nondecreasing(straight):
    mass = [m["mass"] for m in straight.monitors]
    assert np.all(np.diff(mass) >= 0)


def test_resume_matches_straight_run(straight, tmp_path):
    res = sim.resume(straight.checkpoints[0], tmp_path)
    assert (tmp_path / "monitors.csv").read_text() == (straight.output_dir / "monitors.csv").read_text()
    assert np.array_equal(res.state.phi, straight.state.phi)


def test_resume_with_new_cadence(straight, tmp_path):
    res = sim.resume(straight.checkpoints[0], tmp_path, {"output.every": "1", "output.checkpoint_every": "100"})
    assert np.array_equal(res.state.B, straight.state.B)
    assert len(list(tmp_path.glob("fields_*.vtk"))) == 3


def test_resume_refuses_dt_change(straight, tmp_path):
    with pytest.raises(InvalidConfigError):
        sim.resume(straight.checkpoints[0], tmp_path, {"dt": "5e-4"})


def test_overrides_and_keys():
    cfg = small_config(**{"model.G": "0.5", "coarse_n": "4", "freeze_B": "true"})
    assert cfg.model.G == 0.5 and cfg.mesh.coarse_n == 4 and cfg.mode.freeze_B is True
    with pytest.raises(InvalidConfigError):
        small_config(nonsense="1")
    with pytest.raises(InvalidConfigError):
        small_config(t_end="0.0015")
    assert sim.RunConfig.from_dict(cfg.to_dict()) == cfg
    assert sim.parse_overrides(["model.P=5", "tag=x"]) == {"model.P": "5", "tag": "x"}


def test_sweep_expansion(tmp_path):
    ini = tmp_path / "e.ini"
    ini.write_text("[experiment]\ntag = s\n[model]\npotential = quartic\n[sweep]\nG = 0, 0.1\nP = 1, 2\n"
                   "[profile:small]\nmodel.dt = 1e-2\nmodel.t_end = 0.1\n")
    cfgs = sim.load_configs(ini, "small")
    assert len(cfgs) == 4
    assert {(c.model.G, c.model.P) for c in cfgs} == {(0.0, 1.0), (0.0, 2.0), (0.1, 1.0), (0.1, 2.0)}
    assert all(c.model.dt == 1e-2 for c in cfgs)
    assert len({c.tag for c in cfgs}) == 4


def test_packaged_experiments_load():
    from vech.cli import experiment_path, packaged_experiments

    names = packaged_experiments()
    assert {"baseline", "viscous_compare", "growth_stress", "relaxation", "viscosity", "kappa_phase"} <= set(names)
    for name in names:
        for cfg in sim.load_configs(experiment_path(name), "desk"):
            assert sim.validate(cfg).ok, cfg.tag
    g = sim.load_configs(experiment_path("growth_stress"))
    assert sorted(c.model.G for c in g) == [0.0, 0.1, 0.2, 0.5]


def test_rejected_config_does_not_run(tmp_path):
    with pytest.raises(InvalidConfigError):
        sim.run(small_config(chi_phi="100", chi_sigma="10"), tmp_path)


def test_clip_tensor_lifts_eigenvalues():
    B = np.array([[1.0, 0.0, -0.2], [2.0, 0.0, 2.0]])
    out = sim.clip_tensor(B, 0.1)
    assert np.allclose(out[0], [1.0, 0.0, 0.1])
    assert np.array_equal(out[1], B[1])


def test_adapt_preserves_linear_fields(straight):
    st = straight.state.copy()
    st.phi = st.mesh.vertices[:, 0].copy()
    new = sim.adapt(st, straight.config.mesh)
    assert np.allclose(new.phi, new.mesh.vertices[:, 0])
    assert new.v.shape == (2 * spaces(new.mesh).num_p2,)
