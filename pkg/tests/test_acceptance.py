"""Acceptance criteria 1-13.

Each test records one ``[PASS]``/``[FAIL]`` line that is printed in the
terminal summary (and immediately with ``-s``). Tolerances are fixed here and
never adjusted to fit results. Run on its own with
``python tests/test_acceptance.py``.
"""

import sys
import time

import numpy as np
import pytest
from threadpoolctl import threadpool_limits

from vech import model as mdl
from vech import selftest as st
from vech import sim
from vech.cli import experiment_path
from vech.fespace import spaces
from vech.mesh import transfer

from conftest import ACCEPTANCE_LINES

SOLVER_RTOL = 1e-9


def record(number, title, ok, detail):
    line = f"criterion {number}: [{'PASS' if ok else 'FAIL'}] {title}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


def _desk(name, **match):
    cfgs = sim.load_configs(experiment_path(name), "desk")
    cfgs = [c for c in cfgs if all(sim_get(c, k) == v for k, v in match.items())]
    assert len(cfgs) == 1, [c.tag for c in cfgs]
    return cfgs[0]


def sim_get(cfg, dotted):
    section, key = dotted.split(".")
    return getattr(getattr(cfg, section), key)


def _run(cfg):
    with threadpool_limits(1):
        t0 = time.perf_counter()
        result = sim.run(cfg)
    return result, time.perf_counter() - t0


@pytest.fixture(scope="module")
def viscoelastic_run():
    return _run(_desk("viscous_compare", **{"mode.freeze_B": False}))


@pytest.fixture(scope="module")
def viscous_run():
    return _run(_desk("viscous_compare", **{"mode.freeze_B": True}))


@pytest.fixture(scope="module")
def growth_runs():
    return {G: _run(_desk("growth_stress", **{"model.G": G}))[0] for G in (0.0, 0.1, 0.2)}


def test_criterion_01_regularization_lemma():
    slacks, secs = st.lemma_suite(n=100_000)
    worst = min(v for d in slacks.values() for k, v in d.items() if k != "a" and v is not None)
    eq = max(abs(d["a"]) for d in slacks.values())
    record(1, "regularization inequalities", worst >= -1e-10 and eq <= 1e-12 and secs < 10,
           f"min slack {worst:.2e}, equality residual {eq:.2e}, {secs:.2f}s")


def test_criterion_02_convex_splitting():
    viol, secs = st.convex_splitting(n=100_000)
    record(2, "convex-concave splitting", viol <= 1e-12 and secs < 1, f"max violation {viol:.2e}, {secs:.3f}s")


def test_criterion_03_mass_lumping():
    gap = st.lumped_norm_gap(levels=(4, 8, 16), n_fields=1000)
    _, orders = st.lumping_error_orders(levels=(4, 8, 16, 32))
    record(3, "mass lumping", gap >= 0 and orders.min() >= 1.9,
           f"min relative norm gap {gap:.3e}, orders {np.round(orders, 3).tolist()}")


def test_criterion_04_discrete_laplacian():
    mean, ident = st.laplacian_identity(levels=(4, 8, 16))
    record(4, "discrete Laplacian", mean <= 1e-12 and ident <= 1e-12,
           f"lumped mean {mean:.1e}, identity error {ident:.1e}")


def test_criterion_05_ch_dissipation():
    with threadpool_limits(1):
        res = st.ch_dissipation(n=32, steps=200, dt=1e-3)
    record(5, "Cahn-Hilliard energy dissipation", res.max_relative_increase <= 1e-9 and res.runtime < 60,
           f"max relative increase {res.max_relative_increase:.2e}, "
           f"F {res.energies[0]:.6g} -> {res.energies[-1]:.6g}, {res.runtime:.1f}s")


def test_criterion_06_oldroyd_oracle():
    errs = st.oldroyd_oracle(steps=100, growth=False), st.oldroyd_oracle(steps=100, growth=True)
    record(6, "tensor recurrence oracle", max(errs) <= 1e-12,
           f"max error {errs[0]:.1e} (no source), {errs[1]:.1e} (growth source)")


def test_criterion_07_jacobian():
    err = st.jacobian_check()
    record(7, "Newton Jacobian", err <= 1e-6, f"relative error {err:.1e}")


def test_criterion_08_manufactured_stokes():
    s = st.manufactured_stokes(levels=(4, 8, 16, 32))
    ok = (s.velocity_orders.min() >= 2.7 and s.pressure_orders.min() >= 1.8
          and s.max_div_residual <= 10 * SOLVER_RTOL and s.max_pressure_mean <= 1e-12)
    record(8, "manufactured Stokes", ok,
           f"velocity orders {np.round(s.velocity_orders, 2).tolist()}, "
           f"pressure orders {np.round(s.pressure_orders, 2).tolist()}, "
           f"div residual {s.max_div_residual:.1e}, pressure mean {s.max_pressure_mean:.1e}")


@pytest.mark.slow
def test_criterion_09_positive_definiteness(viscoelastic_run):
    result, secs = viscoelastic_run
    min_eig = min(m["minEigB"] for m in result.monitors)
    clipped = sum(r["clipped"] for r in result.steps)
    record(9, "B positive definite (desk baseline)", min_eig > 0 and clipped == 0 and secs < 1200,
           f"min eigenvalue {min_eig:.12f} over {len(result.steps)} steps, clipped {clipped}, {secs / 60:.1f} min")


@pytest.mark.slow
def test_criterion_10_viscous_comparison(viscoelastic_run, viscous_run):
    a, _ = viscoelastic_run
    b, _ = viscous_run
    kappa = a.config.model.kappa
    max_tel = max(m["maxTel"] for m in a.monitors)
    # the adaptive meshes may differ slightly; compare on the viscoelastic mesh
    (phi_b,), _ = transfer(b.state.mesh, a.state.mesh, (b.state.phi,))
    M = spaces(a.state.mesh).p1_mass()
    d = a.state.phi - phi_b
    rel = np.sqrt(d @ M @ d) / np.sqrt(a.state.phi @ M @ a.state.phi)
    record(10, "viscous twin comparison", max_tel <= 1e-6 * kappa and rel <= 1e-3,
           f"max |T_el| {max_tel:.3e} vs bound {1e-6 * kappa:.1e}; phi relative L2 difference {rel:.2e} "
           f"vs bound 1e-3")


@pytest.mark.slow
def test_criterion_11_growth_ordering(growth_runs):
    Gs = sorted(growth_runs)
    tel = [growth_runs[G].monitors[-1]["maxTel"] for G in Gs]
    mass = [growth_runs[G].monitors[-1]["mass"] for G in Gs]
    ok = bool(np.all(np.diff(tel) > 0) and np.all(np.diff(mass) < 0))
    record(11, "growth source ordering", ok,
           "G " + ", ".join(f"{G:g}: max|T_el| {t:.4e} mass {m:.8f}" for G, t, m in zip(Gs, tel, mass)))


def test_criterion_12_config_validation():
    ref = mdl.validate_params(mdl.ModelParams(), h_min=10 / 1024)
    bad = mdl.validate_params(mdl.ModelParams(chi_phi=100.0, chi_sigma=10.0))
    failed = [c.name for c in bad.hard_failures()]
    ok = ref.ok and ref.constants.R1 == 0.5 and not bad.ok and failed == ["A4_3 chemotaxis margin"]
    record(12, "config validation", ok,
           f"reference set margin {ref.constants.a43_margin:g}; perturbed set rejected by {failed}")


def test_criterion_13_resume_determinism(tmp_path):
    cfg = _desk("baseline").with_overrides({"coarse_n": "8", "fine_n": "64", "t_end": "0.02",
                                            "output.every": "5", "output.checkpoint_every": "8"})
    with threadpool_limits(1):
        straight = sim.run(cfg, tmp_path / "straight")
        sim.resume(straight.checkpoints[0], tmp_path / "resumed")
    a = (tmp_path / "straight" / "monitors.csv").read_text()
    b = (tmp_path / "resumed" / "monitors.csv").read_text()
    record(13, "resume determinism", a == b,
           f"{len(a.splitlines()) - 1} monitor rows, resumed from {straight.checkpoints[0].name}, identical: {a == b}")


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q", "-s"]))
