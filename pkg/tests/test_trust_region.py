import numpy as np
import pytest

from czbench import bench, fem, solvers
from czbench.solvers import SolverConfig, _boundary_tau


class TestBoundaryTau:
    def test_from_origin(self):
        d = np.array([3.0, 4.0])
        tau = _boundary_tau(np.zeros(2), d, 2.0)
        assert np.linalg.norm(tau * d) == pytest.approx(2.0)

    def test_from_interior_point(self):
        z = np.array([0.5, 0.0])
        d = np.array([0.0, 1.0])
        tau = _boundary_tau(z, d, 1.0)
        assert tau > 0
        assert np.linalg.norm(z + tau * d) == pytest.approx(1.0)


class TestDogleg:
    def test_newton_step_taken_when_inside(self, coarse_itp, config):
        # Dogleg and Newton walk the same trajectory when every Newton step
        # fits in the region.
        cfg_n = bench.solver_config_for(config, "newton", "ItP")
        cfg_d = bench.solver_config_for(config, "dogleg", "ItP")
        rep_n = solvers.solve(coarse_itp, cfg_n)
        rep_d = solvers.solve(coarse_itp, cfg_d)
        assert rep_d.status == solvers.CONVERGED
        assert rep_d.iterations == rep_n.iterations
        assert np.allclose(rep_d.final_u, rep_n.final_u, atol=1e-12)
        assert all(entry["kind"] == "newton" for entry in rep_d.diagnostics["tr"])

    def test_tiny_radius_clips_gradient_step(self, coarse_itp):
        cfg = SolverConfig(method="dogleg", delta_0=1e-6, delta_max=1e-6,
                           max_iters=1)
        rep = solvers.solve(coarse_itp, cfg)
        entry = rep.diagnostics["tr"][0]
        assert entry["kind"] in ("gradient", "dogleg")
        assert entry["step_norm"] == pytest.approx(1e-6, rel=1e-9)

    def test_escapes_band_on_full_opening_case(self, coarse_itc, config):
        cfg = bench.solver_config_for(config, "dogleg", "ItC")
        rep = solvers.solve(coarse_itc, cfg)
        assert rep.status == solvers.CONVERGED
        # The first step cannot be the Newton step (it would land in the
        # trough); the line-searched gradient step clipped to the boundary
        # jumps the softening band instead.
        assert rep.diagnostics["tr"][0]["kind"] in ("gradient", "dogleg")
        assert rep.diagnostics["tr"][0]["step_norm"] == pytest.approx(cfg.delta_0)

    def test_respects_radius(self, coarse_itp, coarse_itc, config):
        for problem, case_id in ((coarse_itp, "ItP"), (coarse_itc, "ItC")):
            cfg = bench.solver_config_for(config, "dogleg", case_id)
            rep = solvers.solve(problem, cfg)
            for entry in rep.diagnostics["tr"]:
                assert entry["step_norm"] <= entry["delta"] + 1e-12


class TestSteihaug:
    def test_converges_both_cases(self, coarse_itp, coarse_itc, config):
        for problem, case_id in ((coarse_itp, "ItP"), (coarse_itc, "ItC")):
            cfg = bench.solver_config_for(config, "steihaug", case_id)
            rep = solvers.solve(problem, cfg)
            assert rep.status == solvers.CONVERGED

    def test_boundary_step_has_radius_norm(self, coarse_itc, config):
        cfg = bench.solver_config_for(config, "steihaug", "ItC")
        rep = solvers.solve(coarse_itc, cfg)
        kinds = [e["kind"] for e in rep.diagnostics["tr"]]
        assert "boundary" in kinds
        for e in rep.diagnostics["tr"]:
            if e["kind"] == "boundary":
                assert e["step_norm"] == pytest.approx(e["delta"])
            assert e["step_norm"] <= e["delta"] + 1e-12

    def test_exact_cg_solves_affine_in_n_inner_steps(self, affine_problem):
        n = affine_problem.n_free
        cfg = SolverConfig(method="steihaug", tol=1e-8, steihaug_exact_cg=True,
                           steihaug_inner_iters=n)
        rep = solvers.solve(affine_problem, cfg)
        assert rep.status == solvers.CONVERGED
        total_inner = sum(e["inner"] for e in rep.diagnostics["tr"])
        assert total_inner <= n

    def test_exact_cg_on_synthetic_spd_model(self):
        # Textbook behavior of the inner loop: with a generous radius the CG
        # pass reproduces the Gauss-Newton step of a well-conditioned model.
        rng = np.random.default_rng(12)
        mesh = fem.build_mesh(4, 1.0, 0.5)
        law = fem.CohesiveLaw(K_p=400.0, delta_0=1e6, delta_f=2e6)
        problem = fem.make_case("ItP", mesh, fem.Material(E=1.0), law, 0.05)
        cfg = SolverConfig(method="steihaug", tol=1e-9, steihaug_exact_cg=True,
                           steihaug_inner_iters=problem.n_free,
                           delta_0=50.0, delta_max=100.0)
        rep = solvers.solve(problem, cfg)
        assert rep.status == solvers.CONVERGED
        # One outer iteration solves the affine system.
        assert rep.iterations <= 2

    def test_inner_budget_reset_returns_accumulated_step(self, coarse_itp):
        # A one-step budget in exact mode exhausts on any 2D model, returning
        # the single CG step and resetting the radius.
        cfg = SolverConfig(method="steihaug", steihaug_exact_cg=True,
                           steihaug_inner_iters=1, max_iters=3)
        rep = solvers.solve(coarse_itp, cfg)
        assert any(e["kind"] == "exhausted" for e in rep.diagnostics["tr"])


class TestArmijoAcrossRuns:
    def test_accepted_steps_satisfy_armijo(self, coarse_itp, coarse_itc, config):
        for problem, case_id in ((coarse_itp, "ItP"), (coarse_itc, "ItC")):
            for method in ("lbfgs", "bfgs", "dogleg", "steihaug"):
                cfg = bench.solver_config_for(config, method, case_id)
                rep = solvers.solve(problem, cfg)
                accepted = [ls for ls in rep.diagnostics["ls"] if ls.accepted]
                assert accepted, f"{method} on {case_id} accepted no steps"
                for ls in accepted:
                    bound = ls.phi0 + cfg.ls_c1 * ls.alpha * ls.slope0
                    assert ls.phi_new <= bound + 1e-12 * abs(bound)
