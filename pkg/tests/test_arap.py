import numpy as np
import pytest
from scenarios import bar_bend, bar_bend_params, rotation_about

from flowmesh.arap import (
    DeformParams,
    RotationField,
    arap_energy,
    deform_progressive,
    fit_rotations,
    global_step,
    handle_schedule,
    read_trace,
    rotation_smoothness,
    srarap_energy,
    write_trace,
)
from flowmesh.depthmesh import ConstraintSet
from flowmesh.errors import ConfigurationError, RankError, StructuralError
from flowmesh.mesh import EdgeWeights, Mesh, cotangent_weights, synth_grid
from flowmesh.meshobj import read_obj


def single_edge_setup():
    mesh = Mesh([[0, 0, 0], [1, 0, 0]], np.zeros((0, 3), dtype=int))
    weights = EdgeWeights([[0, 1]], [1.0])
    return mesh, weights


class TestParams:
    def test_validation(self):
        with pytest.raises(ConfigurationError):
            DeformParams(lam=0.0)
        with pytest.raises(ConfigurationError):
            DeformParams(lam=1.5)
        with pytest.raises(ConfigurationError):
            DeformParams(steps=0)
        with pytest.raises(ConfigurationError):
            DeformParams(rel_tol=0)
        with pytest.raises(ConfigurationError):
            DeformParams(alpha=-0.1)

    def test_dict_roundtrip(self):
        p = DeformParams(alpha=0.25, beta=0.4, lam=0.7, steps=3)
        assert DeformParams.from_dict(p.to_dict()) == p
        with pytest.raises(ConfigurationError):
            DeformParams.from_dict({"gamma": 1})


class TestRotationField:
    def test_identity(self):
        rf = RotationField.identity(4)
        assert len(rf) == 4

    def test_rejects_non_orthonormal(self):
        mats = np.broadcast_to(np.eye(3) * 2, (2, 3, 3)).copy()
        with pytest.raises(StructuralError):
            RotationField(mats)

    def test_rejects_reflection(self):
        mats = np.broadcast_to(np.diag([-1.0, 1.0, 1.0]), (1, 3, 3)).copy()
        with pytest.raises(StructuralError):
            RotationField(mats)


class TestArapEnergy:
    def test_identity_is_zero(self):
        mesh = synth_grid(3, 3)
        w = cotangent_weights(mesh)
        assert arap_energy(mesh, mesh.vertices, w, RotationField.identity(9)) == 0.0

    def test_global_rotation_with_transpose_field(self):
        mesh = synth_grid(3, 3)
        w = cotangent_weights(mesh)
        q = rotation_about([0.3, 0.7, 1.0], 0.9)
        rot = RotationField(np.broadcast_to(q.T, (9, 3, 3)).copy())
        assert arap_energy(mesh, mesh.vertices @ q.T, w, rot) == pytest.approx(0, abs=1e-24)

    def test_single_edge_counted_twice(self):
        mesh, w = single_edge_setup()
        deformed = np.array([[0.0, 0, 0], [2.0, 0, 0]])
        e = arap_energy(mesh, deformed, w, RotationField.identity(2))
        assert e == pytest.approx(2.0, abs=1e-14)


class TestSrArapEnergy:
    def test_equal_rotations_reduce_to_arap(self):
        mesh = synth_grid(3, 3)
        w = cotangent_weights(mesh)
        rng = np.random.default_rng(2)
        deformed = mesh.vertices + rng.normal(0, 0.1, (9, 3))
        q = rotation_about([1, 0, 0], 0.4)
        rot = RotationField(np.broadcast_to(q, (9, 3, 3)).copy())
        assert srarap_energy(mesh, deformed, w, rot, alpha=2.5) == \
            arap_energy(mesh, deformed, w, rot)

    def test_alpha_zero_reduces_to_arap(self):
        mesh, w = single_edge_setup()
        deformed = np.array([[0.0, 0, 0], [1.0, 1, 0]])
        rot = RotationField(np.stack([np.eye(3), rotation_about([0, 0, 1], 0.3)]))
        assert srarap_energy(mesh, deformed, w, rot, alpha=0.0) == \
            arap_energy(mesh, deformed, w, rot)

    def test_opposed_rotations_pair(self):
        # edge along z so the 180-degree-about-z rotation leaves it intact
        mesh = Mesh([[0, 0, 0], [0, 0, 1]], np.zeros((0, 3), dtype=int))
        w = EdgeWeights([[0, 1]], [1.0])
        rot = RotationField(np.stack([np.eye(3), rotation_about([0, 0, 1], np.pi)]))
        assert arap_energy(mesh, mesh.vertices, w, rot) == pytest.approx(0, abs=1e-24)
        assert rotation_smoothness(w, rot) == pytest.approx(16.0, abs=1e-12)
        assert srarap_energy(mesh, mesh.vertices, w, rot, alpha=1.0) == \
            pytest.approx(16.0, abs=1e-12)


class TestFitRotations:
    def test_identity_for_undeformed(self):
        mesh = synth_grid(4, 3)
        w = cotangent_weights(mesh)
        rot = fit_rotations(mesh, mesh.vertices, w)
        assert np.allclose(rot.matrices, np.eye(3), atol=1e-12)

    def test_recovers_global_rotation_to_zero_energy(self):
        mesh = synth_grid(4, 3)
        w = cotangent_weights(mesh)
        q = rotation_about([0.5, 1, -0.3], 1.2)
        deformed = mesh.vertices @ q.T
        rot = fit_rotations(mesh, deformed, w, alpha=0.0)
        assert arap_energy(mesh, deformed, w, rot) == pytest.approx(0.0, abs=1e-20)

    def test_reflection_corrected_to_proper_rotation(self):
        mesh = synth_grid(4, 3)
        w = cotangent_weights(mesh)
        mirrored = mesh.vertices * np.array([-1.0, 1.0, 1.0])
        rot = fit_rotations(mesh, mirrored, w)
        dets = np.linalg.det(rot.matrices)
        assert np.allclose(dets, 1.0, atol=1e-9)

    def test_smoothing_pulls_toward_neighbors(self):
        mesh, w = single_edge_setup()
        q = rotation_about([0, 0, 1], 1.0)
        prev = RotationField(np.stack([q, q]))
        rot = fit_rotations(mesh, mesh.vertices, w, alpha=100.0, prev_rotations=prev)
        # dominant smoothing term drags both rotations to the neighbor value
        assert np.allclose(rot.matrices[0], q, atol=1e-2)


class TestGlobalStep:
    @pytest.fixture
    def grid_setup(self):
        mesh = synth_grid(4, 4)
        w = cotangent_weights(mesh)
        handle = [5]
        movable = np.array([i for i in range(16) if i != 5])
        return mesh, w, handle, movable

    def test_translation_is_exact(self, grid_setup):
        mesh, w, handle, movable = grid_setup
        t = np.array([2.0, -1.0, 0.5])
        cs = ConstraintSet(movable=movable, fixed=[], pinned_positions=np.zeros((0, 3)),
                           handles=handle, targets=mesh.vertices[handle] + t)
        out = global_step(mesh, cs, RotationField.identity(16), w,
                          beta=0.0, prev_positions=mesh.vertices)
        assert np.abs(out - (mesh.vertices + t)).max() < 1e-8

    def test_huge_beta_freezes_at_prev(self, grid_setup):
        mesh, w, handle, movable = grid_setup
        prev = mesh.vertices + np.array([0.3, 0.1, -0.2])
        cs = ConstraintSet(movable=movable, fixed=[], pinned_positions=np.zeros((0, 3)),
                           handles=handle, targets=mesh.vertices[handle] + 5.0)
        out = global_step(mesh, cs, RotationField.identity(16), w,
                          beta=1e9, prev_positions=prev)
        assert np.abs(out[movable] - prev[movable]).max() < 1e-6
        assert np.allclose(out[handle], mesh.vertices[handle] + 5.0)

    def test_no_movable_returns_pins_verbatim(self):
        mesh = synth_grid(2, 2)
        w = cotangent_weights(mesh)
        pins = mesh.vertices[[0, 1, 2]] + 7.0
        cs = ConstraintSet(movable=[], fixed=[0, 1, 2], pinned_positions=pins,
                           handles=[3], targets=[[9, 9, 9]])
        out = global_step(mesh, cs, RotationField.identity(4), w,
                          beta=0.0, prev_positions=mesh.vertices)
        assert np.array_equal(out[[0, 1, 2]], pins)
        assert np.array_equal(out[3], [9, 9, 9])

    def test_unconstrained_component_raises_rank_error(self):
        # two disconnected triangles; constraints touch only the first
        verts = np.vstack([synth_grid(2, 2).vertices, synth_grid(2, 2).vertices + 10])
        faces = np.vstack([synth_grid(2, 2).faces, synth_grid(2, 2).faces + 4])
        mesh = Mesh(verts, faces)
        w = cotangent_weights(mesh)
        cs = ConstraintSet(movable=np.arange(1, 8), fixed=[], pinned_positions=np.zeros((0, 3)),
                           handles=[0], targets=[verts[0] + 1])
        with pytest.raises(RankError) as err:
            global_step(mesh, cs, RotationField.identity(8), w,
                        beta=0.0, prev_positions=verts)
        assert "vertex" in str(err.value)


class TestHandleSchedule:
    def test_closed_form_before_snap(self):
        h0 = np.array([[0.0, 0.0, 0.0]])
        vt = np.array([[8.0, 0.0, 0.0]])
        path = handle_schedule(h0, vt, lam=0.5, steps=4)
        for k in range(4):  # positions 0..3 follow the recurrence closed form
            expected = vt - 0.5 ** k * (vt - h0)
            assert np.abs(path[k] - expected).max() < 1e-12
        assert np.array_equal(path[4], vt)  # final snap is bit-exact

    def test_lam_one_single_step(self):
        path = handle_schedule(np.zeros((1, 3)), np.ones((1, 3)), lam=1.0, steps=1)
        assert len(path) == 2
        assert np.array_equal(path[1], np.ones((1, 3)))


class TestDeformProgressive:
    def test_all_movable_translation_is_rigid(self):
        mesh = synth_grid(5, 5)
        t = np.array([2.0, 1.0, 0.0])
        handles = [0, 4, 20, 24, 12]
        movable = np.array([i for i in range(25) if i not in handles])
        cs = ConstraintSet(movable=movable, fixed=[], pinned_positions=np.zeros((0, 3)),
                           handles=handles, targets=mesh.vertices[handles] + t)
        trace = deform_progressive(mesh, cs, DeformParams(
            alpha=0.0, beta=0.0, lam=1.0, steps=1, max_lg_iters=500, rel_tol=1e-14))
        assert np.abs(trace.final_positions - (mesh.vertices + t)).max() < 1e-8

    def test_snapshot_zero_is_input(self):
        mesh, cs, _ = bar_bend()
        trace = deform_progressive(mesh, cs, DeformParams(steps=2, max_lg_iters=5))
        assert np.array_equal(trace.snapshots[0], mesh.vertices)

    def test_fixed_vertices_never_move(self):
        mesh, cs, _ = bar_bend()
        trace = deform_progressive(mesh, cs, DeformParams(steps=3, max_lg_iters=10))
        for snap in trace.snapshots:
            assert np.array_equal(snap[cs.fixed], mesh.vertices[cs.fixed])

    def test_final_handles_equal_targets_exactly(self):
        mesh, cs, _ = bar_bend()
        trace = deform_progressive(mesh, cs, DeformParams(steps=3, max_lg_iters=10))
        assert np.array_equal(trace.final_positions[cs.handles], cs.targets)

    def test_energy_descent_arap_mode(self):
        mesh, cs, _ = bar_bend()
        trace = deform_progressive(mesh, cs, DeformParams(
            alpha=0.0, beta=0.0, lam=0.5, steps=4, max_lg_iters=40))
        for energies in trace.iteration_energies:
            for before, after in zip(energies, energies[1:]):
                assert after <= before + 1e-9 * max(abs(before), 1.0)

    def test_final_energy_below_initial_for_all_configs(self):
        mesh, cs, _ = bar_bend()
        for alpha in (0.0, 0.3):
            for beta in (0.0, 0.5, 1.0):
                trace = deform_progressive(mesh, cs, DeformParams(
                    alpha=alpha, beta=beta, lam=0.5, steps=5, max_lg_iters=30))
                assert trace.iteration_energies[-1][-1] <= trace.iteration_energies[0][0]

    def test_interstep_damping_monotone_in_beta(self):
        mesh, cs, _ = bar_bend()
        disps = []
        for beta in (0.0, 0.5, 1.0):
            trace = deform_progressive(mesh, cs, bar_bend_params(beta))
            disps.append(trace.interstep_displacement())
        assert disps[0] >= disps[1] >= disps[2]

    def test_rotations_stay_orthonormal(self):
        mesh, cs, _ = bar_bend()
        trace = deform_progressive(mesh, cs, DeformParams(steps=2, max_lg_iters=8))
        for rf in trace.rotations:
            gram = np.einsum("nij,nkj->nik", rf.matrices, rf.matrices)
            assert np.abs(gram - np.eye(3)).max() < 1e-8
            assert np.abs(np.linalg.det(rf.matrices) - 1).max() < 1e-8

    def test_rigid_invariance_of_trace(self):
        mesh, cs, _ = bar_bend()
        params = DeformParams(alpha=0.3, beta=0.8, lam=0.5, steps=3, max_lg_iters=30)
        base = deform_progressive(mesh, cs, params)
        q = rotation_about([0.3, 0.2, 1.0], 0.7)
        t = np.array([4.0, -1.0, 2.0])
        moved_mesh = Mesh(mesh.vertices @ q.T + t, mesh.faces)
        moved_cs = ConstraintSet(
            movable=cs.movable, fixed=cs.fixed,
            pinned_positions=moved_mesh.vertices[cs.fixed],
            handles=cs.handles, targets=cs.targets @ q.T + t)
        moved = deform_progressive(moved_mesh, moved_cs, params)
        for snap_a, snap_b in zip(base.snapshots, moved.snapshots):
            assert np.abs(snap_a @ q.T + t - snap_b).max() < 1e-6

    def test_nonconvergence_is_warning_not_error(self):
        mesh, cs, _ = bar_bend()
        trace = deform_progressive(mesh, cs, DeformParams(steps=2, max_lg_iters=1))
        assert not all(trace.converged)
        assert trace.warnings

    def test_mismatched_pins_rejected(self):
        mesh, cs, _ = bar_bend()
        bad = ConstraintSet(movable=cs.movable, fixed=cs.fixed,
                            pinned_positions=cs.pinned_positions + 1.0,
                            handles=cs.handles, targets=cs.targets)
        with pytest.raises(ConfigurationError):
            deform_progressive(mesh, bad)


class TestTraceIO:
    def test_roundtrip(self, tmp_path):
        mesh, cs, _ = bar_bend()
        trace = deform_progressive(mesh, cs, DeformParams(steps=2, max_lg_iters=5))
        write_trace(trace, mesh, tmp_path / "trace")
        loaded = read_trace(tmp_path / "trace")
        assert len(loaded.meshes) == 3
        assert np.array_equal(loaded.meshes[0].vertices, trace.snapshots[0])
        assert np.array_equal(loaded.meshes[-1].vertices, trace.final_positions)
        assert loaded.meta["params"]["lambda"] == 0.5
        assert loaded.meta["arap_energies"] == trace.arap_energies
        assert (tmp_path / "trace" / "step_0000.obj").exists()
        assert (tmp_path / "trace" / "step_0002.obj").exists()
        first = read_obj(tmp_path / "trace" / "step_0000.obj")
        assert np.array_equal(first.vertices, mesh.vertices)
