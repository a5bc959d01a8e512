import math

import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from colpack import analysis as an
from colpack.errors import ColpackError


def hex_lattice(nx=12, ny=12, a=1.0):
    """Triangular lattice filling a commensurate periodic box (ny even)."""
    h = a * math.sqrt(3) / 2
    pts = [((i + 0.5 * (j % 2)) * a, j * h) for j in range(ny) for i in range(nx)]
    return np.array(pts), np.array([nx * a, ny * h])


def square_lattice(n=12, a=1.0):
    g = np.arange(n) * a
    x, y = np.meshgrid(g, g)
    return np.column_stack([x.ravel(), y.ravel()]), np.array([n * a, n * a])


def random_rotations(rng, n):
    return Rotation.random(n, random_state=rng).as_quat()[:, [3, 0, 1, 2]]


# -- hexatic ------------------------------------------------------------------------------

def test_hexagonal_lattice_psi6_is_one():
    pos, box = hex_lattice()
    psi, mag = an.hexatic_psi(pos, box, 6)
    assert mag == pytest.approx(1.0, abs=1e-9)
    assert np.allclose(np.abs(psi), 1.0, atol=1e-9)


def test_square_lattice_psi4_is_one():
    pos, box = square_lattice()
    assert an.hexatic_psi(pos, box, 4)[1] == pytest.approx(1.0, abs=1e-9)


def test_random_points_psi6_small():
    hits = 0
    for seed in range(40):
        rng = np.random.default_rng(seed)
        box = np.array([30.0, 30.0])
        hits += an.hexatic_psi(rng.random((1000, 2)) * box, box, 6)[1] < 0.1
    assert hits >= 38


def test_hexatic_too_few_particles():
    with pytest.raises(ColpackError) as e:
        an.hexatic_psi(np.zeros((6, 2)) + np.arange(6)[:, None], np.array([10.0, 10.0]), 6)
    assert e.value.code == "too_few_particles"


def test_hexatic_translation_and_image_invariance():
    rng = np.random.default_rng(3)
    box = np.array([9.0, 11.0])
    pos = rng.random((150, 2)) * box
    ref = an.hexatic_psi(pos, box, 6)[1]
    moved = pos + np.array([3.7, -12.1])
    shifted = pos.copy()
    shifted[::3] += box * np.array([1, -2])
    assert an.hexatic_psi(moved, box, 6)[1] == pytest.approx(ref, abs=1e-9)
    assert an.hexatic_psi(shifted, box, 6)[1] == pytest.approx(ref, abs=1e-9)


def test_hexatic_magnitude_bounds():
    rng = np.random.default_rng(4)
    box = np.array([10.0, 10.0])
    for _ in range(5):
        psi, mag = an.hexatic_psi(rng.random((200, 2)) * box, box, 6)
        assert mag <= np.abs(psi).mean() + 1e-12 <= 1.0 + 1e-12


# -- nematic ------------------------------------------------------------------------------

def test_nematic_aligned_is_one():
    u = np.tile([0.3, -0.4, 0.866], (50, 1))
    S, director = an.nematic_order(u)
    assert S == pytest.approx(1.0, abs=1e-9)
    assert abs(director @ u[0] / np.linalg.norm(u[0])) == pytest.approx(1.0, abs=1e-9)
    assert an.nematic_order(np.tile([1.0, 2.0], (20, 1)))[0] == pytest.approx(1.0, abs=1e-9)


def test_nematic_crossed_2d_is_zero():
    u = np.array([[1.0, 0.0]] * 10 + [[0.0, 1.0]] * 10)
    assert an.nematic_order(u)[0] == pytest.approx(0.0, abs=1e-9)


def test_nematic_random_3d_small():
    hits = 0
    for seed in range(20):
        u = np.random.default_rng(seed).normal(size=(10000, 3))
        hits += an.nematic_order(u)[0] < 0.05
    assert hits >= 19


def test_nematic_needs_axes():
    with pytest.raises(ColpackError) as e:
        an.nematic_order(np.zeros((0, 2)))
    assert e.value.code == "no_orientable_species"


# -- cubatic ------------------------------------------------------------------------------

def test_cubatic_identical_orientations_is_one():
    q = np.tile(random_rotations(np.random.default_rng(0), 1), (40, 1))
    assert an.cubatic_p4(an.particle_frames(q)) == pytest.approx(1.0, abs=1e-6)


def test_cubatic_global_rotation_invariance():
    rng = np.random.default_rng(1)
    base = Rotation.from_quat(random_rotations(rng, 1)[:, [1, 2, 3, 0]])
    # a partially ordered sample: small random tilts around one frame
    tilt = Rotation.from_rotvec(rng.normal(scale=0.25, size=(60, 3)))
    q = (tilt * base).as_quat()[:, [3, 0, 1, 2]]
    ref = an.cubatic_p4(an.particle_frames(q))
    g = Rotation.from_rotvec([0.7, -1.2, 0.4])
    q2 = (g * Rotation.from_quat(q[:, [1, 2, 3, 0]])).as_quat()[:, [3, 0, 1, 2]]
    assert 0.2 < ref < 1.0
    assert an.cubatic_p4(an.particle_frames(q2)) == pytest.approx(ref, abs=1e-6)


def test_cubatic_cube_symmetry_operations_leave_value():
    # per-particle rotations by cube symmetries do not change the cubic frame
    q = np.tile([1.0, 0.0, 0.0, 0.0], (30, 1))
    sym = Rotation.from_rotvec(np.array([[math.pi / 2, 0, 0], [0, math.pi, 0], [0, 0, -math.pi / 2]]))
    rots = sym[np.arange(30) % 3] * Rotation.from_quat(q[:, [1, 2, 3, 0]])
    q2 = rots.as_quat()[:, [3, 0, 1, 2]]
    assert an.cubatic_p4(an.particle_frames(q2)) == pytest.approx(1.0, abs=1e-6)


def test_cubatic_random_small():
    hits = 0
    for seed in range(20):
        q = random_rotations(np.random.default_rng(seed), 500)
        hits += an.cubatic_p4(an.particle_frames(q)) < 0.2
    assert hits >= 19


# -- rdf --------------------------------------------------------------------------------------

def test_rdf_ideal_gas_is_flat():
    # Poisson counts per bin: relative sigma = 1/sqrt(expected unordered pair count);
    # checked as per-bin coverage of the 3 sigma band over 20 independent samples
    box = np.array([20.0, 20.0])
    bins, r_max, n_frames = 20, 5.0, 40
    inside = []
    for seed in range(20):
        rng = np.random.default_rng(seed)
        res = an.rdf([(rng.random((400, 2)) * box, box) for _ in range(n_frames)], r_max, bins)
        shell = math.pi * (res["edges"][1:] ** 2 - res["edges"][:-1] ** 2)
        sigma = 1.0 / np.sqrt(400 * (399 / 400.0) * shell * n_frames / 2)
        assert np.all(res["g"] >= 0)
        inside.extend(np.abs(res["g"] - 1.0) <= 3 * sigma)
    assert np.mean(inside) >= 0.98


def test_rdf_two_particles_single_bin():
    box = np.array([10.0, 10.0])
    d = 2.345
    pos = np.array([[1.0, 1.0], [1.0 + d, 1.0]])
    res = an.rdf([(pos, box)], 4.0, 40)
    nz = np.flatnonzero(res["g"])
    assert len(nz) == 1
    assert res["edges"][nz[0]] <= d < res["edges"][nz[0] + 1]


def test_rdf_hexagonal_first_peak():
    pos, box = hex_lattice(a=1.27)
    res = an.rdf([(pos, box)], 3.0, 60)
    k = int(np.flatnonzero(res["g"])[0])
    assert res["edges"][k] <= 1.27 < res["edges"][k + 1]
    assert res["g"][k] == res["g"].max()


def test_rdf_pair_count_bookkeeping():
    rng = np.random.default_rng(6)
    box = np.array([6.0, 7.0, 8.0])
    pos = rng.random((120, 3)) * box
    r_max = 2.9
    res = an.rdf([(pos, box)], r_max, 50)
    rho = 119 / np.prod(box)
    shells = 4 / 3 * math.pi * (res["edges"][1:] ** 3 - res["edges"][:-1] ** 3)
    counted = (res["g"] * rho * shells).sum() * 120
    d = pos[:, None] - pos[None]
    d -= box * np.round(d / box)
    r = np.linalg.norm(d, axis=-1)
    brute = ((r > 0) & (r <= r_max)).sum()
    assert counted == pytest.approx(brute, rel=1e-9)


def test_rdf_r_max_too_large():
    with pytest.raises(ColpackError) as e:
        an.rdf([(np.zeros((3, 2)), np.array([4.0, 4.0]))], 2.5)
    assert e.value.code == "r_max_too_large"


# -- continuous coordination -----------------------------------------------------------------

def test_coordination_isolated_and_dimer():
    box = np.array([50.0, 50.0])
    c, mean = an.continuous_coordination(np.array([[5.0, 5.0]]), box, 1.4)
    assert mean == pytest.approx(0.0, abs=1e-9)
    c, _ = an.continuous_coordination(np.array([[5.0, 5.0], [6.4, 5.0]]), box, 1.4)
    assert np.allclose(c, 0.5, atol=1e-9)


def test_coordination_hexagonal_shell_count():
    pos, box = hex_lattice()
    # first shell at 1, second at sqrt(3)
    _, mean = an.continuous_coordination(pos, box, 1.35, width=0.01)
    assert mean == pytest.approx(6.0, abs=0.05)


# -- equilibration ----------------------------------------------------------------------------

def test_equilibration_constant():
    blk = an.detect_equilibration(np.full(200, 0.5))
    assert blk["equilibrated"] and blk["eq_start_index"] == 0 and blk["eq_std"] == 0.0


def test_equilibration_linear_ramp_fails():
    assert not an.detect_equilibration(np.linspace(0.0, 1.0, 300))["equilibrated"]


def test_equilibration_step_function():
    rng = np.random.default_rng(7)
    T, a, b = 1000, 0.3, 0.7
    x = np.where(np.arange(T) < 300, a, b) + rng.normal(scale=0.02, size=T)
    blk = an.detect_equilibration(x)
    assert abs(blk["eq_start_index"] - 300) <= 0.05 * T
    assert blk["eq_mean"] == pytest.approx(b, abs=0.005)
    assert blk["equilibrated"]


def test_eq_mean_is_tail_mean():
    rng = np.random.default_rng(8)
    x = np.cumsum(rng.normal(size=400)) * 0.01 + rng.normal(size=400)
    blk = an.detect_equilibration(x)
    assert blk["eq_mean"] == float(np.mean(x[blk["eq_start_index"]:]))
    assert 0 <= blk["eq_start_index"] < len(x)


def test_equilibration_short_series():
    with pytest.raises(ColpackError) as e:
        an.detect_equilibration(np.zeros(10))
    assert e.value.code == "series_too_short"


# -- request validation ------------------------------------------------------------------------

def _problem(dim, kinds, shapes=None):
    shapes = shapes or kinds
    return {"dimension": dim,
            "particle_specs": [{"kind": k, "shape": s, "params": {}} for k, s in zip(kinds, shapes)]}


def test_default_requests_per_shape():
    names = lambda p: {(r["name"], r["species"]) for r in an.default_requests(p)}  # noqa: E731
    assert names(_problem(2, ["disk"])) == {("hexatic_6", 0)}
    assert names(_problem(2, ["disk", "capsule2d"], ["disk", "capsule"])) == {("hexatic_6", 0), ("nematic", 1)}
    assert names(_problem(3, ["cube"])) == {("cubatic_p4", 0)}
    assert names(_problem(3, ["sphere"])) == set()
    assert names(_problem(3, ["tetrahedron"])) == set()
    assert names(_problem(3, ["ellipsoid"])) == {("nematic", 0)}


def test_cubatic_on_disks_invalid_for_system():
    with pytest.raises(ColpackError) as e:
        an.validate_requests(_problem(2, ["disk"]), [{"type": "Cubatic"}])
    assert e.value.code == "invalid_for_system"


def test_unknown_type_lists_supported():
    with pytest.raises(ColpackError) as e:
        an.validate_requests(_problem(2, ["disk"]), [{"type": "Steinhardt"}])
    assert e.value.code == "unknown_order_param_type"
    assert "Hexatic" in str(e.value.details)
