import json
import math
import os

import numpy as np
import pytest
from scipy import stats
from scipy.optimize import brentq

from colpack import engine, kernel
from colpack import geometry as geo
from colpack.errors import ColpackError

S = geo.ShapeSpec
DISK = S("disk", {"diameter": 1.0})


def brute_force_overlaps(config):
    """O(N^2) minimum-image scan through the public pair predicate."""
    d = config.dimension
    box = config.box.edges
    count = 0
    for i in range(config.n):
        for j in range(i + 1, config.n):
            a = geo.Pose(config.positions[i, :d], _orientation(config, i))
            b = geo.Pose(config.positions[j, :d], _orientation(config, j))
            count += geo.overlap(config.species[config.types[i]], a, config.species[config.types[j]], b, box=box)
    return count


def _orientation(config, i):
    q = config.orientations[i]
    return geo.quat_to_angle(q) if config.dimension == 2 else q / np.linalg.norm(q)


def _moves(config, delta, dtheta=0.0, dV=0.0):
    k = len(config.species)
    return engine.MoveSizes(np.full(k, float(delta)), np.full(k, float(dtheta)), float(dV))


def nvt(phi, steps=1000, period=100, seed=0, tuning=200):
    return engine.RunDirective("NVT", phi, steps, period, seed, tuning)


# -- initialization ---------------------------------------------------------------------

def test_lattice_init_four_disks():
    config = engine.lattice_init([DISK], [4], 2, 0.05)
    assert config.box.edges == pytest.approx([math.sqrt(4 * (math.pi / 4) / 0.05)] * 2)
    assert config.box.edges[0] == pytest.approx(7.927, abs=1e-3)
    assert len({tuple(p) for p in np.round(config.positions[:, :2], 9)}) == 4
    assert config.overlap_count() == 0
    assert config.phi == pytest.approx(0.05)


def test_lattice_init_spheres_and_mixtures():
    spheres = engine.lattice_init([S("sphere")], [100], 3, 0.05)
    assert spheres.overlap_count() == 0 and brute_force_overlaps(spheres) == 0
    mixed = engine.lattice_init([DISK, S("capsule2d")], [250, 250], 2, 0.05)
    assert mixed.overlap_count() == 0
    assert mixed.counts == [250, 250]
    # species alternate through the lattice rather than filling it in blocks
    assert np.abs(np.diff(mixed.types)).sum() > 400


def test_lattice_init_rejects_dense_start():
    with pytest.raises(ColpackError) as exc:
        engine.lattice_init([S("capsule2d", {"length": 20.0, "width": 1.0})], [4], 2, 0.2)
    assert exc.value.code == "infeasible_density"
    with pytest.raises(ColpackError) as exc:
        engine.lattice_init([DISK], [4], 2, 0.5)
    assert exc.value.code == "infeasible_density"


def test_quick_compress_reaches_target():
    config = engine.lattice_init([DISK], [64], 2, 0.05)
    engine.quick_compress(config, 0.5, engine.make_rng(1))
    assert config.phi == pytest.approx(0.5, abs=1e-9)
    assert config.overlap_count() == 0 and brute_force_overlaps(config) == 0


def test_quick_compress_anisotropic():
    config = engine.lattice_init([S("cube")], [27], 3, 0.05)
    engine.quick_compress(config, 0.3, engine.make_rng(2))
    assert config.phi == pytest.approx(0.3, abs=1e-9)
    assert brute_force_overlaps(config) == 0


def test_quick_compress_beyond_close_packing_fails():
    config = engine.lattice_init([DISK], [16], 2, 0.05)
    with pytest.raises(ColpackError) as exc:
        engine.quick_compress(config, 0.95, engine.make_rng(0), max_attempts=2000)
    assert exc.value.code == "compression_failed"


def test_quick_compress_identity():
    config = engine.lattice_init([DISK], [9], 2, 0.05)
    before = config.positions.copy()
    engine.quick_compress(config, config.phi, engine.make_rng(0))
    assert np.array_equal(before, config.positions)


# -- sweeps ------------------------------------------------------------------------------

def test_single_disk_always_accepted():
    config = engine.lattice_init([DISK], [1], 2, 0.01)
    st = engine.mc_sweep(config, nvt(0.01), _moves(config, 3.0), engine.make_rng(0), 500)
    assert st.translate_attempted == 500
    assert st.translate_ratio == 1.0


def test_null_moves_accepted_and_inert():
    config = engine.lattice_init([DISK, S("square")], [20, 20], 2, 0.1)
    engine.quick_compress(config, 0.5, engine.make_rng(0))
    before = (config.positions.copy(), config.orientations.copy())
    st = engine.mc_sweep(config, nvt(0.5), _moves(config, 0.0, 0.0), engine.make_rng(1), 20)
    assert st.translate_accepted == st.translate_attempted > 0
    assert st.rotate_accepted == st.rotate_attempted
    assert np.array_equal(before[0], config.positions)
    assert np.array_equal(before[1], config.orientations)


def _annulus_square_area(r, half):
    """Area of {x in [-half, half]^2 : |x| < r}."""
    if r <= half:
        return math.pi * r * r
    if r >= half * math.sqrt(2):
        return 4 * half * half
    seg = r * r * math.acos(half / r) - half * math.sqrt(r * r - half * half)
    return math.pi * r * r - 4 * seg


def test_two_disk_distance_distribution():
    """Two disks in a 2.5 x 2.5 torus: the minimum-image separation is uniform over the allowed region."""
    L = 2.5
    config = engine.Configuration(engine.Box([L, L]), [0, 0], [[0.3, 0.3], [1.6, 1.5]], [0.0, 0.0], [DISK])
    moves = _moves(config, L / 2)  # uniform displacement over the whole torus
    rng = engine.make_rng(7)
    directive = nvt(0.25)
    r = []
    for k in range(100_000):
        engine.mc_sweep(config, directive, moves, rng)
        if k % 5 == 4:
            d = config.positions[1, :2] - config.positions[0, :2]
            d -= L * np.round(d / L)
            r.append(float(np.hypot(*d)))
    r = np.array(r)
    assert r.min() >= 1.0
    edges = np.linspace(1.0, L / math.sqrt(2), 13)
    measure = np.diff([_annulus_square_area(e, L / 2) for e in edges])
    # independent check of the normalization by brute-force quadrature on a fine grid
    g = (np.arange(3000) + 0.5) / 3000 * L - L / 2
    X, Y = np.meshgrid(g, g)
    grid = np.histogram(np.hypot(X, Y).ravel(), bins=edges)[0] * (L / 3000) ** 2
    np.testing.assert_allclose(grid, measure, rtol=2e-3)
    observed = np.histogram(r, bins=edges)[0]
    expected = measure / measure.sum() * len(r)
    _, p = stats.chisquare(observed, expected)
    assert p > 0.01


def spt_phi(pressure, sigma=1.0):
    """Scaled-particle-theory packing fraction of hard disks at reduced pressure βP."""
    def residual(phi):
        rho = 4 * phi / (math.pi * sigma ** 2)
        return rho / (1 - phi) ** 2 - pressure
    return brentq(residual, 1e-9, 0.9)


def test_low_pressure_equation_of_state():
    directive = engine.RunDirective("NPT", 0.1, 20_000, 10, 3, 2000)
    rng = engine.make_rng(directive.seed)
    config = engine.initial_configuration([DISK], [64], 2, directive, rng)
    moves = engine.tune_moves(config, directive, rng)
    engine.mc_sweep(config, directive, moves, rng, 2000)
    phis = []
    for _ in range(2000):
        engine.mc_sweep(config, directive, moves, rng, 10)
        phis.append(config.phi)
    expected = spt_phi(0.1)
    rho = 4 * expected / math.pi
    assert rho / (1 - expected) ** 2 == pytest.approx(0.1, abs=1e-12)
    assert np.mean(phis) == pytest.approx(expected, rel=0.05)


# -- volume moves ----------------------------------------------------------------------------

def test_volume_move_acceptance_probability():
    p_acc = math.exp(-0.1) * 1.1
    assert p_acc == pytest.approx(0.9953, abs=1e-4)
    for u1, accepted in ((p_acc - 1e-4, True), (p_acc + 1e-4, False)):
        config = engine.Configuration(engine.Box([1.0, 1.0]), [0], [[0.5, 0.5]], [0.0], [S("disk", {"diameter": 0.1})])
        b3 = config.box3()
        ok = kernel.volume_move(config.table, config.types, config.positions, config.orientations, b3, 2,
                                1.0, 0.1, 1.0, u1)
        assert bool(ok) is accepted
        config.set_box3(b3)
        assert config.box.volume == pytest.approx(1.1 if accepted else 1.0)


def test_expansion_never_rejected_for_overlap():
    config = engine.lattice_init([DISK], [36], 2, 0.1)
    engine.quick_compress(config, 0.7, engine.make_rng(0))
    rng = engine.make_rng(1)
    for _ in range(50):
        assert engine.npt_volume_move(config, 1e-9, 0.5, _Expanding(rng))
    assert config.overlap_count() == 0


class _Expanding:
    """Uniform source whose first draw always proposes growth."""

    def __init__(self, rng):
        self.rng = rng

    def random(self, n):
        u = self.rng.random(n)
        u[0] = 0.5 + 0.5 * u[0]
        return u


def test_non_positive_volume_rejected():
    config = engine.Configuration(engine.Box([1.0, 1.0]), [0], [[0.5, 0.5]], [0.0], [S("disk", {"diameter": 0.1})])
    b3 = config.box3()
    assert not kernel.volume_move(config.table, config.types, config.positions, config.orientations, b3, 2,
                                  1.0, 5.0, 0.0, 0.0)
    assert b3[:2] == pytest.approx([1.0, 1.0])


# -- tuning ------------------------------------------------------------------------------------

def test_tuning_dilute_hits_clamp():
    config = engine.lattice_init([DISK], [16], 2, 0.01)
    moves = engine.tune_moves(config, nvt(0.01, tuning=400), engine.make_rng(0))
    assert moves.delta[0] == pytest.approx(config.box.edges.min() / 4)
    assert moves.dtheta[0] == 0.0
    assert moves.to_dict()["dtheta"] == [None]


def test_tuning_dense_acceptance():
    directive = nvt(0.7, tuning=1000)
    rng = engine.make_rng(4)
    config = engine.initial_configuration([DISK], [100], 2, directive, rng)
    moves = engine.tune_moves(config, directive, rng)
    st = engine.mc_sweep(config, directive, moves, rng, 200)
    assert 0.15 <= st.translate_ratio <= 0.45


def test_cell_list_matches_brute_force():
    """Random overlapping placements: the cell-list count equals the O(N^2) scan."""
    rng = np.random.default_rng(0)
    for species, dim, L in (([DISK, S("capsule2d")], 2, 6.0), ([S("cube"), S("sphere")], 3, 4.0),
                            ([S("ellipse")], 2, 5.0)):
        n = 40
        types = rng.integers(0, len(species), n)
        pos = rng.uniform(0, L, (n, dim))
        quat = geo.random_quaternions(rng, n) if dim == 3 else rng.uniform(0, 2 * np.pi, n)
        config = engine.Configuration(engine.Box([L] * dim), types, pos, quat, species)
        assert config.overlap_count() == brute_force_overlaps(config) > 0


# -- production runs --------------------------------------------------------------------------

def _spec(species, counts, dim, directive, run_index=0):
    return {"dimension": dim, "species": [s.to_dict() for s in species], "counts": counts,
            "directive": directive.to_dict(), "run_index": run_index}


def test_nvt_run_frames(tmp_path):
    result = engine.run_simulation(_spec([DISK], [30], 2, nvt(0.5)), str(tmp_path))
    assert result.n_frames == 11
    header, frames = engine.read_trajectory(str(tmp_path / "trajectory.cpt"))
    assert header["record"] == "header" and header["format_version"] == engine.FORMAT_VERSION
    assert [f["sweep"] for f in frames] == list(range(0, 1001, 100))
    assert all(abs(f["phi"] - 0.5) < 1e-9 for f in frames)
    final = json.loads((tmp_path / "final_config.json").read_text())
    assert final["record"] == "snapshot" and final["sweep"] == 1000
    summary = json.loads((tmp_path / "run_summary.json").read_text())
    acc = summary["acceptance"]["translate"]
    assert acc["accepted"] <= acc["attempted"] == 30 * 1000


OVERLAP_CASES = [
    ([DISK, S("capsule2d")], [15, 15], 2, nvt(0.45, steps=600)),
    ([S("triangle")], [30], 2, engine.RunDirective("NPT", 3.0, 600, 100, 1, 300)),
    ([S("cube")], [27], 3, nvt(0.35, steps=400)),
    ([S("ellipsoid"), S("sphere")], [14, 13], 3, engine.RunDirective("NPT", 2.0, 400, 100, 2, 200)),
    ([S("tetrahedron"), S("octahedron")], [14, 13], 3, nvt(0.3, steps=400)),
]
BACKEND_CASES = [([DISK, S("capsule2d")], 2), ([S("cube")], 3), ([S("ellipsoid")], 3)]


@pytest.mark.parametrize("species, counts, dim, directive", OVERLAP_CASES)
def test_recorded_frames_overlap_free(tmp_path, species, counts, dim, directive):
    engine.run_simulation(_spec(species, counts, dim, directive), str(tmp_path))
    header, frames = engine.read_trajectory(str(tmp_path / "trajectory.cpt"))
    rng = np.random.default_rng(0)
    picks = {0, len(frames) - 1} | set(rng.choice(len(frames), 3, replace=False).tolist())
    for k in sorted(picks):
        config = engine.frame_configuration(header, frames[k])
        assert brute_force_overlaps(config) == 0, f"frame {k}"


def _trajectory_bytes(path):
    with open(os.path.join(path, "trajectory.cpt"), "rb") as fh:
        return fh.read()


def test_reruns_bit_identical(tmp_path):
    spec = _spec([DISK, S("square")], [10, 10], 2, engine.RunDirective("NPT", 4.0, 500, 50, 42, 200), run_index=3)
    engine.run_simulation(spec, str(tmp_path / "a"))
    engine.run_simulation(spec, str(tmp_path / "b"))
    assert _trajectory_bytes(tmp_path / "a") == _trajectory_bytes(tmp_path / "b")
    other = dict(spec, run_index=4)
    engine.run_simulation(other, str(tmp_path / "c"))
    assert _trajectory_bytes(tmp_path / "a") != _trajectory_bytes(tmp_path / "c")


@pytest.mark.skipif(kernel.compiled_backend is None, reason="compiled kernel not built")
@pytest.mark.parametrize("species, dim", BACKEND_CASES)
def test_backends_bit_identical(tmp_path, monkeypatch, species, dim):
    directive = engine.RunDirective("NPT", 3.0, 60, 20, 5, 40)
    counts = [8] * len(species)
    spec = _spec(species, counts, dim, directive)
    engine.run_simulation(spec, str(tmp_path / "cython"))
    py = kernel.get_backend("python")
    for name in ("pair_overlap", "count_overlaps", "volume_move", "run_sweeps"):
        monkeypatch.setattr(kernel, name, getattr(py, name))
    engine.run_simulation(spec, str(tmp_path / "python"))
    assert _trajectory_bytes(tmp_path / "cython") == _trajectory_bytes(tmp_path / "python")


def test_unwritable_output_dir(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(ColpackError) as exc:
        engine.run_simulation(_spec([DISK], [4], 2, nvt(0.2, steps=10, period=5)), str(blocker / "run"))
    assert exc.value.code == "io_error"


@pytest.mark.parametrize("kwargs, code", [
    (dict(ensemble="NVE", target=0.5, sample_steps=10), "invalid_ensemble"),
    (dict(ensemble="NVT", target=1.2, sample_steps=10), "non_positive_value"),
    (dict(ensemble="NPT", target=-1.0, sample_steps=10), "non_positive_value"),
    (dict(ensemble="NPT", target=1.0, sample_steps=0), "non_positive_value"),
])
def test_directive_validation(kwargs, code):
    with pytest.raises(ColpackError) as exc:
        engine.RunDirective(**kwargs)
    assert exc.value.code == code
