"""Hard-particle Monte Carlo engine.

Every stochastic step draws its uniforms from a numpy ``Generator``; the
compiled and Python kernels consume them in the same order, so a run is
reproducible from ``(seed, run_index)`` whichever backend is active.
"""

from __future__ import annotations

import json
import math
import os
import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import geometry as geo
from . import kernel
from .errors import ColpackError

FORMAT_VERSION = 1
RAND_PER_TRIAL = kernel.RAND_PER_TRIAL
_CHUNK_DOUBLES = 4_000_000  # cap on one pre-generated uniform block (32 MB)


def make_rng(seed, run_index=0):
    """Independent PCG64 stream for one run of a plan."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), int(run_index)])))


@dataclass
class Box:
    edges: np.ndarray

    def __post_init__(self):
        self.edges = np.asarray(self.edges, dtype=float).copy()
        if self.edges.ndim != 1 or len(self.edges) not in (2, 3) or np.any(self.edges <= 0):
            raise ColpackError("invalid_box", "box needs 2 or 3 positive edges")

    @property
    def dimension(self):
        return len(self.edges)

    @property
    def volume(self):
        return float(np.prod(self.edges))

    def edges3(self):
        out = np.zeros(3)
        out[: self.dimension] = self.edges
        return out


@dataclass
class Configuration:
    box: Box
    types: np.ndarray
    positions: np.ndarray  # (N, 3), z = 0 in 2D
    orientations: np.ndarray  # (N, 4) quaternions
    species: list

    def __post_init__(self):
        self.types = np.ascontiguousarray(self.types, dtype=np.int32)
        pos = np.asarray(self.positions, dtype=float)
        if pos.shape[1] == 2:
            pos = np.column_stack([pos, np.zeros(len(pos))])
        self.positions = np.ascontiguousarray(pos)
        q = np.asarray(self.orientations, dtype=float)
        if q.ndim == 1:
            q = np.array([geo.angle_to_quat(a) for a in q]).reshape(len(q), 4)
        self.orientations = np.ascontiguousarray(q)
        self._table = None

    @property
    def dimension(self):
        return self.box.dimension

    @property
    def n(self):
        return len(self.types)

    @property
    def counts(self):
        return np.bincount(self.types, minlength=len(self.species)).tolist()

    def particle_volume(self):
        return float(sum(c * geo.shape_measure(s) for c, s in zip(self.counts, self.species)))

    @property
    def phi(self):
        return self.particle_volume() / self.box.volume

    @property
    def table(self):
        if self._table is None:
            self._table = geo.species_table(self.species)
        return self._table

    def copy(self):
        return Configuration(Box(self.box.edges), self.types.copy(), self.positions.copy(),
                             self.orientations.copy(), list(self.species))

    def box3(self):
        return self.box.edges3()

    def set_box3(self, b3):
        self.box.edges = np.asarray(b3[: self.dimension], dtype=float).copy()

    def overlap_count(self):
        """Overlapping pairs, via the cell list."""
        b3 = self.box3()
        return int(kernel.count_overlaps(self.table, self.types, self.positions,
                                         self.orientations, b3, self.dimension))

    def orientation_record(self):
        if self.dimension == 2:
            return [geo.quat_to_angle(q) for q in self.orientations]
        return self.orientations.tolist()

    def to_record(self):
        d = self.dimension
        return {
            "dimension": d,
            "box_edges": self.box.edges.tolist(),
            "species": [s.to_dict() for s in self.species],
            "type_of": self.types.tolist(),
            "positions": self.positions[:, :d].tolist(),
            "orientations": self.orientation_record(),
            "quaternions": self.orientations.tolist(),
            "phi": self.phi,
        }

    @classmethod
    def from_record(cls, rec):
        species = [geo.ShapeSpec.from_dict(s) for s in rec["species"]]
        ori = rec.get("quaternions", rec["orientations"])
        return cls(Box(rec["box_edges"]), rec["type_of"], rec["positions"], ori, species)


@dataclass
class MoveSizes:
    delta: np.ndarray
    dtheta: np.ndarray  # 0 for isotropic species
    dV: float

    def to_dict(self, species=None):
        rot = [float(x) if x > 0 else None for x in self.dtheta]
        return {"delta": [float(x) for x in self.delta], "dtheta": rot, "dV": float(self.dV)}


@dataclass
class SweepStats:
    translate_accepted: int = 0
    translate_attempted: int = 0
    rotate_accepted: int = 0
    rotate_attempted: int = 0
    volume_accepted: int = 0
    volume_attempted: int = 0

    @classmethod
    def from_array(cls, a):
        return cls(*[int(x) for x in a])

    def __add__(self, other):
        return SweepStats(*[a + b for a, b in zip(self.as_tuple(), other.as_tuple())])

    def as_tuple(self):
        return (self.translate_accepted, self.translate_attempted, self.rotate_accepted,
                self.rotate_attempted, self.volume_accepted, self.volume_attempted)

    @staticmethod
    def _ratio(a, n):
        return a / n if n else None

    @property
    def translate_ratio(self):
        return self._ratio(self.translate_accepted, self.translate_attempted)

    @property
    def rotate_ratio(self):
        return self._ratio(self.rotate_accepted, self.rotate_attempted)

    @property
    def volume_ratio(self):
        return self._ratio(self.volume_accepted, self.volume_attempted)

    def to_dict(self):
        out = {}
        for name in ("translate", "rotate", "volume"):
            acc = getattr(self, f"{name}_accepted")
            att = getattr(self, f"{name}_attempted")
            out[name] = {"accepted": acc, "attempted": att, "ratio": self._ratio(acc, att)}
        return out


@dataclass
class RunDirective:
    ensemble: str
    target: float
    sample_steps: int
    record_period: int = 100
    seed: int = 0
    tuning_sweeps: int = 2000

    def __post_init__(self):
        self.ensemble = str(self.ensemble).upper()
        if self.ensemble not in ("NVT", "NPT"):
            raise ColpackError("invalid_ensemble", f"ensemble must be NVT or NPT, got {self.ensemble!r}")
        self.target = float(self.target)
        if self.ensemble == "NVT" and not 0.0 < self.target < 1.0:
            raise ColpackError("non_positive_value", "NVT volume fraction must lie in (0, 1)")
        if self.ensemble == "NPT" and not self.target > 0.0:
            raise ColpackError("non_positive_value", "NPT pressure must be > 0")
        for name in ("sample_steps", "record_period"):
            if int(getattr(self, name)) < 1:
                raise ColpackError("non_positive_value", f"{name} must be >= 1")
        self.sample_steps = int(self.sample_steps)
        self.record_period = int(self.record_period)
        self.seed = int(self.seed)
        self.tuning_sweeps = max(0, int(self.tuning_sweeps))

    def to_dict(self):
        return {"ensemble": self.ensemble, "target": self.target, "sample_steps": self.sample_steps,
                "record_period": self.record_period, "seed": self.seed,
                "tuning_sweeps": self.tuning_sweeps}


# -- initialization ------------------------------------------------------------

def _interleave(counts):
    """Species order spreading each species evenly through the lattice."""
    keys = []
    for s, c in enumerate(counts):
        keys += [((k + 0.5) / c, s) for k in range(c)]
    keys.sort()
    return np.array([s for _, s in keys], dtype=np.int32)


def lattice_init(species, counts, dimension, phi0):
    species = list(species)
    counts = [int(c) for c in counts]
    if len(species) != len(counts) or any(c < 1 for c in counts):
        raise ColpackError("invalid_particle_number", "every species needs at least one particle")
    if not 0.0 < phi0 <= 0.2:
        raise ColpackError("infeasible_density", f"initial fraction {phi0} outside (0, 0.2]")
    for s in species:
        if s.dimension != dimension:
            raise ColpackError("dimension_shape_mismatch", f"{s.kind} is not a {dimension}D shape")
    n = sum(counts)
    vp = sum(c * geo.shape_measure(s) for c, s in zip(counts, species))
    L = (vp / phi0) ** (1.0 / dimension)
    m = int(math.ceil(n ** (1.0 / dimension) - 1e-9))
    while m ** dimension < n:
        m += 1
    a = L / m
    need = max(2 * geo.circumradius(s) for s in species)
    if a < need:
        raise ColpackError("infeasible_density",
                           f"lattice spacing {a:.4g} is below the largest circumdiameter {need:.4g}")
    grid = np.stack(np.meshgrid(*[np.arange(m)] * dimension, indexing="ij"), -1).reshape(-1, dimension)[:n]
    pos = np.zeros((n, 3))
    pos[:, :dimension] = (grid + 0.5) * a
    quat = np.zeros((n, 4))
    quat[:, 0] = 1.0
    return Configuration(Box(np.full(dimension, L)), _interleave(counts), pos, quat, species)


# -- sweeps ----------------------------------------------------------------------

def default_moves(config):
    diam = np.array([2 * geo.circumradius(s) for s in config.species])
    rot = np.array([0.2 if s.orientable else 0.0 for s in config.species])
    return MoveSizes(0.1 * diam, rot, 0.01 * config.box.volume)


def _sweep_block(config, moves, rng, nsweep, npt=False, pressure=0.0):
    """Run ``nsweep`` sweeps through the active kernel; returns the raw stats array."""
    n = config.n
    row = RAND_PER_TRIAL * n + 2
    chunk = max(1, _CHUNK_DOUBLES // row)
    st = np.zeros(6, dtype=np.int64)
    b3 = config.box3()
    delta = np.ascontiguousarray(moves.delta, dtype=float)
    dtheta = np.ascontiguousarray(moves.dtheta, dtype=float)
    done = 0
    while done < nsweep:
        k = min(chunk, nsweep - done)
        rand = rng.random((k, row))
        kernel.run_sweeps(config.table, config.types, config.positions, config.orientations, b3,
                          config.dimension, delta, dtheta, float(moves.dV), float(pressure),
                          bool(npt), rand, st)
        done += k
    config.set_box3(b3)
    return st


def mc_sweep(config, directive, moves, rng, n_sweeps=1):
    """Advance ``config`` by ``n_sweeps`` sweeps of N trial moves (plus one volume move each in NPT)."""
    npt = directive.ensemble == "NPT"
    st = _sweep_block(config, moves, rng, n_sweeps, npt=npt, pressure=directive.target if npt else 0.0)
    return SweepStats.from_array(st)


def npt_volume_move(config, pressure, dV, rng):
    u0, u1 = rng.random(2)
    b3 = config.box3()
    ok = kernel.volume_move(config.table, config.types, config.positions, config.orientations, b3,
                            config.dimension, float(pressure), float(dV), float(u0), float(u1))
    config.set_box3(b3)
    return bool(ok)


# -- compression -----------------------------------------------------------------

def _scale_config(config, factor):
    b3 = config.box3()
    d = config.dimension
    b3[:d] *= factor
    pos = config.positions
    pos[:, :d] *= factor
    pos[:, :d] -= b3[:d] * np.floor(pos[:, :d] / b3[:d])
    pos[:, :d] = np.where(pos[:, :d] >= b3[:d], pos[:, :d] - b3[:d], pos[:, :d])
    config.set_box3(b3)


def _overlaps_after_scale(config, factor):
    trial = config.copy()
    trial._table = config._table
    _scale_config(trial, factor)
    return trial.overlap_count() > 0


def _max_shrink(config, lo, iters=14):
    """Smallest linear factor in [lo, 1] whose affine shrink creates no overlap (bisection)."""
    if not _overlaps_after_scale(config, lo):
        return lo
    ok, bad = 1.0, lo
    for _ in range(iters):
        mid = 0.5 * (ok + bad)
        if _overlaps_after_scale(config, mid):
            bad = mid
        else:
            ok = mid
    return ok


def quick_compress(config, phi_target, rng, max_attempts=100_000, settle_sweeps=10):
    """Compress to ``phi_target`` without ever creating an overlap.

    Each step shrinks the box affinely by the largest factor (floored at
    0.99) that keeps every pair apart, then runs hard-particle settling
    sweeps that open new gaps. Raises ``compression_failed`` once more than
    ``max_attempts`` settling sweeps have been spent.
    """
    d = config.dimension
    vp = config.particle_volume()
    if abs(config.phi - phi_target) <= 1e-12:
        return config
    if phi_target < config.phi:
        _scale_config(config, (config.box.volume / (vp / phi_target)) ** (-1.0 / d))
        return config
    if config.overlap_count():
        raise ColpackError("compression_failed", "starting configuration has overlaps")
    moves = default_moves(config)
    cap = moves.delta * 5.0
    spent = 0
    while True:
        v_target = vp / phi_target
        need = (v_target / config.box.volume) ** (1.0 / d)
        factor = _max_shrink(config, max(0.99, need))
        if factor == need:
            _scale_config(config, need)
            # land exactly on the target volume
            config.box.edges = config.box.edges * (v_target / config.box.volume) ** (1.0 / d)
            if config.overlap_count() == 0:
                return config
            config.box.edges = config.box.edges / (v_target / config.box.volume) ** (1.0 / d)
        elif factor < 1.0:
            _scale_config(config, factor)
        if spent >= max_attempts:
            raise ColpackError("compression_failed",
                               f"phi={phi_target} not reached within {max_attempts} settling sweeps",
                               reached_phi=config.phi)
        st = _sweep_block(config, moves, rng, settle_sweeps)
        spent += settle_sweeps
        ratio = st[0] / max(1, st[1])
        moves.delta = np.array([min(max(_adjust(x, ratio, 1e-6, 1e300), 1e-6), c)
                                for x, c in zip(moves.delta, cap)])
        moves.dtheta = np.array([_adjust(x, st[2] / max(1, st[3]), 1e-6, math.pi) if x > 0 else 0.0
                                 for x in moves.dtheta])


# -- tuning ----------------------------------------------------------------------

def _adjust(value, ratio, lo, hi):
    if ratio is None:
        return value
    if ratio > 0.4:
        value = value * min(1.5, ratio / 0.3)
    elif ratio < 0.2:
        value = value * max(0.5, ratio / 0.3)
    return min(max(value, lo), hi)


def tune_moves(config, directive, rng, moves=None, block=10):
    """Steer acceptance into [0.2, 0.4] during warm-up; the result is frozen for sampling."""
    moves = moves or default_moves(config)
    npt = directive.ensemble == "NPT"
    vol_acc = vol_att = 0
    done = 0
    while done < directive.tuning_sweeps:
        k = min(block, directive.tuning_sweeps - done)
        st = SweepStats.from_array(_sweep_block(config, moves, rng, k, npt=npt,
                                                pressure=directive.target if npt else 0.0))
        done += k
        cap = float(np.min(config.box.edges)) / 4
        moves.delta = np.array([_adjust(x, st.translate_ratio, 1e-6, cap) for x in moves.delta])
        moves.dtheta = np.array([_adjust(x, st.rotate_ratio, 1e-6, math.pi) if x > 0 else 0.0
                                 for x in moves.dtheta])
        if npt:
            vol_acc += st.volume_accepted
            vol_att += st.volume_attempted
            if vol_att >= 20:
                V = config.box.volume
                moves.dV = _adjust(moves.dV, vol_acc / vol_att, 1e-6 * V, 0.1 * V)
                vol_acc = vol_att = 0
    return moves


def approach_pressure(config, directive, rng, moves=None, chunk=1000, max_chunks=100, rtol=0.005):
    """NPT warm-up before tuning: adaptive sweeps until the volume fraction stops drifting.

    Runs ``chunk``-sweep blocks with moves re-tuned every 10 sweeps and stops
    once the mean fraction of the last three blocks is within ``rtol``
    (relative) of the three before. Returns ``(moves, sweeps_spent)``.
    """
    moves = moves or default_moves(config)
    step = replace(directive, tuning_sweeps=10)
    means = []
    for k in range(max_chunks):
        phis = []
        for _ in range(chunk // 10):
            moves = tune_moves(config, step, rng, moves)
            phis.append(config.phi)
        means.append(float(np.mean(phis)))
        if len(means) >= 6:
            last, prev = np.mean(means[-3:]), np.mean(means[-6:-3])
            if abs(last - prev) <= rtol * prev:
                break
    return moves, (k + 1) * chunk


# -- production runs -----------------------------------------------------------------

@dataclass
class RunResult:
    run_index: int
    output_dir: str
    n_frames: int
    final_phi: float
    stats: SweepStats
    moves: MoveSizes
    wall_time: float
    approach_sweeps: int = 0
    backend: str = field(default_factory=lambda: kernel.BACKEND)

    def to_dict(self):
        return {"run_index": self.run_index, "output_dir": self.output_dir, "n_frames": self.n_frames,
                "final_phi": self.final_phi, "acceptance": self.stats.to_dict(),
                "move_sizes": self.moves.to_dict(), "approach_sweeps": self.approach_sweeps,
                "wall_time_s": self.wall_time,
                "backend": self.backend}


def _frame(config, index, sweep):
    d = config.dimension
    return {"frame_index": index, "sweep": sweep, "box_edges": config.box.edges.tolist(),
            "phi": config.phi, "positions": config.positions[:, :d].tolist(),
            "orientations": config.orientation_record()}


def _dump(obj):
    return json.dumps(obj, separators=(",", ":"))


def initial_configuration(species, counts, dimension, directive, rng):
    """Lattice start plus (NVT) compression to the target fraction."""
    phi0 = min(0.1, directive.target / 2) if directive.ensemble == "NVT" else 0.1
    while True:
        try:
            config = lattice_init(species, counts, dimension, phi0)
            break
        except ColpackError as exc:
            # very elongated shapes need a sparser start lattice
            if exc.code != "infeasible_density" or phi0 < 1e-3:
                raise
            phi0 /= 2
    if directive.ensemble == "NVT":
        quick_compress(config, directive.target, rng)
    return config


def run_simulation(run_spec, output_dir, progress=None):
    """Execute one fully resolved run and write its artifacts into ``output_dir``.

    ``run_spec`` carries ``dimension``, ``species`` (shape dicts), ``counts``,
    ``directive`` and ``run_index``. ``progress`` receives fractions in [0, 1].
    """
    t0 = time.time()
    directive = run_spec["directive"]
    if not isinstance(directive, RunDirective):
        directive = RunDirective(**directive)
    species = [s if isinstance(s, geo.ShapeSpec) else geo.ShapeSpec.from_dict(s) for s in run_spec["species"]]
    dim = int(run_spec["dimension"])
    run_index = int(run_spec.get("run_index", 0))
    try:
        os.makedirs(output_dir, exist_ok=True)
    except OSError as exc:
        raise ColpackError("io_error", f"cannot create {output_dir}: {exc}") from exc
    rng = make_rng(directive.seed, run_index)
    config = initial_configuration(species, run_spec["counts"], dim, directive, rng)
    moves, approach = None, 0
    if directive.ensemble == "NPT":
        # tuning on the collapsing box would freeze moves sized for a dilute state
        moves, approach = approach_pressure(config, directive, rng)
    moves = tune_moves(config, directive, rng, moves)
    if progress:
        progress(0.0)
    npt = directive.ensemble == "NPT"
    header = {"record": "header", "format_version": FORMAT_VERSION, "dimension": dim,
              "species": [s.to_dict() for s in species], "type_of": config.types.tolist(),
              "box_edges": config.box.edges.tolist(), "directive": directive.to_dict(),
              "move_sizes": moves.to_dict(), "approach_sweeps": approach, "run_index": run_index}
    traj = os.path.join(output_dir, "trajectory.cpt")
    stats = SweepStats()
    n_frames = 0
    try:
        with open(traj, "w", encoding="utf-8") as fh:
            fh.write(_dump(header) + "\n")
            fh.write(_dump(_frame(config, 0, 0)) + "\n")
            n_frames = 1
            sweep = 0
            while sweep < directive.sample_steps:
                k = min(directive.record_period, directive.sample_steps - sweep)
                stats = stats + SweepStats.from_array(
                    _sweep_block(config, moves, rng, k, npt=npt, pressure=directive.target if npt else 0.0))
                sweep += k
                if sweep % directive.record_period == 0:
                    fh.write(_dump(_frame(config, n_frames, sweep)) + "\n")
                    n_frames += 1
                if progress:
                    progress(sweep / directive.sample_steps)
        final = {"record": "snapshot", "sweep": directive.sample_steps, **config.to_record()}
        with open(os.path.join(output_dir, "final_config.json"), "w", encoding="utf-8") as fh:
            json.dump(final, fh)
        result = RunResult(run_index, output_dir, n_frames, config.phi, stats, moves, time.time() - t0, approach)
        with open(os.path.join(output_dir, "run_summary.json"), "w", encoding="utf-8") as fh:
            json.dump(result.to_dict(), fh, indent=1)
    except OSError as exc:
        raise ColpackError("io_error", str(exc)) from exc
    return result


def read_trajectory(path):
    """Return ``(header, frames)`` from a trajectory file."""
    with open(path, encoding="utf-8") as fh:
        header = json.loads(fh.readline())
        frames = [json.loads(line) for line in fh if line.strip()]
    return header, frames


def frame_configuration(header, frame):
    species = [geo.ShapeSpec.from_dict(s) for s in header["species"]]
    return Configuration(Box(frame["box_edges"]), header["type_of"], frame["positions"],
                         frame["orientations"], species)
