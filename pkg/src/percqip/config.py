"""Point configurations: boxes, samplers, shifts and persistence.

A configuration is a finite point set inside a box.  Shifting never rewrites
the stored coordinates; it accumulates an offset so that composed shifts are
bit-identical to a single shift by the summed vector.
"""
from __future__ import annotations

import os
import struct
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import InvalidParameterError, ParseError

GENERATOR_TAGS = ("poisson", "perturbed_lattice", "explicit")
BINARY_MAGIC = b"PCFGB1"


@dataclass(frozen=True)
class Box:
    """Axis-aligned box ``[lower, upper)`` in ``dim`` dimensions."""

    dim: int
    lower: tuple
    upper: tuple
    periodic: bool = False

    def __post_init__(self):
        lower = tuple(float(v) for v in np.atleast_1d(self.lower))
        upper = tuple(float(v) for v in np.atleast_1d(self.upper))
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)
        object.__setattr__(self, "periodic", bool(self.periodic))
        if self.dim not in (2, 3):
            raise InvalidParameterError(f"dim must be 2 or 3, got {self.dim}")
        if len(lower) != self.dim or len(upper) != self.dim:
            raise InvalidParameterError("box corners must have length dim")
        if not all(np.isfinite(lower + upper)):
            raise InvalidParameterError("box corners must be finite")
        if any(hi <= lo for lo, hi in zip(lower, upper)):
            raise InvalidParameterError("box upper corner must exceed lower corner")

    @classmethod
    def cube(cls, dim, side, lower=0.0, periodic=False):
        return cls(dim, (lower,) * dim, (lower + side,) * dim, periodic)

    @property
    def lo(self):
        return np.array(self.lower)

    @property
    def hi(self):
        return np.array(self.upper)

    @property
    def lengths(self):
        return self.hi - self.lo

    @property
    def volume(self):
        return float(np.prod(self.lengths))

    @property
    def center(self):
        return 0.5 * (self.lo + self.hi)

    def translated(self, z):
        z = np.asarray(z, dtype=float)
        return Box(self.dim, tuple(self.lo - z), tuple(self.hi - z), self.periodic)

    def contains(self, pts):
        pts = np.atleast_2d(pts)
        return np.all((pts >= self.lo) & (pts < self.hi), axis=1)

    def wrap(self, pts):
        """Map points into the box (periodic boxes only; otherwise identity)."""
        pts = np.asarray(pts, dtype=float)
        if not self.periodic:
            return pts
        return self.lo + np.mod(pts - self.lo, self.lengths)


@dataclass(frozen=True)
class RngStream:
    """Reproducible random stream keyed by ``(seed, stream_id)``.

    Draws come from a counter-based Philox generator, so a stream gives the
    same numbers regardless of how work is scheduled across threads.
    """

    seed: int
    stream_id: int = 0

    def __post_init__(self):
        if not (0 <= int(self.seed) < 2**64):
            raise InvalidParameterError("seed must be an unsigned 64-bit integer")
        if int(self.stream_id) < 0:
            raise InvalidParameterError("stream_id must be non-negative")

    def seed_sequence(self, *extra):
        return np.random.SeedSequence(int(self.seed), spawn_key=(int(self.stream_id),) + tuple(int(e) for e in extra))

    def generator(self, *extra):
        return np.random.Generator(np.random.Philox(self.seed_sequence(*extra)))

    def path_seeds(self, n, offset=0):
        """64-bit seeds for ``n`` independent per-path generators."""
        out = np.empty(n, dtype=np.uint64)
        for i in range(n):
            out[i] = self.seed_sequence(0x9A7, offset + i).generate_state(1, dtype=np.uint64)[0]
        return out

    def child(self, stream_id):
        return RngStream(self.seed, stream_id)


@dataclass(frozen=True, eq=False)
class Configuration:
    """Finite point configuration in a box.

    ``base_points`` are never modified; ``points`` equals
    ``base_points - offset`` where ``offset`` accumulates applied shifts.
    """

    box: Box
    base_points: np.ndarray
    seed: int = 0
    generator_tag: str = "explicit"
    offset: np.ndarray = None
    base_box: Box = None
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        pts = np.array(self.base_points, dtype=float).reshape(-1, self.box.dim)
        pts.setflags(write=False)
        object.__setattr__(self, "base_points", pts)
        off = np.zeros(self.box.dim) if self.offset is None else np.array(self.offset, dtype=float)
        off.setflags(write=False)
        object.__setattr__(self, "offset", off)
        if self.base_box is None:
            object.__setattr__(self, "base_box", self.box)
        if self.generator_tag not in GENERATOR_TAGS:
            raise InvalidParameterError(f"unknown generator tag {self.generator_tag!r}")
        if not np.all(np.isfinite(pts)):
            raise InvalidParameterError("configuration points must be finite")

    @property
    def dim(self):
        return self.box.dim

    @property
    def points(self):
        if "points" not in self._cache:
            pts = self.base_points - self.offset if np.any(self.offset) else self.base_points.copy()
            pts.setflags(write=False)
            self._cache["points"] = pts
        return self._cache["points"]

    def __len__(self):
        return len(self.base_points)

    def to_base_frame(self, x):
        """Express positions in the frame of ``base_points`` (exact for composed shifts)."""
        return np.asarray(x, dtype=float) + self.offset

    def __eq__(self, other):
        if not isinstance(other, Configuration):
            return NotImplemented
        return (
            self.box == other.box
            and self.seed == other.seed
            and self.generator_tag == other.generator_tag
            and self.points.shape == other.points.shape
            and np.array_equal(self.points, other.points)
        )

    __hash__ = None


def _check_box(box):
    if not isinstance(box, Box):
        raise InvalidParameterError("box must be a Box")


def sample_poisson(intensity, box, rng):
    """Homogeneous Poisson process of the given intensity in ``box``."""
    _check_box(box)
    if not np.isfinite(intensity) or intensity <= 0:
        raise InvalidParameterError(f"intensity must be positive and finite, got {intensity}")
    gen = rng.generator()
    n = gen.poisson(intensity * box.volume)
    pts = box.lo + box.lengths * gen.random((n, box.dim))
    return Configuration(box, pts, seed=rng.seed, generator_tag="poisson")


def sample_perturbed_lattice(p, box, rng):
    """Bernoulli-thinned integer lattice translated by one uniform offset.

    Every site ``z`` of the integer lattice with ``z + U`` in the box is kept
    independently with probability ``p``; ``U`` is shared by all sites.
    """
    _check_box(box)
    if not (0.0 < p < 1.0):
        raise InvalidParameterError(f"p must lie in (0, 1), got {p}")
    lo, hi = box.lo, box.hi
    if not (np.allclose(lo, np.round(lo), atol=0) and np.allclose(hi, np.round(hi), atol=0)):
        raise InvalidParameterError("perturbed lattice needs a box with integer corners")
    gen = rng.generator()
    u = gen.random(box.dim)
    axes = [np.arange(int(a), int(b)) for a, b in zip(lo, hi)]
    sites = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, box.dim)
    keep = gen.random(len(sites)) < p
    pts = sites[keep].astype(float) + u
    return Configuration(box, pts, seed=rng.seed, generator_tag="perturbed_lattice")


def explicit(points, box, seed=0):
    return Configuration(box, np.asarray(points, dtype=float).reshape(-1, box.dim), seed=seed)


def shift(config, z):
    """Return the configuration seen from ``z``: each point ``x`` becomes ``x - z``."""
    z = np.asarray(z, dtype=float).reshape(config.dim)
    new_offset = config.offset + z
    return Configuration(
        config.base_box.translated(new_offset),
        config.base_points,
        seed=config.seed,
        generator_tag=config.generator_tag,
        offset=new_offset,
        base_box=config.base_box,
    )


# --------------------------------------------------------------------------
# persistence


def _atomic_write(path, data, mode="w"):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, mode + ("b" if isinstance(data, bytes) else ""), encoding=None if isinstance(data, bytes) else "utf-8") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _fmt(x):
    return repr(float(x))


def save_config(config, path, binary=False):
    """Write ``config`` to ``path`` in the text (default) or binary format."""
    box = config.box
    pts = config.points
    if binary:
        tag = config.generator_tag.encode("ascii")
        head = BINARY_MAGIC + struct.pack("<IBQB", box.dim, int(box.periodic), int(config.seed), len(tag)) + tag
        body = np.concatenate([box.lo, box.hi]).astype("<f8").tobytes()
        body += struct.pack("<Q", len(pts)) + pts.astype("<f8").tobytes()
        _atomic_write(path, head + body)
        return
    lines = [
        f"pcfg v1 dim={box.dim} periodic={int(box.periodic)}",
        "box " + " ".join(_fmt(v) for v in box.lower + box.upper),
        f"meta seed={int(config.seed)} gen={config.generator_tag}",
    ]
    lines.extend(" ".join(_fmt(v) for v in row) for row in pts)
    _atomic_write(path, "\n".join(lines) + "\n")


def _parse_kv(tokens, line):
    out = {}
    for tok in tokens:
        if "=" not in tok:
            raise ParseError(f"expected key=value, got {tok!r}", line=line)
        k, v = tok.split("=", 1)
        out[k] = v
    return out


def _load_binary(raw):
    pos = len(BINARY_MAGIC)
    try:
        dim, periodic, seed, taglen = struct.unpack_from("<IBQB", raw, pos)
        pos += struct.calcsize("<IBQB")
        tag = raw[pos : pos + taglen].decode("ascii")
        pos += taglen
        if dim not in (2, 3):
            raise ParseError(f"unsupported dimension {dim}", offset=len(BINARY_MAGIC))
        corners = np.frombuffer(raw, dtype="<f8", count=2 * dim, offset=pos)
        pos += 16 * dim
        (n,) = struct.unpack_from("<Q", raw, pos)
        pos += 8
        if len(raw) != pos + 8 * n * dim:
            raise ParseError("point block length does not match header count", offset=pos)
        pts = np.frombuffer(raw, dtype="<f8", count=n * dim, offset=pos).reshape(n, dim)
    except struct.error as exc:
        raise ParseError(f"truncated binary configuration: {exc}", offset=pos) from None
    if not np.all(np.isfinite(corners)):
        raise ParseError("non-finite box corner", offset=len(BINARY_MAGIC))
    bad = np.flatnonzero(~np.all(np.isfinite(pts), axis=1))
    if len(bad):
        raise ParseError("non-finite coordinate", offset=pos + 8 * dim * int(bad[0]))
    try:
        box = Box(dim, tuple(corners[:dim]), tuple(corners[dim:]), bool(periodic))
        return Configuration(box, pts.copy(), seed=seed, generator_tag=tag)
    except InvalidParameterError as exc:
        raise ParseError(str(exc)) from None


def load_config(path):
    """Read a configuration written by :func:`save_config` (text or binary)."""
    raw = Path(path).read_bytes()
    if raw.startswith(BINARY_MAGIC):
        return _load_binary(raw)
    try:
        text = raw.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise ParseError("file is neither UTF-8 text nor PCFGB1 binary", offset=exc.start) from None
    lines = text.splitlines()
    head = lines[0].split() if lines else []
    if head[:2] != ["pcfg", "v1"]:
        raise ParseError("bad magic, expected 'pcfg v1'", line=1)
    if len(lines) < 3:
        raise ParseError("missing header lines", line=len(lines) + 1)
    kv = _parse_kv(head[2:], 1)
    try:
        dim = int(kv["dim"])
        periodic = bool(int(kv.get("periodic", "0")))
    except (KeyError, ValueError):
        raise ParseError("header needs dim=<d> periodic=<0|1>", line=1) from None
    if dim not in (2, 3):
        raise ParseError(f"unsupported dimension {dim}", line=1)
    box_tok = lines[1].split()
    if not box_tok or box_tok[0] != "box" or len(box_tok) != 1 + 2 * dim:
        raise ParseError(f"box line needs {2 * dim} numbers", line=2)
    try:
        corners = [float(v) for v in box_tok[1:]]
    except ValueError:
        raise ParseError("box corner is not a number", line=2) from None
    if not all(np.isfinite(corners)):
        raise ParseError("non-finite box corner", line=2)
    meta_tok = lines[2].split()
    if not meta_tok or meta_tok[0] != "meta":
        raise ParseError("expected meta line", line=3)
    meta = _parse_kv(meta_tok[1:], 3)
    try:
        seed = int(meta.get("seed", "0"))
    except ValueError:
        raise ParseError("seed is not an integer", line=3) from None
    tag = meta.get("gen", "explicit")
    pts = []
    for lineno, line in enumerate(lines[3:], start=4):
        tok = line.split()
        if not tok:
            continue
        if len(tok) != dim:
            raise ParseError(f"expected {dim} coordinates, got {len(tok)}", line=lineno)
        try:
            row = [float(v) for v in tok]
        except ValueError:
            raise ParseError("coordinate is not a number", line=lineno) from None
        if not all(np.isfinite(row)):
            raise ParseError("non-finite coordinate", line=lineno)
        pts.append(row)
    try:
        box = Box(dim, tuple(corners[:dim]), tuple(corners[dim:]), periodic)
        return Configuration(box, np.array(pts, dtype=float).reshape(-1, dim), seed=seed, generator_tag=tag)
    except InvalidParameterError as exc:
        raise ParseError(str(exc)) from None
