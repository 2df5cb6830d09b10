"""Symmetry groups over block-structured flat vectors.

A :class:`SymmetrySpec` describes how an observation and an action vector
split into invariant, central-variant and per-agent blocks.  It compiles
into a :class:`TransformSet`: one exact orthogonal map per group element,
stored as a gather permutation followed by an element map (per-index
scales plus disjoint 2x2 rotations).
"""
from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

SCALAR_INVARIANT = "scalar-invariant"
CENTRAL_VARIANT = "central-variant"
AGENT_INDEXED = "agent-indexed"
BLOCK_KINDS = (SCALAR_INVARIANT, CENTRAL_VARIANT, AGENT_INDEXED)

IDENTITY = "identity"
SIGN_FLIP = "sign-flip"
PLANAR_ROTATE = "planar-rotate"
ELEMENT_RULES = (IDENTITY, SIGN_FLIP, PLANAR_ROTATE)

# planar rotations act about the out-of-plane axis, angle -2*pi*i/N for T_i
ROTATION_AXIS_CONVENTION = "z-out-of-plane"


class LayoutError(ValueError):
    """Malformed block layout or symmetry spec."""


class DimensionError(ValueError):
    """Vector width does not match the layout."""


class SpecMismatchError(ValueError):
    """Transforms from different transform sets were combined."""


@dataclass(frozen=True)
class Block:
    name: str
    width: int
    kind: str
    rule: str = IDENTITY
    mask: tuple[int, ...] = ()
    pairs: tuple[tuple[int, int], ...] = ()
    group: str | None = None

    @property
    def group_key(self) -> str:
        if self.group is not None:
            return self.group
        return re.sub(r"[_\-]?\d+$", "", self.name) or self.name

    def check(self) -> None:
        if not isinstance(self.width, int) or self.width < 1:
            raise LayoutError(f"block {self.name!r}: width must be a positive integer")
        if self.kind not in BLOCK_KINDS:
            raise LayoutError(f"block {self.name!r}: unknown kind {self.kind!r}")
        if self.rule == "quaternion":
            raise LayoutError(f"block {self.name!r}: quaternion blocks are not supported")
        if self.rule not in ELEMENT_RULES:
            raise LayoutError(f"block {self.name!r}: unknown element rule {self.rule!r}")
        if self.kind == SCALAR_INVARIANT and self.rule != IDENTITY:
            raise LayoutError(f"block {self.name!r}: scalar-invariant blocks take the identity rule")
        if self.rule == SIGN_FLIP:
            if len(self.mask) != self.width or any(b not in (0, 1) for b in self.mask):
                raise LayoutError(f"block {self.name!r}: sign-flip mask must be {self.width} bits")
        if self.rule == PLANAR_ROTATE:
            if not self.pairs:
                raise LayoutError(f"block {self.name!r}: planar-rotate needs index pairs")
            seen: set[int] = set()
            for a, b in self.pairs:
                for k in (a, b):
                    if not 0 <= k < self.width:
                        raise LayoutError(f"block {self.name!r}: rotate index {k} out of range")
                    if k in seen:
                        raise LayoutError(f"block {self.name!r}: rotate pairs are not disjoint")
                    seen.add(k)


@dataclass(frozen=True)
class BlockLayout:
    blocks: tuple[Block, ...]

    def __post_init__(self):
        object.__setattr__(self, "blocks", tuple(self.blocks))
        for b in self.blocks:
            b.check()
        names = [b.name for b in self.blocks]
        if len(set(names)) != len(names):
            raise LayoutError("block names must be unique")

    @property
    def total_width(self) -> int:
        return sum(b.width for b in self.blocks)

    @property
    def offsets(self) -> list[int]:
        out, off = [], 0
        for b in self.blocks:
            out.append(off)
            off += b.width
        return out

    def agent_groups(self) -> dict[str, list[int]]:
        """Agent-indexed block positions keyed by logical quantity, in agent order."""
        groups: dict[str, list[int]] = {}
        for k, b in enumerate(self.blocks):
            if b.kind == AGENT_INDEXED:
                groups.setdefault(b.group_key, []).append(k)
        return groups

    def central_indices(self) -> np.ndarray:
        idx = []
        for off, b in zip(self.offsets, self.blocks):
            if b.kind != AGENT_INDEXED:
                idx.extend(range(off, off + b.width))
        return np.asarray(idx, dtype=np.intp)

    def agent_indices(self, agent: int) -> np.ndarray:
        """Flat indices owned by ``agent`` (groups concatenated in layout order)."""
        offs = self.offsets
        idx = []
        for members in self.agent_groups().values():
            k = members[agent]
            idx.extend(range(offs[k], offs[k] + self.blocks[k].width))
        return np.asarray(idx, dtype=np.intp)

    def validate(self, n_agents: int) -> None:
        for key, members in self.agent_groups().items():
            if len(members) != n_agents:
                raise LayoutError(
                    f"agent group {key!r} (block {self.blocks[members[0]].name!r}) has "
                    f"{len(members)} members, expected {n_agents}"
                )
            widths = {self.blocks[k].width for k in members}
            if len(widths) != 1:
                raise LayoutError(f"agent group {key!r} (block {self.blocks[members[0]].name!r}) has mixed widths")
            rules = {(self.blocks[k].rule, self.blocks[k].mask, self.blocks[k].pairs) for k in members}
            if len(rules) != 1:
                raise LayoutError(f"agent group {key!r} (block {self.blocks[members[0]].name!r}) has mixed element rules")

    def split(self, v: np.ndarray) -> dict[str, np.ndarray]:
        v = np.asarray(v)
        if v.shape[-1] != self.total_width:
            raise DimensionError(f"expected width {self.total_width}, got {v.shape[-1]}")
        return {b.name: v[..., off:off + b.width] for off, b in zip(self.offsets, self.blocks)}


@dataclass(frozen=True)
class SymmetrySpec:
    group_kind: str
    n: int
    obs_layout: BlockLayout
    act_layout: BlockLayout
    rotation_axis_convention: str = ROTATION_AXIS_CONVENTION

    def __post_init__(self):
        if self.group_kind not in ("cyclic", "reflection"):
            raise LayoutError(f"unknown group kind {self.group_kind!r}")
        if self.group_kind == "reflection" and self.n != 2:
            raise LayoutError("reflection groups have exactly 2 elements")
        if not isinstance(self.n, int) or self.n < 1:
            raise LayoutError("group order must be a positive integer")
        for layout in (self.obs_layout, self.act_layout):
            layout.validate(self.n)
            for b in layout.blocks:
                if b.rule == SIGN_FLIP and self.n % 2:
                    raise LayoutError(f"block {b.name!r}: sign-flip needs an even group order")

    @property
    def n_agents(self) -> int:
        return self.n

    def to_dict(self) -> dict:
        return {
            "group_kind": self.group_kind,
            "N": self.n,
            "obs_blocks": [_block_to_dict(b) for b in self.obs_layout.blocks],
            "act_blocks": [_block_to_dict(b) for b in self.act_layout.blocks],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, doc: dict) -> "SymmetrySpec":
        unknown = set(doc) - {"group_kind", "N", "obs_blocks", "act_blocks", "_note"}
        if unknown:
            raise LayoutError(f"unknown keys in symmetry spec: {sorted(unknown)}")
        kind = doc["group_kind"]
        n = doc.get("N", 2 if kind == "reflection" else None)
        if n is None:
            raise LayoutError("cyclic spec needs N")
        return cls(
            group_kind=kind,
            n=int(n),
            obs_layout=BlockLayout(tuple(_block_from_dict(b) for b in doc["obs_blocks"])),
            act_layout=BlockLayout(tuple(_block_from_dict(b) for b in doc["act_blocks"])),
        )

    @classmethod
    def from_json(cls, text: str) -> "SymmetrySpec":
        return cls.from_dict(json.loads(text))


def _block_to_dict(b: Block) -> dict:
    rule: dict | str
    if b.rule == SIGN_FLIP:
        rule = {"type": SIGN_FLIP, "mask": list(b.mask)}
    elif b.rule == PLANAR_ROTATE:
        rule = {"type": PLANAR_ROTATE, "pairs": [list(p) for p in b.pairs]}
    else:
        rule = IDENTITY
    d = {"name": b.name, "width": b.width, "kind": b.kind, "element_rule": rule}
    if b.group is not None:
        d["group"] = b.group
    return d


def _block_from_dict(d: dict) -> Block:
    unknown = set(d) - {"name", "width", "kind", "element_rule", "group", "_note"}
    if unknown:
        raise LayoutError(f"block {d.get('name')!r}: unknown keys {sorted(unknown)}")
    rule = d.get("element_rule", IDENTITY)
    if isinstance(rule, str):
        rule = {"type": rule}
    kind = rule.get("type", IDENTITY)
    return Block(
        name=d["name"],
        width=d["width"],
        kind=d["kind"],
        rule=kind,
        mask=tuple(int(x) for x in rule.get("mask", ())),
        pairs=tuple((int(a), int(b)) for a, b in rule.get("pairs", ())),
        group=d.get("group"),
    )


@dataclass(frozen=True, eq=False)
class Transform:
    """T_i as ``out = E(v[perm])`` with E a diagonal scale plus 2x2 rotations."""

    index: int
    n: int
    perm: np.ndarray
    scale: np.ndarray
    rot_a: np.ndarray
    rot_b: np.ndarray
    cos: np.ndarray
    sin: np.ndarray
    owner: object = field(default=None, repr=False)

    @property
    def width(self) -> int:
        return len(self.perm)

    def _check(self, v: np.ndarray) -> np.ndarray:
        v = np.asarray(v, dtype=np.float64)
        if v.shape[-1] != self.width:
            raise DimensionError(f"expected width {self.width}, got {v.shape[-1]}")
        return v

    def apply(self, v: np.ndarray) -> np.ndarray:
        v = self._check(v)
        w = v[..., self.perm]
        out = w * self.scale
        if len(self.rot_a):
            xa, xb = w[..., self.rot_a], w[..., self.rot_b]
            out[..., self.rot_a] = self.cos * xa - self.sin * xb
            out[..., self.rot_b] = self.sin * xa + self.cos * xb
        return out

    __call__ = apply

    def apply_transpose(self, u: np.ndarray) -> np.ndarray:
        """M^T u; equals the inverse map whenever the element map is orthogonal."""
        u = self._check(u)
        w = u * self.scale
        if len(self.rot_a):
            ua, ub = u[..., self.rot_a], u[..., self.rot_b]
            w[..., self.rot_a] = self.cos * ua + self.sin * ub
            w[..., self.rot_b] = -self.sin * ua + self.cos * ub
        out = np.empty_like(w)
        out[..., self.perm] = w
        return out

    def matrix(self) -> np.ndarray:
        return self.apply(np.eye(self.width)).T


@dataclass(frozen=True, eq=False)
class TransformSet:
    spec: SymmetrySpec
    obs: tuple[Transform, ...]
    act: tuple[Transform, ...]

    @property
    def n(self) -> int:
        return self.spec.n

    def __len__(self) -> int:
        return self.spec.n


def _compile(layout: BlockLayout, n: int, i: int) -> dict:
    width = layout.total_width
    offs = layout.offsets
    perm = np.arange(width)
    scale = np.ones(width)
    rot_a, rot_b = [], []
    source = list(range(len(layout.blocks)))
    for members in layout.agent_groups().values():
        for j, k in enumerate(members):
            source[k] = members[(j + i) % n]
    theta = -2.0 * math.pi * i / n
    c, s = math.cos(theta), math.sin(theta)
    if i == 0:
        c, s = 1.0, 0.0
    for k, b in enumerate(layout.blocks):
        dst, src = offs[k], offs[source[k]]
        perm[dst:dst + b.width] = np.arange(src, src + b.width)
        if b.rule == SIGN_FLIP and i % 2 == 1:
            scale[dst:dst + b.width] = np.where(np.asarray(b.mask) == 1, -1.0, 1.0)
        elif b.rule == PLANAR_ROTATE:
            for a, bb in b.pairs:
                rot_a.append(dst + a)
                rot_b.append(dst + bb)
    na = len(rot_a)
    return dict(
        perm=perm,
        scale=scale,
        rot_a=np.asarray(rot_a, dtype=np.intp),
        rot_b=np.asarray(rot_b, dtype=np.intp),
        cos=np.full(na, c),
        sin=np.full(na, s),
    )


def build_transform_set(spec: SymmetrySpec) -> TransformSet:
    """Compile ``spec`` into |N| observation and |N| action transforms."""
    for layout in (spec.obs_layout, spec.act_layout):
        layout.validate(spec.n)
    obs, act = [], []
    tset = TransformSet(spec, (), ())
    for i in range(spec.n):
        obs.append(Transform(i, spec.n, owner=tset, **_compile(spec.obs_layout, spec.n, i)))
        act.append(Transform(i, spec.n, owner=tset, **_compile(spec.act_layout, spec.n, i)))
    for t in obs + act:
        for arr in (t.perm, t.scale, t.rot_a, t.rot_b, t.cos, t.sin):
            arr.setflags(write=False)
    object.__setattr__(tset, "obs", tuple(obs))
    object.__setattr__(tset, "act", tuple(act))
    return tset


def _family(t: Transform) -> tuple[Transform, ...]:
    tset = t.owner
    if not isinstance(tset, TransformSet):
        raise SpecMismatchError("transform does not belong to a transform set")
    if any(t is x for x in tset.obs):
        return tset.obs
    if any(t is x for x in tset.act):
        return tset.act
    raise SpecMismatchError("transform is not a member of its owner set")


def apply(transform: Transform, v: np.ndarray) -> np.ndarray:
    return transform.apply(v)


def compose(ti: Transform, tj: Transform) -> Transform:
    """T_j after T_i, i.e. T_{(i+j) mod N}."""
    fam = _family(ti)
    if _family(tj) is not fam:
        raise SpecMismatchError("cannot compose transforms from different sets")
    return fam[(ti.index + tj.index) % ti.n]


def inverse(t: Transform) -> Transform:
    fam = _family(t)
    return fam[(t.n - t.index) % t.n]


def transform_at(family: Sequence[Transform], i: int) -> Transform:
    """Cyclic indexing: T_{i + N} is T_i."""
    return family[i % len(family)]


def verify_group_axioms(tset: TransformSet, sample_count: int = 1000, rng_seed: int = 0) -> dict:
    """Max absolute residual of each group law on random vectors.

    Violations are reported, never raised.
    """
    if sample_count < 1:
        raise ValueError("sample_count must be >= 1")
    rng = np.random.default_rng(rng_seed)
    report = {"identity": 0.0, "commutativity": 0.0, "distributivity": 0.0, "cyclicity": 0.0, "orthogonality": 0.0}
    for fam in (tset.obs, tset.act):
        n = len(fam)
        v = rng.standard_normal((sample_count, fam[0].width))
        images = [t.apply(v) for t in fam]
        report["identity"] = max(report["identity"], float(np.max(np.abs(images[0] - v))))
        for i in range(n):
            for j in range(n):
                tji = fam[j].apply(images[i])
                tij = fam[i].apply(images[j])
                ref = images[(i + j) % n]
                res = max(np.max(np.abs(tji - ref)), np.max(np.abs(tij - ref)))
                report["commutativity"] = max(report["commutativity"], float(res))
                for k in range(n):
                    lhs = fam[j].apply(images[i] + images[k])
                    rhs = tji + fam[j].apply(images[k])
                    report["distributivity"] = max(report["distributivity"], float(np.max(np.abs(lhs - rhs))))
        # cyclicity: applying T_1 repeatedly i + N times lands on T_i
        if n > 1:
            w = v.copy()
            for step in range(1, 2 * n):
                w = fam[1].apply(w)
                res = np.max(np.abs(w - images[step % n]))
                report["cyclicity"] = max(report["cyclicity"], float(res))
        for t in fam:
            m = t.matrix()
            res = max(
                np.max(np.abs(m.T @ m - np.eye(t.width))),
                np.max(np.abs(np.linalg.norm(t.apply(v), axis=-1) - np.linalg.norm(v, axis=-1))),
            )
            report["orthogonality"] = max(report["orthogonality"], float(res))
    return report
