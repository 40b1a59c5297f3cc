"""Finitely generated Möbius groups: word enumeration, orbits and discreteness probes."""

from __future__ import annotations

import logging
import math
from functools import lru_cache
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import optimize
from scipy.spatial import cKDTree

from app.config import settings
from app.services.mobius import (
    MobiusMap,
    Point,
    SphereInversion,
    axis_translation,
    hyp_dist_array,
    sample_ball,
    sphere_inversion,
)

logger = logging.getLogger(__name__)

Word = Tuple[int, ...]

PROBE_COUNT = 100
PROBE_RADIUS = 0.5
DEDUP_TOL = 1e-9


class InvalidGroupError(ValueError):
    """Raised when a presentation violates the standing hypotheses."""

    pass


class BudgetExceededError(RuntimeError):
    """Raised when the deduplicated element count exceeds the configured cap."""

    def __init__(self, count: int, cap: int):
        super().__init__(f"enumeration produced {count} elements, cap is {cap}")
        self.count = count
        self.cap = cap


def _probe_points(n: int) -> np.ndarray:
    rng = np.random.default_rng(20240601)
    return np.vstack([np.zeros((1, n)), sample_ball(rng, PROBE_COUNT - 1, n, PROBE_RADIUS)])


@dataclass(frozen=True, eq=False)
class GroupPresentation:
    """
    Generators of a Möbius group acting on B^n.

    Inverses are materialized once; the word alphabet is (1, -1, 2, -2, ...)
    where -i stands for the inverse of generator i.
    """

    dimension: int
    generators: Tuple[MobiusMap, ...] = ()
    label: str = ""
    _letters: Dict[int, MobiusMap] = field(default_factory=dict, init=False, repr=False)

    def __post_init__(self):
        if self.dimension < 2:
            raise InvalidGroupError(f"dimension must be >= 2 (got: {self.dimension})")
        object.__setattr__(self, "generators", tuple(self.generators))
        probes = _probe_points(self.dimension)
        letters: Dict[int, MobiusMap] = {}
        for index, generator in enumerate(self.generators, start=1):
            if generator.dim != self.dimension:
                raise InvalidGroupError(f"generator {index} acts on dimension {generator.dim}")
            images = generator.apply_array(probes)
            if np.any(np.linalg.norm(images, axis=1) >= 1.0):
                raise InvalidGroupError(f"generator {index} does not preserve the unit ball")
            if np.max(np.abs(images - probes)) <= settings.default_tolerance:
                raise InvalidGroupError(f"generator {index} acts as the identity")
            letters[index] = generator
            letters[-index] = generator.inverse()
        object.__setattr__(self, "_letters", letters)

    @property
    def alphabet(self) -> Tuple[int, ...]:
        return tuple(letter for i in range(1, len(self.generators) + 1) for letter in (i, -i))

    @property
    def is_trivial(self) -> bool:
        return not self.generators

    def letter_map(self, letter: int) -> MobiusMap:
        return self._letters[letter]

    def word_map(self, word: Word) -> MobiusMap:
        """The element g_{w0}∘g_{w1}∘…; the last letter acts first."""
        result = MobiusMap.identity(self.dimension)
        for letter in word:
            result = result.compose(self._letters[letter])
        return result

    def apply_word(self, word: Word, X: np.ndarray) -> np.ndarray:
        out = np.atleast_2d(np.asarray(X, dtype=float))
        for letter in reversed(word):
            out = self._letters[letter].apply_array(out)
        return out

    def max_letter_displacement(self, x: np.ndarray) -> float:
        """max over letters a of h(x, g_a x); zero for the trivial group."""
        if self.is_trivial:
            return 0.0
        x = np.atleast_2d(x)
        return float(
            max(hyp_dist_array(x, self._letters[a].apply_array(x))[0] for a in self.alphabet)
        )


@dataclass(frozen=True)
class OrbitPoint:
    """An orbit point w(seed) with its word."""

    word: Word
    point: Point
    displacement: float  # h(seed, w(seed))
    distance: float  # h(center, w(seed)) for the search that found it


@dataclass
class OrbitSearch:
    points: List[OrbitPoint]
    complete: bool
    visited: int
    pruned: int
    delta: float


def _word_sort_key(word: Word) -> Tuple[int, Tuple[int, ...]]:
    return len(word), tuple((abs(a), a < 0) for a in word)


class _WordTree:
    """Parent/letter arrays for words built by left extension: child = g_a ∘ parent."""

    def __init__(self):
        self.parent: List[int] = [-1]
        self.letter: List[int] = [0]
        self.depth: List[int] = [0]

    def add(self, parents: np.ndarray, letters: np.ndarray, depth: int) -> np.ndarray:
        start = len(self.parent)
        self.parent.extend(int(p) for p in parents)
        self.letter.extend(int(a) for a in letters)
        self.depth.extend([depth] * len(parents))
        return np.arange(start, len(self.parent))

    def word(self, index: int) -> Word:
        out = []
        while index > 0:
            out.append(self.letter[index])
            index = self.parent[index]
        return tuple(out)


def _extend(group: GroupPresentation, points: np.ndarray, first: np.ndarray):
    """All freely reduced left extensions of a level: returns (points, parent slots, letters)."""
    new_points, parents, letters = [], [], []
    for a in group.alphabet:
        allowed = np.nonzero(first != -a)[0]
        if allowed.size == 0:
            continue
        new_points.append(group.letter_map(a).apply_array(points[allowed]))
        parents.append(allowed)
        letters.append(np.full(allowed.size, a))
    if not new_points:
        n = points.shape[1]
        return np.empty((0, n)), np.empty(0, dtype=int), np.empty(0, dtype=int)
    return np.vstack(new_points), np.concatenate(parents), np.concatenate(letters)


class ElementTable:
    """
    Group elements up to a word length, deduplicated by their action on probes.

    Elements are stored as a tree of left extensions so images of arbitrary
    points under every element can be computed level by level.
    """

    def __init__(self, group: GroupPresentation, max_word_len: int, cap: Optional[int] = None):
        if max_word_len < 0:
            raise ValueError(f"max_word_len must be >= 0 (got: {max_word_len})")
        self.group = group
        self.max_word_len = max_word_len
        self.cap = cap or settings.max_elements
        self._tree = _WordTree()
        self._levels: List[np.ndarray] = [np.array([0])]
        self._build()

    def _build(self):
        group = self.group
        probes = _probe_points(group.dimension)
        n = group.dimension

        level_sig = probes[None, :, :]  # (1, P, n)
        level_first = np.array([0])
        all_keys = level_sig[:, :3, :].reshape(1, -1)
        all_sigs = [level_sig]

        for depth in range(1, self.max_word_len + 1):
            if group.is_trivial:
                break
            count = level_sig.shape[0]
            flat = level_sig.reshape(-1, n)
            parent_first = np.repeat(level_first, PROBE_COUNT)
            new_flat, slot, letters = _extend(group, flat, parent_first)
            # slots index flattened (element, probe) rows; keep one row per element
            element_of = slot // PROBE_COUNT
            order = np.lexsort((slot % PROBE_COUNT, element_of, letters))
            new_flat, element_of, letters = new_flat[order], element_of[order], letters[order]
            child_sig = new_flat.reshape(-1, PROBE_COUNT, n)
            child_parent = element_of[::PROBE_COUNT]
            child_letter = letters[::PROBE_COUNT]

            keep = self._dedup(child_sig, all_keys, np.vstack(all_sigs))
            child_sig = child_sig[keep]
            if child_sig.shape[0] == 0:
                logger.info(f"Enumeration closed at word length {depth - 1}")
                break
            parent_ids = self._levels[-1][child_parent[keep]]
            ids = self._tree.add(parent_ids, child_letter[keep], depth)
            self._levels.append(ids)
            total = len(self._tree.parent)
            if total > self.cap:
                raise BudgetExceededError(total, self.cap)

            level_sig = child_sig
            level_first = child_letter[keep]
            all_sigs.append(child_sig)
            all_keys = np.vstack([all_keys, child_sig[:, :3, :].reshape(child_sig.shape[0], -1)])
            logger.debug(f"level {depth}: {ids.size} elements (from {count} parents)")

    @staticmethod
    def _dedup(candidates: np.ndarray, known_keys: np.ndarray, known_sigs: np.ndarray) -> np.ndarray:
        """Boolean mask of candidates not equal (on all probes) to a known or earlier candidate."""
        m = candidates.shape[0]
        keys = candidates[:, :3, :].reshape(m, -1)
        keep = np.ones(m, dtype=bool)
        tree = cKDTree(known_keys)
        for i, hits in enumerate(tree.query_ball_point(keys, r=1e-7)):
            for j in hits:
                if np.max(np.abs(known_sigs[j] - candidates[i])) <= DEDUP_TOL:
                    keep[i] = False
                    break
        for i, j in sorted(cKDTree(keys).query_pairs(r=1e-7)):
            if keep[i] and keep[j] and np.max(np.abs(candidates[i] - candidates[j])) <= DEDUP_TOL:
                keep[j] = False
        return keep

    def __len__(self) -> int:
        return len(self._tree.parent)

    @property
    def levels(self) -> List[np.ndarray]:
        return self._levels

    def word(self, index: int) -> Word:
        return self._tree.word(index)

    def words(self) -> List[Word]:
        return [self._tree.word(i) for i in range(len(self))]

    def images(self, X: np.ndarray) -> np.ndarray:
        """(E, N, n) array of every element applied to every row of X."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        out = np.empty((len(self),) + X.shape)
        out[0] = X
        parent = np.asarray(self._tree.parent)
        letter = np.asarray(self._tree.letter)
        for ids in self._levels[1:]:
            for a in self.group.alphabet:
                sel = ids[letter[ids] == a]
                if sel.size:
                    src = out[parent[sel]].reshape(-1, X.shape[1])
                    out[sel] = self.group.letter_map(a).apply_array(src).reshape(sel.size, *X.shape)
        return out

    def nearest_translate(self, X: np.ndarray, Y: np.ndarray, chunk: Optional[int] = None):
        """
        For each row pair, min over elements w of h(w x, y) and the minimizing element.

        Returns:
            (distances (N,), element indices (N,), shell_clear (N,) bool)
        """
        X = np.atleast_2d(np.asarray(X, dtype=float))
        Y = np.atleast_2d(np.asarray(Y, dtype=float))
        best = np.empty(X.shape[0])
        arg = np.empty(X.shape[0], dtype=int)
        clear = np.ones(X.shape[0], dtype=bool)
        chunk = chunk or max(1, 4_000_000 // (len(self) * X.shape[1]))
        last = self._levels[-1] if len(self._levels) > self.max_word_len else np.empty(0, dtype=int)
        for start in range(0, X.shape[0], chunk):
            sl = slice(start, start + chunk)
            dist = hyp_dist_array(self.images(X[sl]), Y[sl][None, :, :])
            dist = np.where(np.isfinite(dist), dist, np.inf)
            arg[sl] = np.argmin(dist, axis=0)
            best[sl] = dist[arg[sl], np.arange(dist.shape[1])]
            if last.size:
                delta = np.array([self.group.max_letter_displacement(y) for y in Y[sl]])
                clear[sl] = np.all(dist[last] > best[sl] + delta, axis=0)
        return best, arg, clear

    def min_displacement(self, X: np.ndarray) -> Tuple[float, Optional[int], Optional[int]]:
        """min over nontrivial elements w and rows x of h(x, w x), with (element, row) argmin."""
        if len(self) <= 1:
            return math.inf, None, None
        X = np.atleast_2d(np.asarray(X, dtype=float))
        disp = hyp_dist_array(self.images(X)[1:], X[None, :, :])
        disp = np.where(np.isfinite(disp), disp, np.inf)
        e, i = np.unravel_index(int(np.argmin(disp)), disp.shape)
        return float(disp[e, i]), int(e) + 1, int(i)


@lru_cache(maxsize=32)
def element_table(g: GroupPresentation, max_word_len: int) -> ElementTable:
    """Shared ElementTable per (group, word length); presentations hash by identity."""
    return ElementTable(g, max_word_len)


def enumerate_elements(
    g: GroupPresentation, max_word_len: int, cap: Optional[int] = None
) -> List[Tuple[Word, MobiusMap]]:
    """
    Freely reduced words up to max_word_len, deduplicated by action on probes.

    Returns:
        (word, map) pairs sorted by word length, then lexicographically
    """
    table = ElementTable(g, max_word_len, cap)
    words = sorted(table.words(), key=_word_sort_key)
    return [(word, g.word_map(word)) for word in words]


def _search(
    g: GroupPresentation,
    seed: np.ndarray,
    center: np.ndarray,
    radius: float,
    max_word_len: int,
    shrink: bool = False,
) -> Tuple[List[Tuple[int, np.ndarray, float]], _WordTree, bool, int, int, float]:
    """
    Breadth-first orbit search with triangle-inequality pruning.

    A node w(seed) is dropped when h(w(seed), center) - remaining * delta > radius,
    where delta = max over letters of h(center, g_a(center)); left extension by a
    word of length j moves the distance to center by at most j * delta.
    With shrink=True the radius tightens to the best distance found so far.

    Closure is a one-level lookahead: the search counts as complete when no
    fresh word of length max_word_len lands within radius + delta, so one more
    letter cannot reach the ball. Words k > 1 letters longer may still come
    within radius + k * delta of a frontier point; callers needing a deeper
    guarantee raise max_word_len.
    """
    seed = np.atleast_2d(seed)
    center = np.atleast_2d(center)
    delta = g.max_letter_displacement(center)
    tree = _WordTree()
    points = seed.copy()
    first = np.array([0])
    ids = np.array([0])
    dist = hyp_dist_array(points, center)
    found = [(0, seed[0], float(dist[0]))] if dist[0] <= radius else []
    if shrink:
        radius = min(radius, float(dist[0]))
    visited, pruned = 1, 0
    complete = True
    seen = cKDTree(points)
    seen_points = [points]

    for depth in range(1, max_word_len + 1):
        if g.is_trivial or points.shape[0] == 0:
            break
        new_points, slot, letters = _extend(g, points, first)
        visited += new_points.shape[0]
        d = hyp_dist_array(new_points, center)
        d = np.where(np.isfinite(d), d, np.inf)

        # drop points already reached by a shorter or equal word
        fresh = np.ones(new_points.shape[0], dtype=bool)
        for i, hits in enumerate(seen.query_ball_point(new_points, r=DEDUP_TOL)):
            if hits:
                fresh[i] = False
        for i, j in cKDTree(new_points).query_pairs(r=DEDUP_TOL):
            if fresh[i] and fresh[j]:
                fresh[max(i, j)] = False

        remaining = max_word_len - depth
        if shrink and np.any(fresh & (d < radius)):
            radius = float(np.min(d[fresh]))
        keep = fresh & (d - remaining * delta <= radius)
        pruned += int(np.count_nonzero(fresh & ~keep))

        if depth == max_word_len and np.any(fresh & (d <= radius + delta)):
            complete = False

        child_ids = tree.add(ids[slot[keep]], letters[keep], depth)
        for cid, p, dd in zip(child_ids, new_points[keep], d[keep]):
            if dd <= radius:
                found.append((int(cid), p, float(dd)))
        points, first, ids = new_points[keep], letters[keep], child_ids
        if points.shape[0]:
            seen_points.append(points)
            seen = cKDTree(np.vstack(seen_points))
        else:
            logger.debug(f"orbit search closed at depth {depth}")
            break

    if shrink:
        found = [f for f in found if f[2] <= radius + settings.default_tolerance]
    return found, tree, complete, visited, pruned, delta


def orbit_in_ball(
    g: GroupPresentation,
    seed: Point,
    center: Point,
    radius: float,
    max_word_len: int,
) -> OrbitSearch:
    """
    Orbit points w(seed) within hyperbolic distance `radius` of `center`.

    Returns:
        OrbitSearch sorted by distance to center; complete=False signals that a
        word of maximal length still landed within radius + delta (one-level
        lookahead, see _search)
    """
    if radius < 0:
        raise ValueError(f"radius must be non-negative (got: {radius})")
    found, tree, complete, visited, pruned, delta = _search(
        g, seed.coords, center.coords, radius, max_word_len
    )
    points = []
    for node, coords, dist in found:
        p = Point(coords)
        points.append(OrbitPoint(tree.word(node), p, float(hyp_dist_array(seed.coords, coords)), dist))
    points.sort(key=lambda o: (o.distance, _word_sort_key(o.word)))
    if not complete:
        logger.warning(
            f"orbit search for '{g.label}' exhausted word length {max_word_len} without closure"
        )
    return OrbitSearch(points, complete, visited, pruned, delta)


def nearest_orbit_point(
    g: GroupPresentation, seed: np.ndarray, center: np.ndarray, max_word_len: int
) -> Tuple[float, Word, np.ndarray, bool]:
    """min over words w of h(w(seed), center), searched with a shrinking radius."""
    seed = np.asarray(seed, dtype=float).reshape(-1)
    center = np.asarray(center, dtype=float).reshape(-1)
    start = float(hyp_dist_array(seed, center))
    found, tree, complete, _, _, _ = _search(g, seed, center, start, max_word_len, shrink=True)
    node, coords, dist = min(found, key=lambda f: (f[2], _word_sort_key(tree.word(f[0]))))
    return dist, tree.word(node), coords, complete


def exhaustive_min_distance(g: GroupPresentation, x: np.ndarray, y: np.ndarray, max_word_len: int) -> float:
    """
    min over all freely reduced words of length <= L of h(w x, y), without pruning.

    Splits w = v^{-1} u with |u| = ceil(L/2), |v| = floor(L/2), so that
    h(w x, y) = h(u x, v y), and compares the two half-orbits pairwise.
    """
    left = _all_words_points(g, np.asarray(x, dtype=float), (max_word_len + 1) // 2)
    right = _all_words_points(g, np.asarray(y, dtype=float), max_word_len // 2)
    best = math.inf
    for start in range(0, left.shape[0], 4096):
        d = hyp_dist_array(left[start:start + 4096, None, :], right[None, :, :])
        d = np.where(np.isfinite(d), d, np.inf)
        best = min(best, float(d.min()))
    return best


def _all_words_points(g: GroupPresentation, x: np.ndarray, length: int) -> np.ndarray:
    points = np.atleast_2d(x)
    level, first = points, np.array([0])
    collected = [points]
    for _ in range(length):
        if g.is_trivial:
            break
        level, _, first = _extend(g, level, first)
        collected.append(level)
    return np.vstack(collected)


def make_cyclic_translation(n: int, length: float) -> GroupPresentation:
    """Cyclic group generated by the translation of length ℓ along the first axis."""
    if length <= 0:
        raise InvalidGroupError(f"translation length must be positive (got: {length})")
    return GroupPresentation(n, (axis_translation(n, length),), label=f"cyclic(length={length})")


@dataclass(frozen=True)
class Circle:
    """A circle in the plane orthogonal to the unit circle."""

    center: Tuple[float, float]
    radius: float

    @classmethod
    def from_geodesic(cls, angle: float, distance: float) -> "Circle":
        """The geodesic at hyperbolic distance `distance` from 0 in direction `angle`."""
        t = math.tanh(distance / 2.0)
        u = (math.cos(angle), math.sin(angle))
        scale = (1.0 + t * t) / (2.0 * t)
        return cls((u[0] * scale, u[1] * scale), (1.0 - t * t) / (2.0 * t))

    def inversion(self) -> SphereInversion:
        return sphere_inversion(self.center, self.radius, tol=1e-9)


def make_schottky_2d(circle_pairs: Sequence[Tuple[Circle, Circle]], label: str = "") -> GroupPresentation:
    """
    Schottky group in B^2: each pair (A, B) yields σ_B∘σ_A, which maps the
    outside of disk A into disk B.
    """
    circles = [c for pair in circle_pairs for c in pair]
    for i, a in enumerate(circles):
        for b in circles[i + 1:]:
            gap = math.dist(a.center, b.center) - a.radius - b.radius
            if gap <= 0:
                raise InvalidGroupError(f"Schottky disks overlap (gap {gap:.3e})")
    generators = tuple(
        MobiusMap(2, (b.inversion(), a.inversion())) for a, b in circle_pairs
    )
    return GroupPresentation(2, generators, label=label or f"schottky({len(generators)} pairs)")


@dataclass
class DiscretenessReport:
    """Heuristic falsifier for discontinuity and freeness; never a proof."""

    min_displacement: float
    word: Optional[Word]
    probe: Optional[List[float]]
    threshold: float
    passed: bool
    fixed_point_words: List[Word]
    element_count: int
    heuristic: bool = True

    def to_dict(self) -> Dict[str, object]:
        from app.models.reports import encode_extended

        return {
            "min_displacement": encode_extended(self.min_displacement),
            "word": list(self.word) if self.word is not None else None,
            "probe": self.probe,
            "threshold": self.threshold,
            "passed": self.passed,
            "fixed_point_words": [list(w) for w in self.fixed_point_words],
            "element_count": self.element_count,
            "heuristic": self.heuristic,
        }


def _ball_chart(y: np.ndarray) -> np.ndarray:
    return y / (1.0 + np.linalg.norm(y))


def _refine_fixed_point(g: GroupPresentation, word: Word, start: np.ndarray) -> float:
    element = g.word_map(word)

    def displacement(y: np.ndarray) -> float:
        z = _ball_chart(y)[None, :]
        value = float(hyp_dist_array(z, element.apply_array(z))[0])
        return value if math.isfinite(value) else 1e6

    y0 = start / (1.0 - np.linalg.norm(start))
    result = optimize.minimize(displacement, y0, method="Nelder-Mead", options={"xatol": 1e-10, "fatol": 1e-12})
    return float(result.fun)


def check_discreteness(
    g: GroupPresentation,
    max_word_len: int,
    probe_count: int,
    threshold: float = 1e-3,
    seed: int = 0,
    refine: int = 5,
) -> DiscretenessReport:
    """
    Minimal displacement over enumerated nontrivial words and probes, plus a fixed-point scan.

    The probes are the origin and uniform points of B(0, 0.9). The `refine`
    smallest (word, probe) displacements are locally minimized over the ball;
    words whose refined displacement falls below 1e-6 are reported as having
    fixed points.
    """
    if max_word_len <= 0 or probe_count <= 0:
        raise ValueError("budgets must be positive")
    rng = np.random.default_rng(seed)
    n = g.dimension
    probes = np.vstack([np.zeros((1, n)), sample_ball(rng, probe_count - 1, n, 0.9)])
    table = ElementTable(g, max_word_len)
    if len(table) <= 1:
        return DiscretenessReport(math.inf, None, None, threshold, True, [], len(table))

    disp = hyp_dist_array(table.images(probes)[1:], probes[None, :, :])
    disp = np.where(np.isfinite(disp), disp, np.inf)
    e, i = np.unravel_index(int(np.argmin(disp)), disp.shape)
    min_disp = float(disp[e, i])

    fixed: List[Word] = []
    per_element = disp.min(axis=1)
    for idx in np.argsort(per_element)[:refine]:
        word = table.word(int(idx) + 1)
        start = probes[int(np.argmin(disp[idx]))]
        if per_element[idx] < 1e-6 or _refine_fixed_point(g, word, start) < 1e-6:
            fixed.append(word)

    passed = min_disp > threshold and not fixed
    logger.info(
        f"discreteness probe '{g.label}': min displacement {min_disp:.6g}, "
        f"{len(fixed)} fixed-point word(s), {'pass' if passed else 'fail'}"
    )
    return DiscretenessReport(
        min_disp,
        table.word(int(e) + 1),
        probes[i].tolist(),
        threshold,
        passed,
        sorted(fixed, key=_word_sort_key),
        len(table),
    )
