"""Independent reference implementations used to cross-check the fast metrics.

Everything here favours obviousness over speed: plain recursion with
memoization for edit distance, exhaustive enumeration for graph edit distance
and for segment-assignment branches in the average-precision computation.
"""

from functools import lru_cache
from itertools import combinations

from docrec.markup import LayoutGraph


@lru_cache(maxsize=None)
def slow_edit_distance(a: str, b: str) -> int:
    if not a:
        return len(b)
    if not b:
        return len(a)
    return min(
        slow_edit_distance(a[1:], b) + 1,
        slow_edit_distance(a, b[1:]) + 1,
        slow_edit_distance(a[1:], b[1:]) + (a[0] != b[0]),
    )


def slow_ged(g1: LayoutGraph, g2: LayoutGraph) -> int:
    """Exact graph edit distance by enumerating every injective node mapping."""
    v1 = list(g1.nodes)
    v2 = list(g2.nodes)
    cls2 = dict(v2)
    e1 = {(s, d): k for s, d, k in g1.edges}
    e2 = {(s, d): k for s, d, k in g2.edges}

    def mapping_cost(mapping: dict) -> int:
        cost = 0
        for nid, cls in v1:
            if nid in mapping:
                cost += cls != cls2[mapping[nid]]
            else:
                cost += 1
        mapped2 = set(mapping.values())
        cost += sum(1 for nid, _ in v2 if nid not in mapped2)
        for (s, d), k in e1.items():
            if s in mapping and d in mapping:
                k2 = e2.get((mapping[s], mapping[d]))
                cost += 1 if k2 is None else (k != k2)
            else:
                cost += 1
        inverse = {v: k for k, v in mapping.items()}
        for (s, d), _ in e2.items():
            if s in inverse and d in inverse and (inverse[s], inverse[d]) in e1:
                continue  # handled above as a match or substitution
            cost += 1
        return cost

    best = [float("inf")]

    def rec(i: int, mapping: dict, free: list):
        if i == len(v1):
            best[0] = min(best[0], mapping_cost(mapping))
            return
        nid = v1[i][0]
        rec(i + 1, mapping, free)  # delete this node
        for j, cand in enumerate(free):
            mapping[nid] = cand
            rec(i + 1, mapping, free[:j] + free[j + 1:])
            del mapping[nid]

    rec(0, {}, [nid for nid, _ in v2])
    return int(best[0])


def _segment_cer(gt: str, pred: str) -> float:
    if not gt:
        return 0.0 if not pred else float("inf")
    return slow_edit_distance(gt, pred) / len(gt)


def slow_ap_from_flags(flags: list, n_gt: int) -> float:
    """Interpolated AP; every true positive adds exactly 1/n_gt recall, so the
    integral reduces to a sum of right-max precisions at the true positives."""
    if n_gt == 0:
        return 1.0 if not flags else 0.0
    precisions = []
    tp = 0
    for k, f in enumerate(flags, start=1):
        tp += f
        precisions.append(tp / k)
    total = 0.0
    for k, f in enumerate(flags):
        if f:
            total += max(precisions[k:])
    return total / n_gt


def slow_ap_branches(gt: list, pred: list, threshold: float) -> tuple[float, set]:
    """All achievable AP values over tie-break choices in greedy matching.

    Returns ``(canonical, achievable)`` where ``canonical`` resolves CER ties
    by taking the earliest remaining ground-truth segment and ``achievable``
    collects the AP of every tie branch.
    """
    results: set[float] = set()
    canonical: list[float] = []

    def rec(i: int, remaining: tuple, flags: list, take_first: bool):
        if i == len(pred):
            ap = slow_ap_from_flags(flags, len(gt))
            results.add(round(ap, 12))
            if take_first:
                canonical.append(ap)
            return
        scored = [(_segment_cer(gt[j], pred[i]), j) for j in remaining]
        best = min((c for c, _ in scored), default=float("inf"))
        if best < threshold:
            ties = [j for c, j in scored if c == best]
            for n, j in enumerate(ties):
                rec(i + 1, tuple(x for x in remaining if x != j),
                    flags + [True], take_first and n == 0)
        else:
            rec(i + 1, remaining, flags + [False], take_first)

    rec(0, tuple(range(len(gt))), [], True)
    return canonical[0], results


def random_layout_graph(rng, max_entities: int = 5) -> LayoutGraph:
    """Arbitrary small directed labelled graph in layout-graph form."""
    n = rng.randint(0, max_entities)
    nodes = [("D", None)] + [(f"n{i}", rng.choice("abc")) for i in range(1, n + 1)]
    ids = [nid for nid, _ in nodes]
    edges = []
    for s, d in combinations(ids, 2):
        if rng.random() < 0.4:
            if rng.random() < 0.5:
                s, d = d, s
            edges.append((s, d, rng.choice(("membership", "order"))))
    return LayoutGraph(tuple(nodes), tuple(edges))


def slow_ctc_loss(logits, target, blank=None):
    """Brute-force alignment sum: enumerate every frame labelling, keep the
    ones that collapse (merge repeats, drop blanks) to the target, and add
    up their path probabilities."""
    import numpy as np
    from itertools import product

    arr = np.asarray(logits, dtype=np.float64)
    n_frames, n_labels = arr.shape
    if blank is None:
        blank = n_labels - 1
    shifted = arr - arr.max(axis=1, keepdims=True)
    probs = np.exp(shifted)
    probs /= probs.sum(axis=1, keepdims=True)
    want = [int(t) for t in target]
    total = 0.0
    for path in product(range(n_labels), repeat=n_frames):
        collapsed = []
        prev = None
        for lab in path:
            if lab != prev and lab != blank:
                collapsed.append(lab)
            prev = lab
        if collapsed == want:
            p = 1.0
            for t, lab in enumerate(path):
                p *= probs[t, lab]
            total += p
    return -np.log(total) if total > 0 else float("inf")
