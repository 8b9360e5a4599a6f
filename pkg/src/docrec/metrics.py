"""Evaluation metrics for joint text / layout recognition.

All corpus-level metrics are reported as percentages and aggregate the
corpus-wide numerator over the corpus-wide denominator (micro average), so
long documents carry proportionally more weight than short ones.
"""

from __future__ import annotations

import json
import re
from collections import Counter
from dataclasses import asdict, dataclass
from typing import Sequence

from .grammar import LayoutGrammar
from .markup import LayoutGraph, build_graph, post_process
from .tokens import TokenSequence


class EmptyGroundTruthCorpus(ValueError):
    """The metric denominator over the ground truth corpus is zero."""


class LengthMismatch(ValueError):
    """Paired ground-truth / prediction collections differ in length."""


class GraphTooLarge(ValueError):
    """Graph pair exceeds the exact edit-distance search budget."""


def _check_paired(gt: Sequence, pred: Sequence) -> None:
    if len(gt) != len(pred):
        raise LengthMismatch(f"{len(gt)} ground truths vs {len(pred)} predictions")


# -- edit distance on sequences ------------------------------------------------


def levenshtein(a: Sequence, b: Sequence) -> int:
    """Edit distance with unit insertion/deletion/substitution costs."""
    if len(a) < len(b):
        a, b = b, a
    prev = list(range(len(b) + 1))
    for i, x in enumerate(a, start=1):
        cur = [i]
        for j, y in enumerate(b, start=1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (x != y)))
        prev = cur
    return prev[len(b)]


def _as_text(doc: str | TokenSequence) -> str:
    if isinstance(doc, TokenSequence):
        return doc.text()
    return doc


def cer(gt: Sequence[str | TokenSequence], pred: Sequence[str | TokenSequence]) -> float:
    """Corpus character error rate, in percent; layout tokens are ignored."""
    _check_paired(gt, pred)
    num = sum(levenshtein(_as_text(g), _as_text(p)) for g, p in zip(gt, pred))
    den = sum(len(_as_text(g)) for g in gt)
    if den == 0:
        raise EmptyGroundTruthCorpus("ground truth contains no characters")
    return 100.0 * num / den


_WORD_RE = re.compile(r"\w+(?:'\w+)*|[^\w\s]", re.UNICODE)


def _words(text: str) -> list[str]:
    """Whitespace-delimited words; punctuation splits off as its own word,
    except apostrophes joining two letters (l'an stays one word)."""
    return _WORD_RE.findall(text)


def wer(gt: Sequence[str | TokenSequence], pred: Sequence[str | TokenSequence]) -> float:
    """Corpus word error rate, in percent."""
    _check_paired(gt, pred)
    num = den = 0
    for g, p in zip(gt, pred):
        gw, pw = _words(_as_text(g)), _words(_as_text(p))
        num += levenshtein(gw, pw)
        den += len(gw)
    if den == 0:
        raise EmptyGroundTruthCorpus("ground truth contains no words")
    return 100.0 * num / den


# -- graph edit distance -------------------------------------------------------


def _edge_map(g: LayoutGraph) -> dict[tuple[str, str], str]:
    return {(s, d): k for s, d, k in g.edges}


def ged(g1: LayoutGraph, g2: LayoutGraph, *, max_nodes: int = 32) -> int:
    """Exact graph edit distance with unit costs.

    Node substitution costs 1 when classes differ, 0 otherwise; node and edge
    insertions/deletions cost 1; an edge kept between two substituted nodes
    costs 1 when its kind differs.  Solved by depth-first branch and bound
    over node assignments; raises :class:`GraphTooLarge` beyond the budget on
    the combined node count.
    """
    if g1.n_nodes + g2.n_nodes > max_nodes:
        raise GraphTooLarge(
            f"{g1.n_nodes}+{g2.n_nodes} nodes exceeds the exact-search budget {max_nodes}")
    if g2.n_nodes < g1.n_nodes:  # symmetric; keep branching low
        g1, g2 = g2, g1

    n1, n2 = g1.n_nodes, g2.n_nodes
    cls1 = [c for _, c in g1.nodes]
    cls2 = [c for _, c in g2.nodes]
    idx1 = {nid: i for i, (nid, _) in enumerate(g1.nodes)}
    idx2 = {nid: i for i, (nid, _) in enumerate(g2.nodes)}
    e1 = {(idx1[s], idx1[d]): k for s, d, k in g1.edges}
    e2 = {(idx2[s], idx2[d]): k for s, d, k in g2.edges}

    # edges of g1 become payable once their later endpoint is processed
    e1_by_last = [0] * (n1 + 1)
    for (a, b) in e1:
        e1_by_last[max(a, b)] += 1
    e1_remaining = [0] * (n1 + 1)
    for i in range(n1 - 1, -1, -1):
        e1_remaining[i] = e1_remaining[i + 1] + e1_by_last[i]

    cls1_suffix: list[Counter] = [Counter() for _ in range(n1 + 1)]
    for i in range(n1 - 1, -1, -1):
        cls1_suffix[i] = cls1_suffix[i + 1].copy()
        cls1_suffix[i][cls1[i]] += 1

    assign: list[int | None] = [None] * n1

    def pair_step_cost(i: int, w: int | None,
                       consumed: set[tuple[int, int]]) -> tuple[int, list[tuple[int, int]]]:
        """Cost of node i -> w plus all edges between i and nodes < i.

        Returns the cost and the g2 edges newly accounted for (to be added to
        ``consumed`` by the caller and removed again on backtrack).
        """
        cost = 0
        if w is None or cls1[i] != cls2[w]:
            cost += 1
        newly: list[tuple[int, int]] = []
        for j in range(i):
            q = assign[j]
            for a, b, wa, wb in ((i, j, w, q), (j, i, q, w)):
                k1 = e1.get((a, b))
                k2 = None
                if wa is not None and wb is not None and (wa, wb) not in consumed:
                    k2 = e2.get((wa, wb))
                if k1 is None and k2 is None:
                    continue
                if k1 is not None and k2 is not None:
                    cost += 0 if k1 == k2 else 1
                    newly.append((wa, wb))
                else:
                    cost += 1
                    if k2 is not None:
                        newly.append((wa, wb))
        return cost, newly

    # greedy same-class matching gives the initial upper bound
    used: set[int] = set()
    consumed: set[tuple[int, int]] = set()
    best = 0
    for i in range(n1):
        w = next((v for v in range(n2) if v not in used and cls2[v] == cls1[i]), None)
        assign[i] = w
        if w is not None:
            used.add(w)
        step, newly = pair_step_cost(i, w, consumed)
        consumed.update(newly)
        best += step
    best += (n2 - len(used)) + (len(e2) - len(consumed))

    assign = [None] * n1
    free2 = Counter(cls2)

    def lower_bound(i: int, used_count: int, consumed_count: int) -> int:
        r1, r2 = n1 - i, n2 - used_count
        overlap = sum(min(cls1_suffix[i][c], free2[c]) for c in cls1_suffix[i])
        node_lb = max(r1, r2) - overlap
        edge_lb = abs(e1_remaining[i] - (len(e2) - consumed_count))
        return node_lb + edge_lb

    def dfs(i: int, cost: int, used: set[int], consumed: set[tuple[int, int]]):
        nonlocal best
        if cost + lower_bound(i, len(used), len(consumed)) >= best:
            return
        if i == n1:
            best = min(best, cost + (n2 - len(used)) + (len(e2) - len(consumed)))
            return
        choices: list[int | None] = sorted(
            (v for v in range(n2) if v not in used),
            key=lambda v: cls2[v] != cls1[i])  # same-class matches first
        choices.append(None)
        for w in choices:
            step, newly = pair_step_cost(i, w, consumed)
            assign[i] = w
            consumed.update(newly)
            if w is not None:
                used.add(w)
                free2[cls2[w]] -= 1
            dfs(i + 1, cost + step, used, consumed)
            if w is not None:
                used.remove(w)
                free2[cls2[w]] += 1
            consumed.difference_update(newly)
            assign[i] = None

    dfs(0, 0, set(), set())
    return best


def loer(gt: Sequence[TokenSequence], pred: Sequence[TokenSequence],
         grammar: LayoutGrammar, *, max_nodes: int = 32) -> float:
    """Layout ordering error rate, in percent.

    Sum of graph edit distances over the corpus divided by the summed ground
    truth graph sizes (node count + edge count).  Documents are compared page
    by page: both graphs are decomposed at page-class entities, pages are
    aligned positionally, and an unmatched page is charged against a bare
    document-root graph.  Predictions must already be balanced markup (run
    :func:`docrec.markup.post_process` first on raw model output).
    """
    _check_paired(gt, pred)
    num = den = 0
    for g_seq, p_seq in zip(gt, pred):
        g_graph = build_graph(g_seq, grammar)
        p_graph = build_graph(p_seq, grammar)
        den += g_graph.size
        g_pages = g_graph.page_subgraphs(grammar)
        p_pages = p_graph.page_subgraphs(grammar)
        for i in range(max(len(g_pages), len(p_pages))):
            gp = g_pages[i] if i < len(g_pages) else LayoutGraph.document()
            pp = p_pages[i] if i < len(p_pages) else LayoutGraph.document()
            num += ged(gp, pp, max_nodes=max_nodes)
    if den == 0:
        raise EmptyGroundTruthCorpus("ground truth layout graphs are empty")
    return 100.0 * num / den


# -- mean average precision over character error thresholds ---------------------


def extract_subsequences(seq: TokenSequence) -> dict[str, list[str]]:
    """Text content of every layout entity, grouped by class.

    An entity's text is every character between its begin and end token,
    including characters of nested entities.  Within a class, entities keep
    the order of their begin tokens.  Stray end tokens are ignored and open
    entities are closed at the end of the sequence, so post-processed and
    ground-truth sequences are both accepted.
    """
    found: list[tuple[str, list[str]]] = []
    stack: list[int] = []  # indices into `found`
    for t in seq:
        if t.is_begin:
            stack.append(len(found))
            found.append((t.value, []))
        elif t.is_end:
            if stack:
                stack.pop()
        else:
            for k in stack:
                found[k][1].append(t.value)
    out: dict[str, list[str]] = {}
    for cls, chars in found:
        out.setdefault(cls, []).append("".join(chars))
    return out


def score_subsequences(seq: TokenSequence,
                       probs: Sequence[float]) -> dict[str, list[tuple[float, str]]]:
    """Entity texts with confidence scores, grouped by class, best first.

    An entity's confidence is the mean of the prediction probabilities of its
    begin and end tokens (an entity left open at the end of the sequence
    scores its begin token alone).  ``probs`` holds one probability per token
    of ``seq``.  Within a class, entities are ordered by descending score;
    ties keep reading order.
    """
    if len(probs) != len(seq):
        raise LengthMismatch(
            f"{len(probs)} probabilities for {len(seq)} tokens")
    found: list[list] = []  # [class, chars, begin_p, end_p or None]
    stack: list[int] = []
    for t, p in zip(seq, probs):
        if t.is_begin:
            stack.append(len(found))
            found.append([t.value, [], float(p), None])
        elif t.is_end:
            if stack:
                found[stack.pop()][3] = float(p)
        else:
            for k in stack:
                found[k][1].append(t.value)
    out: dict[str, list[tuple[float, str]]] = {}
    for cls, chars, begin_p, end_p in found:
        score = begin_p if end_p is None else (begin_p + end_p) / 2.0
        out.setdefault(cls, []).append((score, "".join(chars)))
    for entries in out.values():
        entries.sort(key=lambda e: -e[0])
    return out


def _segment_cer(gt_text: str, pred_text: str) -> float:
    if not gt_text:
        return 0.0 if not pred_text else float("inf")
    return levenshtein(gt_text, pred_text) / len(gt_text)


def ap_cer_at(gt: Sequence[str], pred: Sequence[str], threshold: float) -> float:
    """Average precision of predicted segments at one CER threshold.

    Predictions are processed in the given order (descending confidence when
    available).  A prediction is a true positive when its lowest CER against
    the still-unmatched ground-truth segments is strictly below the
    threshold; that segment is then consumed (ties take the earliest one).
    Precision is interpolated to be non-increasing before integrating over
    recall.
    """
    if not gt:
        return 1.0 if not pred else 0.0
    remaining = list(range(len(gt)))
    flags: list[bool] = []
    for p in pred:
        if remaining:
            best = min(remaining, key=lambda i: _segment_cer(gt[i], p))
            if _segment_cer(gt[best], p) < threshold:
                remaining.remove(best)
                flags.append(True)
                continue
        flags.append(False)
    return _average_precision(flags, len(gt))


def _average_precision(flags: Sequence[bool], n_gt: int) -> float:
    """Interpolated AP from an ordered TP/FP sequence and ground-truth count."""
    if n_gt == 0:
        return 1.0 if not flags else 0.0
    precisions, recalls = [], []
    tp = 0
    for k, f in enumerate(flags, start=1):
        tp += f
        precisions.append(tp / k)
        recalls.append(tp / n_gt)
    ap = 0.0
    prev_recall = 0.0
    for k in range(len(flags)):
        if not flags[k]:
            continue
        p_interp = max(precisions[k:])
        ap += (recalls[k] - prev_recall) * p_interp
        prev_recall = recalls[k]
    return ap


AP_CER_THRESHOLDS = tuple(t / 100 for t in range(5, 55, 5))


def map_cer(gt: Sequence[TokenSequence], pred: Sequence[TokenSequence]) -> float:
    """Mean average precision over CER thresholds 5%..50%, in percent.

    Per document, the AP of each layout class (averaged over the thresholds)
    is weighted by the class's ground-truth character count; documents are
    then weighted by their ground-truth character count.  Predicted segments
    are ranked in reading order.
    """
    _check_paired(gt, pred)
    num = den = 0.0
    for g_seq, p_seq in zip(gt, pred):
        g_segs = extract_subsequences(g_seq)
        p_segs = extract_subsequences(p_seq)
        weights = {c: sum(len(s) for s in segs) for c, segs in g_segs.items()}
        total = sum(weights.values())
        if total == 0:
            continue
        doc_score = 0.0
        for c, g_texts in g_segs.items():
            p_texts = p_segs.get(c, [])
            ap = sum(ap_cer_at(g_texts, p_texts, t) for t in AP_CER_THRESHOLDS)
            ap /= len(AP_CER_THRESHOLDS)
            doc_score += ap * weights[c] / total
        num += doc_score * total
        den += total
    if den == 0:
        raise EmptyGroundTruthCorpus("ground truth contains no characters inside entities")
    return 100.0 * num / den


# -- post-processing edit rate ---------------------------------------------------


def pper(gt: Sequence[TokenSequence], pred: Sequence[TokenSequence],
         grammar: LayoutGrammar) -> float:
    """Post-processing edit rate, in percent.

    Layout-token edits needed to repair the raw predictions, relative to the
    number of layout tokens in the ground truth.  Space collapsing is text
    cleanup and does not count as an edit.
    """
    _check_paired(gt, pred)
    num = sum(post_process(p, grammar).edit_count for p in pred)
    den = sum(g.layout_count() for g in gt)
    if den == 0:
        raise EmptyGroundTruthCorpus("ground truth contains no layout tokens")
    return 100.0 * num / den


# -- aggregation -----------------------------------------------------------------


@dataclass(frozen=True)
class DocumentCounts:
    """Per-document numerators and denominators of every corpus metric.

    Corpus rates are ratios of summed counts, so documents can be processed
    independently (and in parallel) and aggregated afterwards.
    """

    char_errors: int
    chars: int
    word_errors: int
    words: int
    ged: int
    graph_size: int
    map_num: float
    map_den: float
    edits: int
    layout_tokens: int


def document_counts(gt: TokenSequence, pred: TokenSequence,
                    grammar: LayoutGrammar, *,
                    max_nodes: int = 32) -> DocumentCounts:
    """Metric contributions of one raw prediction against its ground truth.

    The prediction is repaired with :func:`docrec.markup.post_process`
    before text and layout comparison, matching :func:`evaluate_corpus`.
    """
    report = post_process(pred, grammar)
    corrected = report.corrected
    g_text, p_text = gt.text(), corrected.text()
    g_words, p_words = _words(g_text), _words(p_text)

    g_graph = build_graph(gt, grammar)
    p_graph = build_graph(corrected, grammar)
    ged_sum = 0
    g_pages = g_graph.page_subgraphs(grammar)
    p_pages = p_graph.page_subgraphs(grammar)
    for i in range(max(len(g_pages), len(p_pages))):
        gp = g_pages[i] if i < len(g_pages) else LayoutGraph.document()
        pp = p_pages[i] if i < len(p_pages) else LayoutGraph.document()
        ged_sum += ged(gp, pp, max_nodes=max_nodes)

    g_segs = extract_subsequences(gt)
    p_segs = extract_subsequences(corrected)
    weights = {c: sum(len(s) for s in segs) for c, segs in g_segs.items()}
    total = sum(weights.values())
    doc_score = 0.0
    if total:
        for c, g_texts in g_segs.items():
            p_texts = p_segs.get(c, [])
            ap = sum(ap_cer_at(g_texts, p_texts, t) for t in AP_CER_THRESHOLDS)
            doc_score += (ap / len(AP_CER_THRESHOLDS)) * weights[c] / total

    return DocumentCounts(
        char_errors=levenshtein(g_text, p_text), chars=len(g_text),
        word_errors=levenshtein(g_words, p_words), words=len(g_words),
        ged=ged_sum, graph_size=g_graph.size,
        map_num=doc_score * total, map_den=float(total),
        edits=report.edit_count, layout_tokens=gt.layout_count(),
    )


@dataclass(frozen=True)
class MetricReport:
    """Corpus evaluation summary; all rates in percent."""

    cer: float | None = None
    wer: float | None = None
    loer: float | None = None
    map_cer: float | None = None
    pper: float | None = None
    n_documents: int = 0

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "MetricReport":
        return cls(**json.loads(text))

    def __str__(self) -> str:
        def fmt(v):
            return "-" if v is None else f"{v:.2f}"
        return (f"CER {fmt(self.cer)}  WER {fmt(self.wer)}  LOER {fmt(self.loer)}  "
                f"mAP_CER {fmt(self.map_cer)}  PPER {fmt(self.pper)}  "
                f"({self.n_documents} docs)")


def evaluate_corpus(gt: Sequence[TokenSequence], pred: Sequence[TokenSequence],
                    grammar: LayoutGrammar, *, max_nodes: int = 32,
                    counts: Sequence[DocumentCounts] | None = None) -> MetricReport:
    """All corpus metrics for raw predicted sequences.

    Predictions are repaired with :func:`docrec.markup.post_process` first;
    text and layout metrics are computed on the repaired output while the
    repair edits themselves feed the post-processing edit rate.  Precomputed
    per-document ``counts`` (from :func:`document_counts`, e.g. gathered in
    parallel) may be supplied to skip recomputation.
    """
    _check_paired(gt, pred)
    if counts is None:
        counts = [document_counts(g, p, grammar, max_nodes=max_nodes)
                  for g, p in zip(gt, pred)]
    elif len(counts) != len(gt):
        raise LengthMismatch(f"{len(counts)} counts for {len(gt)} documents")
    chars = sum(c.chars for c in counts)
    words = sum(c.words for c in counts)
    layout_total = sum(c.layout_tokens for c in counts)
    map_den = sum(c.map_den for c in counts)
    if layout_total == 0:
        raise EmptyGroundTruthCorpus("ground truth contains no layout tokens")
    if chars == 0:
        raise EmptyGroundTruthCorpus("ground truth contains no characters")
    if words == 0:
        raise EmptyGroundTruthCorpus("ground truth contains no words")
    if map_den == 0:
        raise EmptyGroundTruthCorpus(
            "ground truth contains no characters inside entities")
    return MetricReport(
        cer=100.0 * sum(c.char_errors for c in counts) / chars,
        wer=100.0 * sum(c.word_errors for c in counts) / words,
        loer=100.0 * sum(c.ged for c in counts)
             / sum(c.graph_size for c in counts),
        map_cer=100.0 * sum(c.map_num for c in counts) / map_den,
        pper=100.0 * sum(c.edits for c in counts) / layout_total,
        n_documents=len(gt),
    )
