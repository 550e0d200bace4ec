"""Rule families and grounded explanations.

Rules are rendered as text, embedded, and grouped by spherical k-means. Each
group gets a persona summary, and single predictions get explanations whose
stated class always equals the rule's actual verdict.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass

import numpy as np
import pandas as pd

from .dataset import binarize_predicates
from .errors import FormatError
from .formula import EQ, GT, LE, Literal, Rule, evaluate, format_value, iter_literals, parse, serialize
from .llm import prompts
from .llm.providers import complete, embed
from .llm.validation import RuleExplanation, extract_json

_OP_PHRASES = {"And": "all of", "Or": "any of", "AtLeast": "at least {k} of", "AtMost": "at most {k} of", "Choose": "exactly {k} of"}
FIDELITY_NOTICE = (
    "[Fidelity notice: the generated explanation stated a classification that "
    "disagrees with the rule; the classification shown is the rule's own verdict.]"
)
_TRUE_WORDS = {"1", "true", "yes", "positive", "subscribe", "will subscribe", "subscribed"}
_FALSE_WORDS = {"0", "false", "no", "negative", "not subscribe", "will not subscribe", "not subscribed"}


@dataclass(frozen=True)
class RuleDescription:
    rule: Rule
    text: str


@dataclass
class RuleCluster:
    id: int
    member_indices: list
    centroid: np.ndarray
    persona: str | None = None


# ---------------------------------------------------------------------------
# descriptions


def _literal_text(leaf, predicates):
    p = predicates[leaf.index]
    if p.comparator is None:
        return f"not {p.feature}" if leaf.negated else p.feature
    value = format_value(p.value)
    if p.comparator == GT:
        return f"{p.feature} {'at most' if leaf.negated else 'greater than'} {value}"
    if p.comparator == LE:
        return f"{p.feature} {'greater than' if leaf.negated else 'at most'} {value}"
    text = f"{p.feature} equals {value}"
    return f"not {text}" if leaf.negated else text


def _node_text(node, predicates, nested=False):
    if isinstance(node, Literal):
        return _literal_text(node, predicates)
    phrase = _OP_PHRASES[node.op].format(k=node.k)
    if node.negated:
        phrase = "not " + phrase
    text = phrase + ": " + "; ".join(_node_text(c, predicates, True) for c in node.children)
    return f"({text})" if nested else text


def render_rule(rule):
    return _node_text(rule.root, rule.predicates)


def describe_rule(rule, provider=None, temperature=0.7):
    """Natural-language rendering; the fixed phrase table is used without a provider."""
    if provider is None:
        return RuleDescription(rule, render_rule(rule))
    text = complete(provider, prompts.build_rule_description_prompt(rule), temperature, prompts.RULE_DESCRIPTION).strip()
    missing = [f for f in _features(rule) if f not in text]
    if missing:
        text += f" (features: {', '.join(missing)})"
    return RuleDescription(rule, text)


def _features(rule):
    seen = []
    for leaf in iter_literals(rule.root):
        name = rule.predicates[leaf.index].feature
        if name not in seen:
            seen.append(name)
    return seen


# ---------------------------------------------------------------------------
# embeddings and clustering


def literal_support(rule):
    """The set of ``(predicate, polarity)`` pairs a rule mentions."""
    return {(str(rule.predicates[leaf.index]), not leaf.negated) for leaf in iter_literals(rule.root)}


def embed_rules(descriptions, provider=None):
    descriptions = list(descriptions)
    if not descriptions:
        raise ValueError("nothing to embed")
    if provider is not None:
        return embed(provider, [d.text for d in descriptions])
    supports = [literal_support(d.rule) for d in descriptions]
    vocab = sorted(set().union(*supports), key=lambda t: (t[0], t[1]))
    index = {term: i for i, term in enumerate(vocab)}
    vectors = np.zeros((len(descriptions), len(vocab)))
    for row, support in enumerate(supports):
        for term in support:
            vectors[row, index[term]] = 1.0
    return vectors / np.linalg.norm(vectors, axis=1, keepdims=True)


def _normalize(v):
    norm = np.linalg.norm(v)
    return v / norm if norm > 0 else v


def _lex_order(vectors, candidates):
    return sorted(candidates, key=lambda i: tuple(np.round(vectors[i], 12)))


def cluster(vectors, k, seed=0, max_iter=100):
    """Spherical k-means with greedy farthest-point seeding.

    The first centre is the point least similar to the mean direction and each
    later centre the point farthest (in cosine distance) from those chosen; the
    seed only breaks exact ties, so the result does not depend on input order
    beyond cluster numbering.
    """
    vectors = np.asarray(vectors, dtype=float)
    n = len(vectors)
    if k < 1:
        raise ValueError("k must be >= 1")
    if k > n:
        raise ValueError(f"k={k} exceeds the number of vectors ({n})")
    vectors = np.array([_normalize(v) for v in vectors])
    rng = np.random.default_rng(seed)

    def pick(scores, chosen):
        best = max(s for i, s in enumerate(scores) if i not in chosen)
        tied = _lex_order(vectors, [i for i, s in enumerate(scores) if i not in chosen and np.isclose(s, best, atol=1e-12)])
        return tied[int(rng.integers(len(tied)))]

    mean = _normalize(vectors.mean(axis=0))
    chosen = [pick(list(1 - vectors @ mean), set())]
    while len(chosen) < k:
        dist = 1 - np.max(vectors @ vectors[chosen].T, axis=1)
        chosen.append(pick(list(dist), set(chosen)))
    centroids = vectors[chosen].copy()

    labels = None
    for _ in range(max_iter):
        sims = vectors @ centroids.T
        new = np.argmax(sims, axis=1)
        new = _repair(new, sims, k)
        if labels is not None and np.array_equal(new, labels):
            break
        labels = new
        centroids = np.array([_normalize(vectors[labels == c].sum(axis=0)) for c in range(k)])
    sims = vectors @ centroids.T
    return [
        RuleCluster(c, [int(i) for i in np.flatnonzero(labels == c)], centroids[c])
        for c in range(k)
    ]


def _repair(labels, sims, k):
    labels = labels.copy()
    for c in range(k):
        if np.any(labels == c):
            continue
        sizes = np.bincount(labels, minlength=k)
        donor = int(np.argmax(sizes))
        members = np.flatnonzero(labels == donor)
        far = members[np.argmin(sims[members, donor])]
        labels[far] = c
    return labels


def silhouette_k(vectors, candidates=(2, 3, 4, 5), seed=0):
    """Pick k by mean silhouette under cosine distance."""
    from sklearn.metrics import silhouette_score

    vectors = np.asarray(vectors, dtype=float)
    best_k, best_score = None, -np.inf
    for k in candidates:
        if not 2 <= k < len(vectors):
            continue
        clusters = cluster(vectors, k, seed)
        labels = np.empty(len(vectors), dtype=int)
        for c in clusters:
            labels[c.member_indices] = c.id
        if len(set(labels)) < 2:
            continue
        s = silhouette_score(vectors, labels, metric="cosine")
        if s > best_score:
            best_k, best_score = k, s
    return best_k or 1


# ---------------------------------------------------------------------------
# summaries


def literal_counts(rules):
    counts = Counter()
    for rule in rules:
        for leaf in iter_literals(rule.root):
            counts[serialize(Rule(leaf, rule.predicates))] += 1
    return sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))


def summarize_cluster(cluster, descriptions, provider=None, temperature=0.7):
    """Persona text for a cluster; without a provider, a ranked literal-frequency listing."""
    if not cluster.member_indices:
        raise ValueError("cannot summarise an empty cluster")
    members = [descriptions[i] for i in cluster.member_indices]
    top = literal_counts([d.rule for d in members])
    if provider is None:
        return "Most frequent conditions: " + ", ".join(f"{p} ({n})" for p, n in top)
    prompt = prompts.build_cluster_summary_prompt([d.text for d in members], top[:8])
    return complete(provider, prompt, temperature, prompts.CLUSTER_SUMMARY).strip()


def cluster_report(rules, clusters):
    return {
        "clusters": [
            {
                "id": c.id,
                "rules": [serialize(rules[i]) for i in c.member_indices],
                "persona": c.persona,
                "top_literals": [
                    {"predicate": p, "count": n}
                    for p, n in literal_counts([rules[i] for i in c.member_indices])
                ],
            }
            for c in clusters
        ]
    }


# ---------------------------------------------------------------------------
# local explanations


def rule_verdict(rule, raw_row, spec=None):
    """Evaluate ``rule`` on one raw instance; absent features count as missing."""
    row = dict(raw_row)
    for p in rule.predicates:
        row.setdefault(p.feature, None)
    frame = pd.DataFrame([row])
    data = binarize_predicates(frame, rule.predicates, spec=spec)
    return bool(evaluate(rule.root, data.matrix[0]))


def _as_class(value):
    if isinstance(value, bool):
        return value
    if isinstance(value, (int, float)) and value in (0, 1):
        return bool(value)
    if isinstance(value, str):
        word = value.strip().lower()
        if word in _TRUE_WORDS:
            return True
        if word in _FALSE_WORDS:
            return False
    return None


def _split_explanation(value):
    if isinstance(value, dict):
        glob = next((v for k, v in value.items() if "global" in k.lower()), "")
        local = next((v for k, v in value.items() if "local" in k.lower()), "")
        if not glob and not local:
            glob = local = str(value)
        return str(glob), str(local)
    text = "" if value is None else str(value)
    return text, text


def _normalize_applied(entries, rules):
    known = {serialize(r) for r in rules}
    out = []
    for entry in entries if isinstance(entries, list) else [entries]:
        try:
            text = serialize(parse(str(entry)))
        except Exception:
            continue
        if text in known and text not in out:
            out.append(text)
    return out


def explain_instance(rules, raw_row, spec=None, provider=None, temperature=0.7):
    """Explain one prediction, overriding the model's stated class with the rule verdict."""
    if not rules:
        raise ValueError("explain_instance needs at least one rule")
    top = rules[0]
    verdict = rule_verdict(top, raw_row, spec)
    prompt = prompts.build_explanation_prompt(rules, raw_row)
    parsed = extract_json(complete(provider, prompt, temperature, prompts.EXPLANATION))
    if "classification" not in parsed:
        raise FormatError("explanation response lacks 'classification'", raw=parsed)
    stated = _as_class(parsed["classification"])
    glob, local = _split_explanation(parsed.get("explanation"))
    applied = _normalize_applied(parsed.get("applied_rules", []), rules) or [serialize(top)]
    grounded = stated is not None and stated == verdict
    if not grounded:
        local = (local + "\n\n" if local else "") + FIDELITY_NOTICE
    return RuleExplanation(verdict, applied, glob, local, grounded)
