"""Stateful sentiment-ranking workflow: two lexicon scoring branches that
converge on a key-partitioned per-state aggregator and a global top-3 sink.

Both mini-lexicons carry integer word scores, so every aggregate is exact
integer arithmetic and oracle comparisons need no float tolerance.  The
bundled corpus is 200 generated articles over 10 states; ``generate_corpus``
reproduces it (and arbitrary variants) deterministically from a seed.
"""

from __future__ import annotations

import json
import random
import re
import time
from importlib import resources

from ..graph import Behavior, Connection, GroupingSpec, PESpec, WorkflowGraph
from . import WorkloadSpec, derive_seed

HAPPY_STATE_INSTANCES = 4
TOP_N = 3

# Per-article scoring cost in heavy mode, as a fraction of sleep_scale.
SCORING_COST_FRACTION = 0.15

_WORD_RE = re.compile(r"[a-z']+")

STATES = (
    "Avalon", "Brookfield", "Cascadia", "Dunmore", "Eastmark",
    "Fairhaven", "Glenrock", "Hartwell", "Ironvale", "Juniper",
)

_POSITIVE = ("good", "great", "happy", "love", "excellent", "win", "hope",
             "joy", "wonderful", "thrive", "peace", "smile", "calm", "bright")
_NEGATIVE = ("bad", "sad", "angry", "terrible", "awful", "lose", "crisis",
             "fear", "gloom", "fail", "storm", "dark", "poor", "weak")
_NEUTRAL = ("the", "city", "report", "today", "people", "market", "weather",
            "council", "river", "season", "plan", "road", "team", "school")


def tokenize(text: str) -> list[str]:
    return _WORD_RE.findall(text.lower())


def load_lexicon(filename: str) -> dict[str, int]:
    """Parse a bundled tab-separated ``word<TAB>score`` lexicon."""
    text = resources.files("streamwork.workflows").joinpath("data", filename).read_text()
    lexicon: dict[str, int] = {}
    for line in text.splitlines():
        if not line.strip() or line.startswith("#"):
            continue
        word, score = line.split("\t")
        lexicon[word] = int(score)
    return lexicon


def generate_corpus(n_articles: int = 200, n_states: int = 10, seed: int = 7) -> list[dict]:
    """Deterministic synthetic articles; later states skew more positive so
    the resulting ranking is non-trivial but stable."""
    if not (1 <= n_states <= len(STATES)):
        raise ValueError(f"n_states must be in [1, {len(STATES)}]")
    articles = []
    for i in range(n_articles):
        rng = random.Random(derive_seed(seed, i))
        state_idx = i % n_states
        positive_bias = 0.15 + 0.05 * state_idx
        words = []
        for _ in range(rng.randint(12, 24)):
            roll = rng.random()
            if roll < positive_bias:
                words.append(rng.choice(_POSITIVE))
            elif roll < positive_bias + 0.15:
                words.append(rng.choice(_NEGATIVE))
            else:
                words.append(rng.choice(_NEUTRAL))
        articles.append({"id": i, "state": STATES[state_idx], "text": " ".join(words)})
    return articles


def load_corpus() -> list[dict]:
    text = resources.files("streamwork.workflows").joinpath("data", "articles.jsonl").read_text()
    return [json.loads(line) for line in text.splitlines() if line.strip()]


def sentiment_inputs(spec: WorkloadSpec) -> dict[str, list[dict]]:
    corpus = load_corpus()
    records = []
    for rep in range(spec.scale):
        for article in corpus:
            records.append({**article, "id": article["id"] + rep * len(corpus)})
    return {"read_articles": records}


def build_sentiment(spec: WorkloadSpec) -> WorkflowGraph:
    afinn = load_lexicon("afinn_mini.txt")
    swn3 = load_lexicon("swn3_mini.txt")
    cost = SCORING_COST_FRACTION * spec.sleep_scale if spec.heavy else 0.0

    def read_articles(fields, state):
        return [("out", dict(fields))]

    def sentiment_afinn(fields, state):
        if cost:
            time.sleep(cost)
        score = sum(afinn.get(tok, 0) for tok in tokenize(fields["text"]))
        return [("out", {"id": fields["id"], "state": fields["state"], "score": score})]

    def tokenize_wd(fields, state):
        return [("out", {
            "id": fields["id"], "state": fields["state"], "tokens": tokenize(fields["text"]),
        })]

    def sentiment_swn3(fields, state):
        if cost:
            time.sleep(cost)
        score = sum(swn3.get(tok, 0) for tok in fields["tokens"])
        return [("out", {"id": fields["id"], "state": fields["state"], "score": score})]

    def find_state(fields, state):
        return [("out", {"state": fields["state"], "score": fields["score"]})]

    def happy_state(fields, state):
        totals = state.setdefault("totals", {})
        totals[fields["state"]] = totals.get(fields["state"], 0) + fields["score"]
        return []

    def happy_state_flush(state):
        return [("out", {"state": s, "score": t})
                for s, t in sorted(state.get("totals", {}).items())]

    def top3(fields, state):
        state.setdefault("rows", []).append((fields["state"], fields["score"]))
        return []

    def top3_flush(state):
        ranked = sorted(state.get("rows", []), key=lambda r: (-r[1], r[0]))
        return [(None, {"rank": i + 1, "state": s, "score": score})
                for i, (s, score) in enumerate(ranked[:TOP_N])]

    return WorkflowGraph(
        pes=[
            PESpec("read_articles", "source", Behavior(read_articles), output_ports=("out",)),
            PESpec("sentiment_afinn", "transform", Behavior(sentiment_afinn), ("in",), ("out",)),
            PESpec("tokenize_wd", "transform", Behavior(tokenize_wd), ("in",), ("out",)),
            PESpec("sentiment_swn3", "transform", Behavior(sentiment_swn3), ("in",), ("out",)),
            PESpec("find_state_afinn", "transform", Behavior(find_state), ("in",), ("out",)),
            PESpec("find_state_swn3", "transform", Behavior(find_state), ("in",), ("out",)),
            PESpec("happy_state", "transform", Behavior(happy_state, happy_state_flush),
                   ("in",), ("out",), stateful=True, instance_count=HAPPY_STATE_INSTANCES),
            PESpec("top3", "sink", Behavior(top3, top3_flush), ("in",),
                   stateful=True, instance_count=1),
        ],
        connections=[
            Connection("read_articles", "out", "sentiment_afinn", "in"),
            Connection("read_articles", "out", "tokenize_wd", "in"),
            Connection("tokenize_wd", "out", "sentiment_swn3", "in"),
            Connection("sentiment_afinn", "out", "find_state_afinn", "in"),
            Connection("sentiment_swn3", "out", "find_state_swn3", "in"),
            Connection("find_state_afinn", "out", "happy_state", "in", GroupingSpec.group_by("state")),
            Connection("find_state_swn3", "out", "happy_state", "in", GroupingSpec.group_by("state")),
            Connection("happy_state", "out", "top3", "in", GroupingSpec.globally()),
        ],
    )
