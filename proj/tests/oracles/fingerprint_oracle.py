#!/usr/bin/env python3
"""Naive fingerprint counter for the literal-phrase fixture lexicon.

No regular expressions: every phrase is located by plain substring search with
a hand-written word-boundary test. Writes one tab-separated row per episode.

usage: fingerprint_oracle.py CORPUS LEXICON OUT
"""
import json
import math
import string
import sys

NAMES = [
    "words_per_turn", "short_utterance_rate", "politeness_rate", "formality_rate", "acknowledgment_rate",
    "verbosity_cv", "repetition_rate", "identity_confusion_rate", "front_loading_ratio", "identifiers_per_turn",
    "opening_length", "uncertainty_rate", "certainty_rate", "pushback_rate", "clarification_question_rate",
    "info_seeking_rate", "emotional_expression_rate", "accusatory_rate", "strategy_pivot_rate",
]
PRESENCE = {
    "politeness_rate": "politeness", "formality_rate": "formality", "acknowledgment_rate": "acknowledgment",
    "identity_confusion_rate": "identity_confusion", "uncertainty_rate": "uncertainty",
    "certainty_rate": "certainty", "pushback_rate": "pushback", "clarification_question_rate": "clarification",
    "info_seeking_rate": "info_seeking", "emotional_expression_rate": "emotional",
    "accusatory_rate": "accusatory", "strategy_pivot_rate": "pivot",
}
SHORT = 3
OVERLAP = 0.6


def is_word(c):
    return c.isascii() and (c.isalnum() or c == "_")


def match_at(text, pos, phrase):
    if not text.startswith(phrase, pos):
        return False
    before = text[pos - 1] if pos > 0 else " "
    end = pos + len(phrase)
    after = text[end] if end < len(text) else " "
    return not is_word(before) and not is_word(after)


def contains(text, phrases):
    low = text.lower()
    return any(match_at(low, p, ph) for ph in phrases for p in range(len(low)))


def count(text, phrases):
    # leftmost match, first listed phrase wins, scanning resumes after it
    low = text.lower()
    n, pos = 0, 0
    while pos < len(low):
        hit = next((ph for ph in phrases if match_at(low, pos, ph)), None)
        if hit:
            n += 1
            pos += len(hit)
        else:
            pos += 1
    return n


def tokens(text):
    out = []
    for raw in text.split():
        stripped = raw.strip(string.punctuation)
        out.append((stripped if stripped else raw).lower())
    return set(out)


def jaccard(a, b):
    if not a and not b:
        return 0.0
    return len(a & b) / len(a | b)


def fingerprint(turns, lex):
    n = len(turns)
    lengths = [len(t.split()) for t in turns]
    mean = sum(lengths) / n
    f = {}
    f["words_per_turn"] = mean
    f["short_utterance_rate"] = sum(1 for x in lengths if x <= SHORT) / n
    var = sum((x - mean) ** 2 for x in lengths) / n
    f["verbosity_cv"] = 0.0 if n < 2 or mean == 0 else math.sqrt(var) / mean
    sets = [tokens(t) for t in turns]
    rep = 0
    for k in range(1, n):
        if any(jaccard(sets[k], sets[j]) >= OVERLAP for j in range(k)):
            rep += 1
    f["repetition_rate"] = rep / n
    for name, fam in PRESENCE.items():
        f[name] = sum(1 for t in turns if contains(t, lex[fam])) / n
    ids = [count(t, lex["identifiers"]) for t in turns]
    f["front_loading_ratio"] = 1.0 if sum(ids) == 0 else ids[0] / sum(ids)
    f["identifiers_per_turn"] = sum(ids) / n
    f["opening_length"] = float(lengths[0])
    return [f[name] for name in NAMES]


def main():
    corpus, lexicon, out = sys.argv[1:4]
    fams = json.load(open(lexicon))["families"]
    lex = {k: [p[2:-2].lower() for p in v] for k, v in fams.items()}  # drop the \b...\b wrapper
    rows = ["episode_id\t" + "\t".join(NAMES)]
    for line in open(corpus):
        if not line.strip():
            continue
        ep = json.loads(line)
        turns = [t["text"] for t in ep["turns"] if t["role"] == "user"]
        rows.append(ep["episode_id"] + "\t" + "\t".join(repr(float(v)) for v in fingerprint(turns, lex)))
    open(out, "w").write("\n".join(rows) + "\n")


if __name__ == "__main__":
    main()
