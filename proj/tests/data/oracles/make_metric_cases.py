"""Writes metric_cases.jsonl: expected metric values from an independent
Python implementation (NLTK for BLEU and the Porter stemmer)."""

import json
import math
import re
import string
from collections import Counter
from pathlib import Path

from nltk.stem.porter import PorterStemmer
from nltk.translate.bleu_score import SmoothingFunction, sentence_bleu

STEMMER = PorterStemmer(mode=PorterStemmer.MARTIN_EXTENSIONS)
TOKEN = re.compile(r"[A-Za-z0-9_]+|[^\sA-Za-z0-9_]")


def toks(s):
    return [t.lower() for t in TOKEN.findall(s)]


def bleu(cand, refs, smooth=False):
    c = toks(cand)
    if not c:
        return 0.0
    fn = SmoothingFunction().method2 if smooth else SmoothingFunction().method0
    import warnings
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        v = sentence_bleu([toks(r) for r in refs], c, smoothing_function=fn)
    return 0.0 if v < 1e-300 else float(v)


def lcs(a, b):
    t = [[0] * (len(b) + 1) for _ in range(len(a) + 1)]
    for i in range(len(a)):
        for j in range(len(b)):
            t[i + 1][j + 1] = t[i][j] + 1 if a[i] == b[j] else max(t[i][j + 1], t[i + 1][j])
    return t[-1][-1]


def rouge_l(cand, refs):
    c = toks(cand)
    best = 0.0
    for r in refs:
        rt = toks(r)
        if not c or not rt:
            continue
        l = lcs(c, rt)
        if l:
            p, q = l / len(c), l / len(rt)
            best = max(best, 2 * p * q / (p + q))
    return best


def meteor_one(c, r):
    if not c or not r:
        return 0.0
    align = {}
    used = set()
    for stage in (lambda w: w, STEMMER.stem):
        rk = [stage(w) for w in r]
        for i, w in enumerate(c):
            if i in align:
                continue
            key = stage(w)
            for j, k in enumerate(rk):
                if j not in used and k == key:
                    align[i] = j
                    used.add(j)
                    break
    m = len(align)
    if m == 0:
        return 0.0
    chunks, prev = 0, None
    for i in sorted(align):
        if prev is None or i != prev[0] + 1 or align[i] != prev[1] + 1:
            chunks += 1
        prev = (i, align[i])
    p, q = m / len(c), m / len(r)
    fmean = p * q / (0.9 * p + 0.1 * q)
    return fmean * (1 - 0.5 * (chunks / m) ** 3)


def meteor(cand, refs):
    return max(meteor_one(toks(cand), toks(r)) for r in refs)


def norm(s):
    s = s.lower()
    s = "".join(ch for ch in s if ch not in set(string.punctuation))
    s = re.sub(r"\b(a|an|the)\b", " ", s)
    return s.split()


def f1(cand, refs):
    best = 0.0
    p = norm(cand)
    for r in refs:
        g = norm(r)
        if not p and not g:
            v = 1.0
        elif not p or not g:
            v = 0.0
        else:
            common = sum((Counter(p) & Counter(g)).values())
            v = 0.0 if common == 0 else 2 * common / (len(p) + len(g))
        best = max(best, v)
    return best


CASES = [
    ("the cat sat down", ["the cat sat down"]),
    ("the cat the cat", ["the cat sat"]),
    ("a b c d", ["a c d"]),
    ("apples and pears", ["trains on tracks"]),
    ("Paris", ["Paris"]),
    ("the cat", ["cat"]),
    ("Unanswerable.", ["Unanswerable"]),
    ("Unanswerable", ["Unanswerable"]),
    ("running dogs quickly", ["the dog runs quick"]),
    ("Marta Velez.", ["Marta Velez"]),
    ("She hid the key beneath the third step", ["beneath the third step of the tower stairs", "under the third step"]),
    ("", ["anything at all"]),
    ("forty silver coins", ["forty", "forty silver coins"]),
    ("the quick brown fox jumps over the lazy dog", ["the quick brown dog jumps over the lazy fox"]),
    ("a bright shade of blue", ["blue"]),
    ("He traveled to the northern islands by boat in the spring", ["In spring he went by boat to the northern islands"]),
    ("gene RB7 blocks the fungus", ["a gene called RB7"]),
    ("nine nine nine nine", ["nine locks"]),
    ("connected connecting connection", ["connect connects connection"]),
    ("Winter Gold , a small yellow apple", ["Winter Gold, a small yellow apple", "Winter Gold"]),
]


def main():
    out = Path(__file__).resolve().parent.parent / "metric_cases.jsonl"
    with out.open("w") as f:
        for k, (cand, refs) in enumerate(CASES, 1):
            row = {
                "case": k,
                "candidate": cand,
                "references": refs,
                "bleu4": bleu(cand, refs),
                "bleu4_smoothed": bleu(cand, refs, smooth=True),
                "rouge_l": rouge_l(cand, refs),
                "meteor_lite": meteor(cand, refs),
                "token_f1": f1(cand, refs),
            }
            f.write(json.dumps(row) + "\n")


if __name__ == "__main__":
    main()
