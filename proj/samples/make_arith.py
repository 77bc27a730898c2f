"""Writes arith_policy.json and arith_problems.jsonl.

The policy is a small n-gram table (suffix match) over single-digit sums.
After "a+b=<think>" it guesses a digit, rambles in "\\n\\n"-separated steps,
restates the last digit after "so " and closes with \\boxed{d}.
"""

import json
import random
from fractions import Fraction
from pathlib import Path

HERE = Path(__file__).resolve().parent

DIGITS = [str(d) for d in range(10)]
VOCAB = DIGITS + ["+", "=", "so ", "hmm ", "\n\n", "<think>", "</think>", "<eos>", "\\boxed{", "}"]
ID = {t: i for i, t in enumerate(VOCAB)}


def dist(weights):
    """Probability vector from {token: weight}; exact rational normalization."""
    total = sum(Fraction(w) for w in weights.values())
    p = [0.0] * len(VOCAB)
    for tok, w in weights.items():
        p[ID[tok]] = float(Fraction(w) / total)
    # put the float rounding residue on the largest entry
    top = max(weights, key=lambda t: weights[t])
    p[ID[top]] += 1.0 - sum(p)
    return p


def main():
    rng = random.Random(7)
    problems = []
    seen = set()
    while len(problems) < 20:
        a, b = rng.randint(0, 9), rng.randint(0, 9)
        if a + b > 9 or (a, b) in seen:
            continue
        seen.add((a, b))
        problems.append((a, b))

    table = []

    def row(prefix, weights):
        table.append({"prefix": [ID[t] for t in prefix], "probs": dist(weights)})

    # first guess depends on the problem; the right digit is not always on top
    for a, b in problems:
        c = a + b
        wrong = [d for d in range(10) if d != c]
        w1, w2 = rng.sample(wrong, 2)
        right = rng.choice([40, 30, 20])
        row([str(a), "+", str(b), "=", "<think>"],
            {str(c): right, str(w1): 25, str(w2): 10, "hmm ": 100 - right - 35})

    for d in DIGITS:
        row([d], {"\n\n": 55, "so ": 25, d: 10, "</think>": 10})
        row(["so ", d], {"</think>": 70, "\n\n": 30})
        row([d, "</think>"], {"\\boxed{": 1})
        row([d, "</think>", "\\boxed{"], {d: 1})
        row(["\\boxed{", d], {"}": 1})
        row([d, "\n\n"], {"so ": 45, "hmm ": 25, d: 20, "</think>": 10})
        row([d, "so "], {d: 1})
        row([d, "\n\n", "so "], {d: 1})
    row(["hmm "], {"\n\n": 50, **{d: 5 for d in DIGITS}})
    row(["\n\n"], {"hmm ": 40, "so ": 20, "</think>": 10, **{d: 3 for d in DIGITS}})
    row(["so "], {**{d: 10 for d in DIGITS}})
    row(["</think>"], {"\\boxed{": 1})
    row(["\\boxed{"], {"0": 1})
    row(["}"], {"<eos>": 1})

    spec = {
        "vocab": VOCAB,
        "think_open": ID["<think>"],
        "think_close": ID["</think>"],
        "step_delimiters": [ID["\n\n"]],
        "eos": ID["<eos>"],
        "match": "suffix",
        "default": dist({"<eos>": 1}),
        "table": table,
    }
    (HERE / "arith_policy.json").write_text(json.dumps(spec, indent=1) + "\n")

    with open(HERE / "arith_problems.jsonl", "w") as f:
        for i, (a, b) in enumerate(problems):
            rec = {"id": f"arith-{i:02d}", "prompt": f"{a}+{b}=", "answer": str(a + b)}
            if i % 5 == 4:
                rec["verifier"] = "numeric:1e-6"
            f.write(json.dumps(rec) + "\n")


if __name__ == "__main__":
    main()
