"""Regenerate the bundled toy corpus (deterministic; seeded).

The corpus is synthetic: pseudo-words drawn from a Zipfian frequency
profile, one sentence per line, lengths 5..12, with a sprinkling of
casing, punctuation and HTML noise for the preprocessing path to clean
up.  Run from the repo root:

    python tools/gen_toy_corpus.py
"""

import random
from pathlib import Path

OUT = Path(__file__).resolve().parents[1] / "src" / "adgstego" / "data" / "toy_corpus.txt"

N_TYPES = 900
N_SENTENCES = 8000
SEED = 20240601
ZIPF_S = 0.6

CONSONANTS = "bdfgklmnprstvz"
VOWELS = "aeiou"


def make_words(rng: random.Random, n: int) -> list[str]:
    words: list[str] = []
    seen = set()
    while len(words) < n:
        syllables = rng.randint(2, 4)
        word = "".join(rng.choice(CONSONANTS) + rng.choice(VOWELS) for _ in range(syllables))
        if word not in seen:
            seen.add(word)
            words.append(word)
    return words


def main() -> None:
    rng = random.Random(SEED)
    words = make_words(rng, N_TYPES)
    weights = [1.0 / (rank + 1) ** ZIPF_S for rank in range(N_TYPES)]
    lines = []
    for i in range(N_SENTENCES):
        length = rng.randint(5, 12)
        tokens = rng.choices(words, weights=weights, k=length)
        if i % 97 == 0:
            tokens[0] = tokens[0].capitalize()
        if i % 211 == 0:
            tokens.insert(rng.randrange(len(tokens)), "<br/>")
        terminal = "." if i % 13 else rng.choice(["!", "?"])
        lines.append(" ".join(tokens) + terminal)
    OUT.write_text("\n".join(lines) + "\n", encoding="utf-8")
    print(f"wrote {N_SENTENCES} sentences, {N_TYPES} word types -> {OUT}")


if __name__ == "__main__":
    main()
