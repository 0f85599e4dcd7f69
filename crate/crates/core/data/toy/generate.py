#!/usr/bin/env python3
"""Generate the toy translation corpus.

Source is an SVO language with English-like inflection; target is SOV with
agglutinative suffixes (plural, accusative, tense). Target stems are cognates
of source stems under a fixed syllable mapping. Every target noun also has an
arbitrary class that adjectives and the verb agree with; the source does not
mark it, so it can only be learned from target text. Stem choice is Zipfian,
so the 2K-pair parallel set misses many nouns that the monolingual text has.

    python3 generate.py [outdir]
"""
import random
import sys
from pathlib import Path

SEED = 20171
CONS = "bcdfghklmnprstvz"
VOWELS = "aeiou"
NOUNS = 1000
CLASSES = ["ka", "mo", "ne"]
VERBS = 150
ADJS = 100


def pseudo_word(rng, syllables):
    return "".join(rng.choice(CONS) + rng.choice(VOWELS) for _ in range(syllables))


def lexicon(rng, n, syllables, taken):
    out = []
    while len(out) < n:
        w = pseudo_word(rng, rng.choice(syllables))
        if w not in taken:
            taken.add(w)
            out.append(w)
    return out


def cognate_map(rng):
    cons = list(CONS)
    vowels = list(VOWELS)
    rng.shuffle(cons)
    rng.shuffle(vowels)
    cm = dict(zip(CONS, cons))
    vm = dict(zip(VOWELS, vowels))
    return lambda w: "".join(cm[w[i]] + vm[w[i + 1]] for i in range(0, len(w), 2))


def zipf_weights(n):
    return [1.0 / (k + 1) ** 0.7 for k in range(n)]


class Grammar:
    def __init__(self, rng):
        taken = set()
        cognate = cognate_map(rng)
        self.src_nouns = lexicon(rng, NOUNS, [2, 3], taken)
        self.src_verbs = lexicon(rng, VERBS, [2], taken)
        self.src_adjs = lexicon(rng, ADJS, [2], taken)
        self.tgt_nouns = [cognate(w) for w in self.src_nouns]
        self.tgt_verbs = [cognate(w) for w in self.src_verbs]
        self.tgt_adjs = [cognate(w) for w in self.src_adjs]
        self.src_times = ["today", "yesterday", "often"]
        self.tgt_times = ["bugun", "dun", "sik"]
        self.noun_class = [rng.choice(CLASSES) for _ in range(NOUNS)]
        self.nw = zipf_weights(NOUNS)
        self.vw = zipf_weights(VERBS)

    def noun_phrase(self, rng, role):
        n = rng.choices(range(NOUNS), self.nw)[0]
        plural = rng.random() < 0.3
        adj = rng.randrange(ADJS) if rng.random() < 0.35 else None
        src = ["the"]
        tgt = []
        if adj is not None:
            src.append(self.src_adjs[adj])
            tgt.append(self.tgt_adjs[adj] + self.noun_class[n])
        src.append(self.src_nouns[n] + ("s" if plural else ""))
        noun = self.tgt_nouns[n] + ("ler" if plural else "")
        if role == "obj":
            noun += "i"
        tgt.append(noun)
        return src, tgt, self.noun_class[n]

    def sentence(self, rng):
        src, tgt = [], []
        if rng.random() < 0.25:
            t = rng.randrange(3)
            src.append(self.src_times[t])
            tgt.append(self.tgt_times[t])
        s_src, s_tgt, s_class = self.noun_phrase(rng, "subj")
        o_src, o_tgt, _ = self.noun_phrase(rng, "obj")
        v = rng.choices(range(VERBS), self.vw)[0]
        past = rng.random() < 0.5
        verb_src = self.src_verbs[v] + ("ed" if past else "s")
        verb_tgt = self.tgt_verbs[v] + ("di" if past else "yor") + s_class
        src += s_src + [verb_src] + o_src
        tgt += s_tgt + o_tgt + [verb_tgt]
        return " ".join(src), " ".join(tgt)


def main():
    out = Path(sys.argv[1]) if len(sys.argv) > 1 else Path(__file__).parent
    rng = random.Random(SEED)
    g = Grammar(rng)
    sizes = {"train": 2000, "valid": 100, "test": 200}
    for name, n in sizes.items():
        pairs = [g.sentence(rng) for _ in range(n)]
        (out / f"{name}.src").write_text("".join(s + "\n" for s, _ in pairs))
        (out / f"{name}.tgt").write_text("".join(t + "\n" for _, t in pairs))
    mono = [g.sentence(rng)[1] for _ in range(8000)]
    (out / "mono.tgt").write_text("".join(t + "\n" for t in mono))


if __name__ == "__main__":
    main()
