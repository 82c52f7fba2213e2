#!/usr/bin/env python3
"""Generate the synthetic PTB-format fixture corpus.

Sentences come from a small probabilistic grammar with number agreement
between determiners, nouns and verbs, a Zipf-like word distribution, the
literal token <unk> for rare words and N for numbers. Output is
deterministic for a given seed.

usage: gen_corpus.py OUT_DIR [--seed S] [--train-tokens N]
"""

import argparse
import os
import random

NOUNS = """market company stock share price trader bank index bond fund year month week
investor analyst report rate dollar yen economy government official plan deal
board director chairman sale profit loss quarter firm unit group industry bill
court judge law case order contract program system computer product car plant
worker union strike city state country region house street office school
teacher student child parent family doctor patient hospital drug study test
result issue problem question answer idea story book paper letter news network
station season game team player coach fan ticket match field river road bridge
train plane ship port island coast farm crop village tower garden window door""".split()
VERBS = """buy sell see hold build close open raise cut offer pay need want find
take give make expect report approve reject support oppose follow lead watch
help start end join leave move own visit""".split()
ADJS = """big small new old high low strong weak major early late local foreign
federal private public large recent final key main good bad""".split()
ADVS = """quickly slowly sharply again still also recently only nearly already""".split()
PREPS = """in on at for with from near after before under""".split()
CONJ = """and but while because""".split()
SING_DET = "the a this that each".split()
PLUR_DET = "the these those some many".split()


def zipf_choice(rng, words, s=1.1):
    weights = [1.0 / (i + 1) ** s for i in range(len(words))]
    return rng.choices(words, weights)[0]


def plural(n):
    if n.endswith(("s", "x", "ch")):
        return n + "es"
    if n.endswith("y") and n[-2] not in "aeiou":
        return n[:-1] + "ies"
    return n + "s"


def third(v):
    if v.endswith(("s", "sh", "ch", "x")):
        return v + "es"
    return v + "s"


class Grammar:
    def __init__(self, rng):
        self.rng = rng
        self.nouns = NOUNS[:]
        rng.shuffle(self.nouns)
        self.verbs = VERBS[:]
        rng.shuffle(self.verbs)

    def noun_phrase(self, depth=0):
        rng = self.rng
        pl = rng.random() < 0.4
        det = zipf_choice(rng, PLUR_DET if pl else SING_DET, 0.8)
        words = [det]
        if rng.random() < 0.25:
            words.append("N")
        for _ in range(rng.choice([0, 0, 1, 1, 2])):
            words.append(zipf_choice(rng, ADJS))
        if rng.random() < 0.04:
            words.append("<unk>")
        else:
            n = zipf_choice(rng, self.nouns)
            words.append(plural(n) if pl else n)
        if depth < 1 and rng.random() < 0.3:
            words.append(zipf_choice(rng, PREPS))
            words.extend(self.noun_phrase(depth + 1)[0])
        return words, pl

    def verb_phrase(self, pl):
        rng = self.rng
        v = zipf_choice(rng, self.verbs)
        r = rng.random()
        if r < 0.2:
            words = ["will", v]
        elif r < 0.35:
            words = ["did", "not", v]
        else:
            words = [v if pl else third(v)]
        if rng.random() < 0.8:
            words.extend(self.noun_phrase()[0])
        if rng.random() < 0.3:
            words.append(zipf_choice(rng, ADVS))
        return words

    def clause(self):
        np, pl = self.noun_phrase()
        return np + self.verb_phrase(pl)

    def sentence(self):
        words = self.clause()
        if self.rng.random() < 0.25:
            words.append(zipf_choice(self.rng, CONJ))
            words.extend(self.clause())
        return words


def write_split(path, grammar, tokens):
    count = 0
    with open(path, "w") as f:
        while count < tokens:
            s = grammar.sentence()
            f.write(" " + " ".join(s) + " \n")
            count += len(s) + 1
    return count


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("out_dir")
    ap.add_argument("--seed", type=int, default=20240601)
    ap.add_argument("--train-tokens", type=int, default=50000)
    args = ap.parse_args()
    rng = random.Random(args.seed)
    g = Grammar(rng)
    os.makedirs(args.out_dir, exist_ok=True)
    n = args.train_tokens
    for name, size in [("train", n), ("valid", n // 10), ("test", n // 10)]:
        got = write_split(os.path.join(args.out_dir, f"fixture.{name}.txt"), g, size)
        print(f"{name}: {got} tokens")


if __name__ == "__main__":
    main()
