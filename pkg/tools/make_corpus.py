"""Generate the bundled drug-like corpus.

Molecules are assembled from a library of ring, linker, and terminal
fragments with a seeded generator, so the file is reproducible byte for
byte.  Every emitted line is validated against the package parser and the
write/parse roundtrip before it is accepted.

Usage: python tools/make_corpus.py [count] [out_path]
"""

from __future__ import annotations

import re
import sys

import numpy as np

sys.path.insert(0, "src")

from motifdiff.molgraph import graphs_equal  # noqa: E402
from motifdiff.smiles import parse_smiles, write_smiles  # noqa: E402

SEED = 20260809

# Ring templates: <k> marks a ring-closure bond, ({i}) an optional
# substitution slot.  `sub` marks templates whose first character is a
# sensible attachment atom when used as a substituent.
RINGS = [
    # (template, weight, usable as substituent)
    ("c<0>ccc({0})cc<0>", 7.0, True),
    ("c<0>cc({0})cc({1})c<0>", 6.0, True),
    ("c<0>c({0})cc({1})cc<0>", 4.0, True),
    ("c<0>cc({0})c({1})cc<0>({2})", 2.5, True),
    ("c<0>ccnc({0})c<0>", 3.0, True),
    ("c<0>cc({0})nc({1})c<0>", 2.5, True),
    ("c<0>ncnc({0})c<0>({1})", 2.0, True),
    ("c<0>cnc({0})cn<0>", 1.5, True),
    ("c<0>ccc({0})s<0>", 2.0, True),
    ("c<0>ccc({0})o<0>", 1.5, True),
    ("c<0>cc({0})c[nH]<0>", 1.5, True),
    ("c<0>ncc({0})[nH]<0>", 1.5, True),
    ("c<0>ncc({0})s<0>", 1.5, True),
    ("c<0>ncc({0})o<0>", 1.0, True),
    ("c<0>cc({0})[nH]n<0>", 1.0, True),
    ("C<0>CCC({0})CC<0>", 2.5, True),
    ("C<0>CC({0})CC<0>", 1.2, True),
    ("C<0>C({0})C<0>", 0.8, True),
    ("N<0>CCC({0})CC<0>", 2.5, True),
    ("N<0>CCN({0})CC<0>", 3.0, True),
    ("N<0>CCOCC<0>", 2.0, True),
    ("C<0>CCC({0})O<0>", 1.2, True),
    ("C<0>CCC({0})OC<0>", 0.8, True),
    ("c<0>c({0})ncc({1})n<0>", 1.0, True),
    ("c<0>c({0})sc({1})n<0>", 0.8, True),
    ("c<0>cc({0})oc<0>({1})", 0.8, True),
    ("C<0>CN({0})CC({1})C<0>", 1.0, True),
    ("C<0>CC({0})N({1})CC<0>", 1.0, True),
    ("N<0>CCC({0})C({1})C<0>", 0.8, True),
    ("C<0>COC({0})CN<0>", 0.8, True),
    ("C<0>CC({0})SCC<0>", 0.6, True),
    ("C<0>CCCC({0})CC<0>", 0.6, True),
    ("C<0>CC({0})C<0>", 0.6, True),
    # fused systems
    ("c<0>ccc<1>cc({0})ccc<1>c<0>", 1.5, True),
    ("c<0>ccc<1>c(c<0>)cc({0})[nH]<1>", 1.0, True),
    ("c<0>ccc<1>c(c<0>)cc({0})o<1>", 0.7, True),
    ("c<0>ccc<1>c(c<0>)cc({0})s<1>", 0.7, True),
    ("c<0>ccc<1>c(c<0>)OCO<1>", 0.7, True),
    ("c<0>ccc<1>ncc({0})cc<1>c<0>", 0.7, True),
    ("c<0>ccc<1>c(c<0>)CCC({0})C<1>", 0.5, True),
    ("c<0>ccc<1>c(c<0>)nc({0})[nH]<1>", 0.6, True),
    ("c<0>ccc<1>c(c<0>)ncc({0})n<1>", 0.5, True),
    ("C<0>CCC<1>(CC<0>)CCC({0})C<1>", 0.4, True),
    ("c<0>ccc<1>c(c<0>)C({0})CCO<1>", 0.4, True),
]

TERMINALS = [
    ("C", 10.0),
    ("CC", 4.0),
    ("CCC", 1.5),
    ("CCCC", 0.8),
    ("C(C)C", 2.0),
    ("C(C)(C)C", 1.5),
    ("C(C)CC", 0.8),
    ("O", 4.0),
    ("OC", 5.0),
    ("OCC", 1.5),
    ("OC(C)C", 0.8),
    ("N", 3.0),
    ("NC", 1.5),
    ("NCC", 0.8),
    ("N(C)C", 2.0),
    ("N(C)CC", 0.6),
    ("F", 5.0),
    ("Cl", 4.0),
    ("Br", 1.5),
    ("I", 0.4),
    ("C#N", 2.0),
    ("C#CC", 0.5),
    ("C(F)(F)F", 2.5),
    ("OC(F)(F)F", 0.7),
    ("C(=O)O", 2.0),
    ("C(=O)OC", 1.5),
    ("C(=O)OCC", 0.6),
    ("C(=O)N", 2.0),
    ("C(=O)NC", 0.8),
    ("C(=O)C", 1.0),
    ("C(=O)CC", 0.5),
    ("[N+](=O)[O-]", 1.0),
    ("S(=O)(=O)C", 1.0),
    ("S(=O)(=O)N", 0.7),
    ("SC", 0.7),
    ("SCC", 0.4),
    ("C=C", 0.7),
    ("C=CC", 0.4),
    ("CO", 1.2),
    ("CCO", 0.8),
    ("CN", 0.8),
    ("CF", 0.5),
    ("CC(F)(F)F", 0.5),
    ("CC#N", 0.6),
    ("CC(=O)O", 0.6),
    ("CC(C)C", 0.7),
    ("O*", 0.25),
    ("*", 0.25),
]

LINKERS = [
    ("C{0}", 6.0),
    ("CC{0}", 4.0),
    ("CCC{0}", 1.5),
    ("CCCC{0}", 0.6),
    ("C(C){0}", 1.0),
    ("O{0}", 4.0),
    ("OC{0}", 2.5),
    ("OCC{0}", 1.5),
    ("OCCC{0}", 0.6),
    ("N{0}", 2.5),
    ("NC{0}", 1.5),
    ("NCC{0}", 0.8),
    ("N(C){0}", 1.5),
    ("C(=O){0}", 1.5),
    ("C(=O)N{0}", 4.0),
    ("C(=O)NC{0}", 1.5),
    ("C(=O)NCC{0}", 0.7),
    ("NC(=O){0}", 3.0),
    ("NC(=O)N{0}", 0.8),
    ("C(=O)O{0}", 1.5),
    ("OC(=O){0}", 1.0),
    ("S{0}", 1.0),
    ("SC{0}", 0.6),
    ("S(=O)(=O){0}", 1.5),
    ("S(=O)(=O)N{0}", 1.5),
    ("NS(=O)(=O){0}", 0.8),
    ("C=C{0}", 0.8),
    ("C#C{0}", 0.5),
    ("NC(=O)C{0}", 1.0),
    ("CNC(=O){0}", 1.0),
    ("COC{0}", 0.8),
    ("CN(C){0}", 0.6),
    ("CCN{0}", 0.6),
    ("CCO{0}", 0.6),
]

_SLOT = re.compile(r"\(\{(\d)\}\)")
_CLOSURE = re.compile(r"<(\d)>")


def _weights(entries):
    w = np.array([weight for _, weight, *_ in entries], dtype=float)
    return w / w.sum()


RING_P = _weights(RINGS)
TERMINAL_P = _weights(TERMINALS)
LINKER_P = _weights(LINKERS)
SUB_RINGS = [(t, w) for t, w, sub_ok in RINGS if sub_ok]
SUB_RING_P = _weights([(t, w) for t, w in SUB_RINGS])


class Builder:
    def __init__(self, rng: np.random.Generator):
        self.rng = rng
        self.next_closure = 1

    def closure_digit(self) -> str:
        num = self.next_closure
        self.next_closure += 1
        if num > 99:
            raise ValueError("ring closure numbers exhausted")
        return str(num) if num < 10 else f"%{num:02d}"

    def render_ring(self, template: str, fill_probability: float, depth: int) -> str:
        digits: dict[str, str] = {}

        def closure(match):
            key = match.group(1)
            if key not in digits:
                digits[key] = self.closure_digit()
            return digits[key]

        text = _CLOSURE.sub(closure, template)

        def slot(match):
            if self.rng.random() < fill_probability:
                return "(" + self.substituent(depth + 1) + ")"
            return ""

        return _SLOT.sub(slot, text)

    def substituent(self, depth: int) -> str:
        roll = self.rng.random()
        if depth >= 4 or roll < 0.22:
            idx = self.rng.choice(len(TERMINALS), p=TERMINAL_P)
            return TERMINALS[idx][0]
        if roll < 0.55:
            idx = self.rng.choice(len(LINKERS), p=LINKER_P)
            return LINKERS[idx][0].replace("{0}", self.substituent(depth + 1))
        idx = self.rng.choice(len(SUB_RINGS), p=SUB_RING_P)
        return self.render_ring(SUB_RINGS[idx][0], fill_probability=0.78, depth=depth)

    def molecule(self) -> str:
        idx = self.rng.choice(len(RINGS), p=RING_P)
        return self.render_ring(RINGS[idx][0], fill_probability=0.97, depth=0)


def generate(count: int, seed: int = SEED) -> list[str]:
    rng = np.random.default_rng(seed)
    seen: set[str] = set()
    lines: list[str] = []
    attempts = 0
    while len(lines) < count:
        attempts += 1
        if attempts > count * 60:
            raise RuntimeError("generator stalled; loosen the size window")
        builder = Builder(rng)
        try:
            text = builder.molecule()
            graph = parse_smiles(text)
        except ValueError:
            continue
        if not 18 <= graph.n_atoms <= 70:
            continue
        emitted = write_smiles(graph)
        if not graphs_equal(parse_smiles(emitted), graph):
            continue
        if text in seen:
            continue
        seen.add(text)
        lines.append(text)
    return lines


def main() -> None:
    count = int(sys.argv[1]) if len(sys.argv) > 1 else 10000
    out = sys.argv[2] if len(sys.argv) > 2 else "data/drug_like_10k.smi"
    lines = generate(count)
    sizes = sorted(parse_smiles(s).n_atoms for s in lines)
    with open(out, "w", encoding="utf-8") as handle:
        handle.write("\n".join(lines) + "\n")
    print(f"wrote {len(lines)} molecules to {out}")
    print(f"atoms: min {sizes[0]}, median {sizes[len(sizes) // 2]}, max {sizes[-1]}")


if __name__ == "__main__":
    main()
