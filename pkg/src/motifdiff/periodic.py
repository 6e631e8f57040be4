"""Element symbols and valence data for the supported atom alphabet."""

from __future__ import annotations

# All 118 IUPAC element symbols in atomic-number order.
ELEMENTS: tuple[str, ...] = (
    "H", "He", "Li", "Be", "B", "C", "N", "O", "F", "Ne",
    "Na", "Mg", "Al", "Si", "P", "S", "Cl", "Ar", "K", "Ca",
    "Sc", "Ti", "V", "Cr", "Mn", "Fe", "Co", "Ni", "Cu", "Zn",
    "Ga", "Ge", "As", "Se", "Br", "Kr", "Rb", "Sr", "Y", "Zr",
    "Nb", "Mo", "Tc", "Ru", "Rh", "Pd", "Ag", "Cd", "In", "Sn",
    "Sb", "Te", "I", "Xe", "Cs", "Ba", "La", "Ce", "Pr", "Nd",
    "Pm", "Sm", "Eu", "Gd", "Tb", "Dy", "Ho", "Er", "Tm", "Yb",
    "Lu", "Hf", "Ta", "W", "Re", "Os", "Ir", "Pt", "Au", "Hg",
    "Tl", "Pb", "Bi", "Po", "At", "Rn", "Fr", "Ra", "Ac", "Th",
    "Pa", "U", "Np", "Pu", "Am", "Cm", "Bk", "Cf", "Es", "Fm",
    "Md", "No", "Lr", "Rf", "Db", "Sg", "Bh", "Hs", "Mt", "Ds",
    "Rg", "Cn", "Nh", "Fl", "Mc", "Lv", "Ts", "Og",
)

# The polymerization attachment marker, the 119th symbol of the alphabet.
WILDCARD = "*"

ALPHABET: tuple[str, ...] = ELEMENTS + (WILDCARD,)

SYMBOL_INDEX: dict[str, int] = {s: i for i, s in enumerate(ALPHABET)}

# Organic-subset atoms may be written bare in SMILES; their hydrogen count is
# implied by the default valence.
ORGANIC_SUBSET = frozenset({"B", "C", "N", "O", "P", "S", "F", "Cl", "Br", "I"})

# Lowercase aromatic forms accepted outside brackets.
AROMATIC_ORGANIC = {"b": "B", "c": "C", "n": "N", "o": "O", "p": "P", "s": "S"}

# Lowercase forms accepted inside brackets.
AROMATIC_BRACKET = dict(AROMATIC_ORGANIC, se="Se", **{"as": "As"})

DEFAULT_VALENCE: dict[str, int] = {
    "B": 3, "C": 4, "N": 3, "O": 2, "P": 3, "S": 2,
    "F": 1, "Cl": 1, "Br": 1, "I": 1,
}


def is_element(symbol: str) -> bool:
    """Whether ``symbol`` belongs to the 119-symbol alphabet."""
    return symbol in SYMBOL_INDEX


def implied_hydrogens(element: str, charge: int, bond_order_sum: int) -> int:
    """Hydrogens implied for a bare organic-subset atom, never negative.

    Sulfur and phosphorus use the smallest standard valence that covers the
    existing bonds (2/4/6 and 3/5 respectively).
    """
    if element == "S":
        for valence in (2, 4, 6):
            if bond_order_sum <= valence:
                return valence - bond_order_sum
        return 0
    if element == "P":
        for valence in (3, 5):
            if bond_order_sum <= valence:
                return valence - bond_order_sum
        return 0
    base = DEFAULT_VALENCE.get(element)
    if base is None:
        return 0
    return max(base - bond_order_sum, 0)
