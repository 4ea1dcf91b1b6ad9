"""Grade-1 English Braille table.

A cell is a 6-bit mask. Bit ``2*y + x`` is set when the dot at column ``x``
(0 left, 1 right) and row ``y`` (0 top .. 2 bottom) is raised, so the
standard dot numbers map as 1->bit0, 4->bit1, 2->bit2, 5->bit3, 3->bit4,
6->bit5.
"""

from __future__ import annotations

from dataclasses import dataclass, field

CAPITAL = "^"
NUMBER = "#"
UNKNOWN = "?"

# standard dot number -> (x, y)
DOT_POSITION = {1: (0, 0), 2: (0, 1), 3: (0, 2), 4: (1, 0), 5: (1, 1), 6: (1, 2)}


def bit(x: int, y: int) -> int:
    return 1 << (2 * y + x)


def mask_from_dots(dots: str | list[int]) -> int:
    m = 0
    for d in dots:
        m |= bit(*DOT_POSITION[int(d)])
    return m


def mask_from_positions(positions) -> int:
    m = 0
    for x, y in positions:
        m |= bit(x, y)
    return m


def positions_from_mask(mask: int) -> list[tuple[int, int]]:
    """Raised ``(x, y)`` positions of a mask, row-major."""
    return [(x, y) for y in range(3) for x in range(2) if mask & bit(x, y)]


def unicode_cell(mask: int) -> str:
    """Unicode braille pattern for a mask (Unicode uses dot-number bits)."""
    code = 0
    for num, (x, y) in DOT_POSITION.items():
        if mask & bit(x, y):
            code |= 1 << (num - 1)
    return chr(0x2800 + code)


_LETTERS = {
    "a": "1", "b": "12", "c": "14", "d": "145", "e": "15", "f": "124",
    "g": "1245", "h": "125", "i": "24", "j": "245", "k": "13", "l": "123",
    "m": "134", "n": "1345", "o": "135", "p": "1234", "q": "12345",
    "r": "1235", "s": "234", "t": "2345", "u": "136", "v": "1236",
    "w": "2456", "x": "1346", "y": "13456", "z": "1356",
}
_SIGNS = {
    ",": "2", ";": "23", ":": "25", ".": "256", "?": "236", "!": "235",
    "'": "3", "-": "36", NUMBER: "3456", CAPITAL: "6",
}
_DIGIT_LETTERS = dict(zip("1234567890", "abcdefghij"))
_LETTER_DIGITS = {v: k for k, v in _DIGIT_LETTERS.items()}


class TableError(ValueError):
    pass


@dataclass
class BrailleTable:
    """Injective mapping between cell masks and cell labels."""

    symbols: dict[int, str] = field(default_factory=dict)

    def __post_init__(self):
        labels = list(self.symbols.values())
        if len(set(labels)) != len(labels):
            raise TableError("braille table is not injective")
        self._masks = {v: k for k, v in self.symbols.items()}

    def label(self, mask: int) -> str | None:
        return self.symbols.get(mask)

    def mask(self, label: str) -> int:
        return self._masks[label]

    def cell_label(self, mask: int) -> str:
        """Class label for a mask: the table symbol, else its Unicode pattern."""
        return self.symbols.get(mask) or unicode_cell(mask)

    def mask_of_label(self, label: str) -> int | None:
        if label in self._masks:
            return self._masks[label]
        if len(label) == 1 and 0x2801 <= ord(label) <= 0x283F:
            code = ord(label) - 0x2800
            return mask_from_dots([n for n in range(1, 7) if code & (1 << (n - 1))])
        return None

    def supports(self, ch: str) -> bool:
        return ch in (" ", "\n") or ch.lower() in self._masks or ch in _DIGIT_LETTERS

    def encode(self, text: str) -> list[list[int]]:
        """Encode text into lines of cell masks; 0 is a blank cell.

        Capitals get a capital-sign prefix, each digit run a number sign.
        """
        lines = []
        for line in text.split("\n"):
            cells: list[int] = []
            in_number = False
            for i, ch in enumerate(line):
                if ch == " ":
                    cells.append(0)
                    in_number = False
                elif ch in _DIGIT_LETTERS:
                    if not in_number:
                        cells.append(self._masks[NUMBER])
                        in_number = True
                    cells.append(self._masks[_DIGIT_LETTERS[ch]])
                elif ch.lower() in _LETTERS:
                    if in_number and ch.lower() in _LETTER_DIGITS:
                        raise TableError(f"letter {ch!r} after digits at index {i} would read as a digit")
                    if ch.isupper():
                        cells.append(self._masks[CAPITAL])
                    cells.append(self._masks[ch.lower()])
                elif ch in _SIGNS and ch not in (NUMBER, CAPITAL):
                    cells.append(self._masks[ch])
                else:
                    raise TableError(f"character {ch!r} at index {i} is not in the table")
            lines.append(cells)
        return lines


def english_grade1() -> BrailleTable:
    symbols = {mask_from_dots(d): s for s, d in {**_LETTERS, **_SIGNS}.items()}
    return BrailleTable(symbols)


DEFAULT_TABLE = english_grade1()


class Decoder:
    """Context machine for number and capital signs.

    Number mode lasts until a blank cell; the capital sign capitalises the
    next letter. Undefined masks decode to ``?``.
    """

    def __init__(self, table: BrailleTable = DEFAULT_TABLE):
        self.table = table
        self.number_mode = False
        self.capital = False

    def space(self) -> str:
        self.number_mode = False
        self.capital = False
        return " "

    def feed_label(self, label: str | None) -> str:
        if label is None:
            return UNKNOWN
        if label == NUMBER:
            self.number_mode = True
            return ""
        if label == CAPITAL:
            self.capital = True
            return ""
        if self.number_mode and label in _LETTER_DIGITS:
            return _LETTER_DIGITS[label]
        if label in _LETTERS:
            out = label.upper() if self.capital else label
            self.capital = False
            return out
        if label in _SIGNS:
            return label
        return UNKNOWN

    def feed(self, mask: int) -> str:
        if mask == 0:
            return self.space()
        return self.feed_label(self.table.label(mask))
