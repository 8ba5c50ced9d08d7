"""
Truncated dyadic grids and coefficient fields.

A field stores nonnegative coefficient magnitudes for every level j of a
finite window [jmin, jmax] of the main grid. Each level owns a flat layer of
positions gamma = 0 .. size-1. Coefficients outside the window are zero.
"""

import io
import logging
import math
from dataclasses import dataclass

import numpy as np

logger = logging.getLogger(__name__)


class FieldFormatError(ValueError):
    """Raised when a coefficient file does not follow the line format."""

    def __init__(self, line_number, message):
        super().__init__(f"line {line_number}: {message}")
        self.line_number = line_number


@dataclass(frozen=True)
class DyadicIndex:
    """Position (j, gamma) on the full grid."""

    j: int
    gamma: int


@dataclass(frozen=True)
class BesovWeightSpec:
    """Smoothness s, integrability p and dimension n of a Besov weight."""

    s: float
    p: float
    n: int = 1

    def __post_init__(self):
        if not self.p > 0:
            raise ValueError(f"p must be positive, got {self.p}")
        if int(self.n) != self.n or self.n < 1:
            raise ValueError(f"n must be a positive integer, got {self.n}")


@dataclass(frozen=True)
class FieldLaw:
    """Distribution used by gen_field: 'uniform' or 'dyadic-decay'."""

    kind: str = "uniform"
    rate: float = 0.0

    def __post_init__(self):
        if self.kind not in ("uniform", "dyadic-decay"):
            raise ValueError(f"unknown law '{self.kind}'")
        if self.kind == "dyadic-decay" and not self.rate > 0:
            raise ValueError(f"dyadic-decay needs a positive rate, got {self.rate}")

    def __str__(self):
        if self.kind == "uniform":
            return "uniform"
        return f"dyadic-decay:{self.rate:g}"


def parse_law(text):
    """Parse 'uniform' or 'dyadic-decay:RATE'."""
    text = text.strip()
    if text == "uniform":
        return FieldLaw()
    kind, _, rate = text.partition(":")
    if kind != "dyadic-decay" or not rate:
        raise ValueError(f"bad law '{text}', expected uniform or dyadic-decay:RATE")
    try:
        return FieldLaw("dyadic-decay", float(rate))
    except ValueError:
        raise ValueError(f"bad decay rate '{rate}'") from None


def _frozen(values):
    array = np.abs(np.asarray(values, dtype=float)).reshape(-1)
    array.setflags(write=False)
    return array


class CoeffField:
    """
    Nonnegative coefficient magnitudes on the window [jmin, jmax].

    Values are absolutized on construction and stored in read-only arrays,
    so a field can be shared freely once built.
    """

    def __init__(self, jmin, jmax, layers=None):
        """
        Args:
            jmin (int): First level of the window
            jmax (int): Last level of the window
            layers (dict or sequence): Layer values per level. A dict maps
                j to values, a sequence lists layers from jmin upwards.
                Missing levels are empty.
        """
        jmin, jmax = int(jmin), int(jmax)
        if jmin > jmax:
            raise ValueError(f"empty window: jmin={jmin} > jmax={jmax}")
        self._jmin = jmin
        self._jmax = jmax

        count = jmax - jmin + 1
        if layers is None:
            layers = {}
        if isinstance(layers, dict):
            unknown = [j for j in layers if not jmin <= j <= jmax]
            if unknown:
                raise ValueError(f"levels {sorted(unknown)} outside window [{jmin}, {jmax}]")
            stored = [layers.get(j, ()) for j in range(jmin, jmax + 1)]
        else:
            stored = list(layers)
            if len(stored) != count:
                raise ValueError(f"expected {count} layers, got {len(stored)}")

        arrays = tuple(_frozen(values) for values in stored)
        for array in arrays:
            if not np.all(np.isfinite(array)):
                raise ValueError("coefficients must be finite")
        self._layers = arrays

    @property
    def jmin(self):
        return self._jmin

    @property
    def jmax(self):
        return self._jmax

    @property
    def levels(self):
        return range(self._jmin, self._jmax + 1)

    @property
    def layers(self):
        return self._layers

    @property
    def shape(self):
        """Layer sizes from jmin to jmax."""
        return tuple(len(layer) for layer in self._layers)

    @property
    def size(self):
        return sum(self.shape)

    def layer(self, j):
        if not self._jmin <= j <= self._jmax:
            raise IndexError(f"level {j} outside window [{self._jmin}, {self._jmax}]")
        return self._layers[j - self._jmin]

    def nonzero_count(self):
        return int(sum(np.count_nonzero(layer) for layer in self._layers))

    def is_zero(self):
        return self.nonzero_count() == 0

    def indices(self):
        """Yield every DyadicIndex of the field, level by level."""
        for j, layer in zip(self.levels, self._layers):
            for gamma in range(len(layer)):
                yield DyadicIndex(j, gamma)

    def __getitem__(self, index):
        layer = self.layer(index.j)
        if not 0 <= index.gamma < layer.size:
            raise IndexError(f"position {index.gamma} outside layer {index.j} of size {layer.size}")
        return float(layer[index.gamma])

    def scaled(self, factor):
        """Return the field with every coefficient multiplied by |factor|."""
        return CoeffField(self._jmin, self._jmax, [layer * abs(factor) for layer in self._layers])

    def with_value(self, index, value):
        """Return a copy with one coefficient replaced."""
        layers = [np.array(layer) for layer in self._layers]
        layers[index.j - self._jmin][index.gamma] = value
        return CoeffField(self._jmin, self._jmax, layers)

    def __eq__(self, other):
        if not isinstance(other, CoeffField):
            return NotImplemented
        return (
            self._jmin == other._jmin
            and self._jmax == other._jmax
            and self.shape == other.shape
            and all(np.array_equal(a, b) for a, b in zip(self._layers, other._layers))
        )

    def __hash__(self):
        return hash((self._jmin, self._jmax, tuple(layer.tobytes() for layer in self._layers)))

    def __repr__(self):
        body = ", ".join(f"{j}: {list(layer)}" for j, layer in zip(self.levels, self._layers))
        return f"CoeffField([{self._jmin}, {self._jmax}], {{{body}}})"


class VertexAssignment:
    """
    Two-colouring of a field's indices: bit 0 sends a coefficient to
    side 0 (Lambda_0), bit 1 sends it to side 1 (Lambda_1).
    """

    def __init__(self, jmin, bits):
        self._jmin = int(jmin)
        arrays = []
        for layer_bits in bits:
            array = np.asarray(layer_bits, dtype=np.uint8).reshape(-1)
            if np.any(array > 1):
                raise ValueError("assignment bits must be 0 or 1")
            array.setflags(write=False)
            arrays.append(array)
        self._bits = tuple(arrays)

    @classmethod
    def uniform(cls, field, side=0):
        """Assign every index of `field` to one side."""
        return cls(field.jmin, [np.full(n, side, dtype=np.uint8) for n in field.shape])

    @property
    def jmin(self):
        return self._jmin

    @property
    def bits(self):
        return self._bits

    @property
    def shape(self):
        return tuple(len(b) for b in self._bits)

    def layer_bits(self, j):
        return self._bits[j - self._jmin]

    def matches(self, field):
        return self._jmin == field.jmin and self.shape == field.shape

    def swapped(self):
        """Exchange the roles of the two sides."""
        return VertexAssignment(self._jmin, [1 - b for b in self._bits])

    def flat(self):
        """Bits in (j, gamma) order."""
        if not self._bits:
            return np.zeros(0, dtype=np.uint8)
        return np.concatenate(self._bits)

    def count(self, side):
        return int(np.count_nonzero(self.flat() == side))

    def __eq__(self, other):
        if not isinstance(other, VertexAssignment):
            return NotImplemented
        return (
            self._jmin == other._jmin
            and self.shape == other.shape
            and all(np.array_equal(a, b) for a, b in zip(self._bits, other._bits))
        )

    def __hash__(self):
        return hash((self._jmin, tuple(b.tobytes() for b in self._bits)))

    def __repr__(self):
        rows = " | ".join("".join(str(int(x)) for x in b) for b in self._bits)
        return f"VertexAssignment(jmin={self._jmin}, {rows})"


def restrict(field, assignment, side):
    """
    Keep the coefficients coloured `side`, zero the others.

    restrict(f, a, 0) + restrict(f, a, 1) reproduces f coefficientwise.
    """
    if side not in (0, 1):
        raise ValueError(f"side must be 0 or 1, got {side}")
    if not assignment.matches(field):
        raise ValueError(
            f"assignment shape {assignment.shape} (jmin={assignment.jmin}) does not match "
            f"field shape {field.shape} (jmin={field.jmin})"
        )
    layers = [
        np.where(bits == side, layer, 0.0)
        for layer, bits in zip(field.layers, assignment.bits)
    ]
    return CoeffField(field.jmin, field.jmax, layers)


def besov_weight_exponent(spec):
    """Exponent s + n/2 - n/p of the level weight; p = inf gives n/p = 0."""
    n_over_p = 0.0 if math.isinf(spec.p) else spec.n / spec.p
    return spec.s + spec.n / 2.0 - n_over_p


def scale_levels(field, exponent):
    """Multiply layer j by 2^(j * exponent)."""
    layers = [layer * np.exp2(j * exponent) for j, layer in zip(field.levels, field.layers)]
    return CoeffField(field.jmin, field.jmax, layers)


def gen_field(seed, window, layer_size, law=None):
    """
    Generate a deterministic test field.

    Args:
        seed (int): Seed for numpy's default generator
        window (tuple): (jmin, jmax)
        layer_size (int): Number of positions in every layer
        law (FieldLaw or str): 'uniform' gives values in (0, 1];
            'dyadic-decay:RATE' scales level j by 2^(-rate*|j|)

    Returns:
        CoeffField: The generated field
    """
    if law is None:
        law = FieldLaw()
    elif isinstance(law, str):
        law = parse_law(law)
    if layer_size < 0:
        raise ValueError(f"layer_size must be >= 0, got {layer_size}")
    jmin, jmax = window
    rng = np.random.default_rng(seed)

    layers = []
    for j in range(jmin, jmax + 1):
        values = 1.0 - rng.random(layer_size)
        if law.kind == "dyadic-decay":
            values = values * np.exp2(-law.rate * abs(j))
        layers.append(values)
    return CoeffField(jmin, jmax, layers)


def _decode(line, line_number):
    if isinstance(line, bytes):
        try:
            return line.decode("utf-8")
        except UnicodeDecodeError as e:
            raise FieldFormatError(line_number, f"invalid UTF-8 at byte {e.start}") from None
    return line


def load_field(source):
    """
    Read a field from the coefficient file format.

    The first meaningful line is the header `jmin jmax`; every following line
    is `j gamma value`. `#` starts a comment. Layer size is one more than the
    largest gamma seen at that level.

    Args:
        source: Binary or text stream, or any iterable of lines

    Returns:
        CoeffField: The parsed field with magnitudes absolutized
    """
    header = None
    entries = {}
    for line_number, raw in enumerate(source, start=1):
        text = _decode(raw, line_number).split("#", 1)[0].strip()
        if not text:
            continue
        tokens = text.split()

        if header is None:
            if len(tokens) != 2:
                raise FieldFormatError(line_number, f"malformed header '{text}', expected 'jmin jmax'")
            try:
                header = (int(tokens[0]), int(tokens[1]))
            except ValueError:
                raise FieldFormatError(line_number, f"malformed header '{text}'") from None
            if header[0] > header[1]:
                raise FieldFormatError(line_number, f"malformed header: jmin {header[0]} > jmax {header[1]}")
            continue

        if len(tokens) != 3:
            raise FieldFormatError(line_number, f"expected 'j gamma value', got '{text}'")
        try:
            j, gamma = int(tokens[0]), int(tokens[1])
        except ValueError:
            raise FieldFormatError(line_number, f"non-integer index in '{text}'") from None
        try:
            value = float(tokens[2])
        except ValueError:
            raise FieldFormatError(line_number, f"non-numeric value '{tokens[2]}'") from None
        if not math.isfinite(value):
            raise FieldFormatError(line_number, f"non-finite value '{tokens[2]}'")
        if not header[0] <= j <= header[1]:
            raise FieldFormatError(line_number, f"level {j} out of declared bounds [{header[0]}, {header[1]}]")
        if gamma < 0:
            raise FieldFormatError(line_number, f"negative position {gamma}")
        if (j, gamma) in entries:
            raise FieldFormatError(line_number, f"duplicate index ({j}, {gamma})")
        entries[(j, gamma)] = abs(value)

    if header is None:
        raise FieldFormatError(0, "missing header 'jmin jmax'")

    jmin, jmax = header
    layers = {}
    for j in range(jmin, jmax + 1):
        gammas = [g for (level, g) in entries if level == j]
        values = np.zeros(max(gammas) + 1 if gammas else 0)
        for g in gammas:
            values[g] = entries[(j, g)]
        layers[j] = values
    field = CoeffField(jmin, jmax, layers)
    logger.debug("loaded field with shape %s and %d nonzero coefficients", field.shape, field.nonzero_count())
    return field


def loads_field(text):
    return load_field(io.StringIO(text))


def store_field(field, stream):
    """Write `field` in the coefficient file format (exact float round trip)."""
    stream.write(f"{field.jmin} {field.jmax}\n")
    for j, layer in zip(field.levels, field.layers):
        for gamma, value in enumerate(layer):
            stream.write(f"{j} {gamma} {float(value)!r}\n")


def dumps_field(field):
    buffer = io.StringIO()
    store_field(field, buffer)
    return buffer.getvalue()
