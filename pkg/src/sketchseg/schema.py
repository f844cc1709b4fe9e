"""Unified part palette, per-category remap table for source-dataset rasters,
and the LabelMap carrying per-pixel class indices.

Both tables ship as whitespace-separated text files under ``data/`` (grammar
below) and are loaded, not hard-coded, so alternative schemas drop in.

Palette file: one record per line, ``index name category[,category...] R G B``.
Remap file: one record per line, either
``category source_name R G B target_name R G B`` or
``category source_name R G B IGNORE`` (source maps to background).
``#`` starts a comment; blank lines are skipped.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable, Optional

import numpy as np

from .errors import ConfigError, DataError, UnmappedLabelError

BACKGROUND_RGB = (255, 255, 255)
BACKGROUND_NAME = "background"


@dataclass(frozen=True)
class PaletteEntry:
    index: int
    name: str
    categories: tuple[str, ...]  # ("*",) marks every category
    rgb: tuple[int, int, int]


class Palette:
    """Ordered bijection class index <-> part name <-> RGB triple.

    Index 0 is reserved for the white background; RGB triples are unique.
    """

    def __init__(self, entries: Iterable[PaletteEntry]):
        self.entries: list[PaletteEntry] = sorted(entries, key=lambda e: e.index)
        if not self.entries:
            raise ConfigError("palette must not be empty")
        if [e.index for e in self.entries] != list(range(len(self.entries))):
            raise ConfigError("palette indices must be 0..K-1 without gaps")
        first = self.entries[0]
        if first.name != BACKGROUND_NAME or first.rgb != BACKGROUND_RGB:
            raise ConfigError("palette index 0 must be 'background' with RGB (255, 255, 255)")
        seen_rgb: dict[tuple, str] = {}
        for e in self.entries:
            if e.rgb in seen_rgb:
                raise ConfigError(f"palette RGB {e.rgb} used by both {seen_rgb[e.rgb]!r} and {e.name!r}")
            seen_rgb[e.rgb] = e.name
        self._by_name = {e.name: e for e in self.entries}
        self._by_rgb = {e.rgb: e for e in self.entries}

    def __len__(self) -> int:
        return len(self.entries)

    def __eq__(self, other) -> bool:
        return isinstance(other, Palette) and [
            (e.index, e.name, e.rgb) for e in self.entries
        ] == [(e.index, e.name, e.rgb) for e in other.entries]

    def by_name(self, name: str) -> PaletteEntry:
        try:
            return self._by_name[name]
        except KeyError:
            raise DataError(f"palette has no part named {name!r}") from None

    def by_rgb(self, rgb) -> Optional[PaletteEntry]:
        return self._by_rgb.get(tuple(int(v) for v in rgb))

    def colors(self) -> np.ndarray:
        """(K, 3) uint8 array of entry colors, ordered by class index."""
        return np.array([e.rgb for e in self.entries], dtype=np.uint8)

    @classmethod
    def load(cls, path) -> "Palette":
        entries = []
        for lineno, parts in _records(Path(path).read_text(encoding="utf-8")):
            if len(parts) != 6:
                raise ConfigError(f"palette line {lineno}: expected 6 fields, got {len(parts)}")
            idx, name, cats, r, g, b = parts
            entries.append(
                PaletteEntry(int(idx), name, tuple(cats.split(",")), (int(r), int(g), int(b)))
            )
        return cls(entries)

    def save(self, path) -> None:
        lines = ["# index name category[,category...] R G B"]
        for e in self.entries:
            lines.append(f"{e.index} {e.name} {','.join(e.categories)} {e.rgb[0]} {e.rgb[1]} {e.rgb[2]}")
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


@dataclass(frozen=True)
class RemapRow:
    category: str
    source_name: str
    source_rgb: tuple[int, int, int]
    target_name: Optional[str]  # None = IGNORE (maps to background)
    target_rgb: Optional[tuple[int, int, int]]

    @property
    def ignored(self) -> bool:
        return self.target_name is None


class RemapTable:
    """Rows translating one category's source colors into the unified palette."""

    def __init__(self, rows: Iterable[RemapRow]):
        # duplicates are kept so validate() can report them; lookups use the
        # first occurrence
        self.rows: list[RemapRow] = list(rows)
        self._by_category: dict[str, dict[tuple, RemapRow]] = {}
        for row in self.rows:
            cat = self._by_category.setdefault(row.category, {})
            cat.setdefault(row.source_rgb, row)

    def categories(self) -> list[str]:
        return sorted(self._by_category)

    def rows_for(self, category: str) -> dict[tuple, RemapRow]:
        try:
            return self._by_category[category]
        except KeyError:
            raise DataError(f"remap table has no category {category!r}") from None

    @classmethod
    def load(cls, path) -> "RemapTable":
        rows = []
        for lineno, parts in _records(Path(path).read_text(encoding="utf-8")):
            if len(parts) == 6 and parts[5].upper() == "IGNORE":
                cat, name, r, g, b, _ = parts
                rows.append(RemapRow(cat, name, (int(r), int(g), int(b)), None, None))
            elif len(parts) == 9:
                cat, name, r, g, b, tname, tr, tg, tb = parts
                rows.append(
                    RemapRow(
                        cat, name, (int(r), int(g), int(b)), tname, (int(tr), int(tg), int(tb))
                    )
                )
            else:
                raise ConfigError(f"remap line {lineno}: expected 6 (IGNORE) or 9 fields")
        return cls(rows)

    def save(self, path) -> None:
        lines = ["# category source_name R G B (target_name R G B | IGNORE)"]
        for w in self.rows:
            src = f"{w.category} {w.source_name} {w.source_rgb[0]} {w.source_rgb[1]} {w.source_rgb[2]}"
            if w.ignored:
                lines.append(f"{src} IGNORE")
            else:
                lines.append(f"{src} {w.target_name} {w.target_rgb[0]} {w.target_rgb[1]} {w.target_rgb[2]}")
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def _records(text: str):
    for lineno, line in enumerate(text.splitlines(), start=1):
        body = line.split("#", 1)[0].strip()
        if body:
            yield lineno, body.split()


@dataclass
class LabelMap:
    """Class-index raster plus the palette that interprets it."""

    classes: np.ndarray  # (H, W) integer
    palette: Palette

    def __post_init__(self):
        self.classes = np.asarray(self.classes)
        if self.classes.ndim != 2:
            raise DataError(f"label map must be 2-d, got shape {self.classes.shape}")
        if self.classes.min(initial=0) < 0 or self.classes.max(initial=0) >= len(self.palette):
            raise DataError("label map contains class indices outside the palette")

    @property
    def shape(self):
        return self.classes.shape

    def render(self) -> np.ndarray:
        """(H, W, 3) uint8 raster of palette colors."""
        return self.palette.colors()[self.classes]

    def stroke_mask(self) -> np.ndarray:
        return self.classes != 0


# ---------------------------------------------------------------------------
# built-in schema


def _data_path(name: str):
    return resources.files("sketchseg").joinpath("data", name)


_BUILTIN_PALETTE: Optional[Palette] = None
_BUILTIN_REMAP: Optional[RemapTable] = None


def builtin_palette() -> Palette:
    """The unified 25-entry palette (background + 24 parts)."""
    global _BUILTIN_PALETTE
    if _BUILTIN_PALETTE is None:
        with resources.as_file(_data_path("unified_palette.txt")) as p:
            _BUILTIN_PALETTE = Palette.load(p)
    return _BUILTIN_PALETTE


def builtin_remap_table() -> RemapTable:
    """The shipped source-dataset remap rows for all ten categories."""
    global _BUILTIN_REMAP
    if _BUILTIN_REMAP is None:
        with resources.as_file(_data_path("source_remap.txt")) as p:
            _BUILTIN_REMAP = RemapTable.load(p)
    return _BUILTIN_REMAP


# ---------------------------------------------------------------------------
# operations


def remap(labels, category: str, table: RemapTable, palette: Palette) -> LabelMap:
    """Translate a source-colored raster into a unified-palette LabelMap.

    ``labels`` is an (H, W, 3) uint8 raster of source colors.  Background
    passes through; IGNORE rows map to background; any color without a row
    raises ``UnmappedLabelError`` listing the offenders.  A LabelMap already
    carrying the target palette is a fixpoint and comes back unchanged (its
    classes are table targets); other LabelMaps are rendered and matched.
    """
    if isinstance(labels, LabelMap):
        if labels.palette == palette:
            return LabelMap(labels.classes.copy(), palette)
        raster = labels.render()
    else:
        raster = np.asarray(labels)
    if raster.ndim != 3 or raster.shape[-1] != 3:
        raise DataError(f"expected an (H, W, 3) raster, got shape {raster.shape}")
    rows = table.rows_for(category)
    h, w, _ = raster.shape
    flat = raster.reshape(-1, 3)
    colors, inverse = np.unique(flat, axis=0, return_inverse=True)
    inverse = inverse.reshape(-1)
    lut = np.zeros(len(colors), dtype=np.int64)
    unmapped = []
    for i, color in enumerate(colors):
        rgb = (int(color[0]), int(color[1]), int(color[2]))
        if rgb == BACKGROUND_RGB:
            lut[i] = 0
            continue
        row = rows.get(rgb)
        if row is None:
            unmapped.append(rgb)
        elif row.ignored:
            lut[i] = 0
        else:
            entry = palette.by_rgb(row.target_rgb)
            if entry is None:
                raise ConfigError(
                    f"remap target {row.target_rgb} for {row.source_name!r} is not in the palette"
                )
            lut[i] = entry.index
    if unmapped:
        raise UnmappedLabelError(
            f"category {category!r}: {len(unmapped)} unmapped colors: "
            + ", ".join(str(c) for c in unmapped),
            rgbs=unmapped,
        )
    return LabelMap(lut[inverse].reshape(h, w), palette)


@dataclass
class SchemaFinding:
    kind: str  # duplicate-source | dangling-target | empty-category
    message: str


@dataclass
class SchemaReport:
    findings: list[SchemaFinding] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.findings

    def to_text(self) -> str:
        if self.ok:
            return "schema OK: no findings\n"
        return "".join(f"{f.kind}: {f.message}\n" for f in self.findings)


def validate(table: RemapTable, palette: Palette) -> SchemaReport:
    """Check remap rows against the palette; returns findings, raises nothing."""
    report = SchemaReport()
    seen: set[tuple[str, tuple]] = set()
    for row in table.rows:
        key = (row.category, row.source_rgb)
        if key in seen:
            report.findings.append(
                SchemaFinding("duplicate-source", f"{row.category}: source {row.source_rgb} repeated")
            )
        seen.add(key)
        if not row.ignored:
            entry = palette.by_rgb(row.target_rgb)
            if entry is None:
                report.findings.append(
                    SchemaFinding(
                        "dangling-target",
                        f"{row.category}: target {row.target_name} {row.target_rgb} not in palette",
                    )
                )
            elif entry.name != row.target_name:
                report.findings.append(
                    SchemaFinding(
                        "dangling-target",
                        f"{row.category}: target {row.target_rgb} is {entry.name!r} in the palette, "
                        f"not {row.target_name!r}",
                    )
                )
    palette_categories = set()
    for e in palette.entries:
        for c in e.categories:
            if c != "*":
                palette_categories.add(c)
    for cat in sorted(palette_categories - set(table.categories())):
        report.findings.append(SchemaFinding("empty-category", f"no remap rows for category {cat!r}"))
    return report
