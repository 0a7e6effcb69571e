"""Synthetic voice-order corpus generation.

Seed templates + quantity phrases + a synonym-expanded product catalog are
combined into utterances carrying 1-10 gold product spans.  Spans are recorded
while rendering, never recovered by searching the text, so products whose
names share tokens with quantity phrases still get exact gold spans.

All randomness flows through an explicitly seeded numpy PCG64 generator
(np.random.default_rng); identical seeds reproduce identical corpora run to
run.  Shard k of a root seed uses SeedSequence([root_seed, k]).
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .bilou import EntitySpan
from .records import UtteranceRecord, write_jsonl
from .text import PUNCTUATION, tokenize

MAX_ITEMS = 10


@dataclass(frozen=True)
class CatalogEntry:
    canonical: str
    department: str
    synonyms: tuple = ()

    @property
    def surfaces(self) -> tuple:
        seen = dict.fromkeys((self.canonical,) + self.synonyms)
        return tuple(seen)


@dataclass
class ProductCatalog:
    entries: list

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def canonical_names(self):
        return [e.canonical for e in self.entries]

    def all_surfaces(self) -> set:
        out = set()
        for e in self.entries:
            out.update(e.surfaces)
        return out


@dataclass
class TemplateSet:
    """Utterance templates (each with one {items} hole) and quantity phrases."""

    templates: list
    quantity_phrases: list

    def __post_init__(self):
        if not self.templates:
            raise ValueError("no templates")
        for t in self.templates:
            if t.count("{items}") != 1:
                raise ValueError(f"template must contain {{items}} exactly once: {t!r}")
            if any(ch in t for ch in PUNCTUATION):
                raise ValueError(f"template contains punctuation: {t!r}")


def _normalized_surface(surface: str, what: str, lineno: int) -> str:
    s = surface.strip().lower()
    if not s:
        raise ValueError(f"empty {what} line {lineno}")
    if s != " ".join(tokenize(s)):
        raise ValueError(f"{what} is not cleanly tokenizable line {lineno}: {surface!r}")
    return s


def load_catalog(path) -> ProductCatalog:
    """Parse the catalog file: canonical<TAB>department<TAB>syn1,syn2,...

    The synonym field may be empty.  Blank lines and #-comments are skipped.
    """
    entries = []
    seen = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.rstrip("\n")
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise ValueError(f"expected 3 tab-separated fields line {lineno}: {line!r}")
            canonical = _normalized_surface(parts[0], "product name", lineno)
            department = parts[1].strip().lower()
            if not department:
                raise ValueError(f"empty department line {lineno}")
            if canonical in seen:
                raise ValueError(f"duplicate product: {canonical} line {lineno}")
            seen[canonical] = lineno
            synonyms = []
            if parts[2].strip():
                for syn in parts[2].split(","):
                    synonyms.append(_normalized_surface(syn, "synonym", lineno))
            entries.append(CatalogEntry(canonical, department, tuple(synonyms)))
    if not entries:
        raise ValueError("empty catalog")
    return ProductCatalog(entries)


def _load_lines(path):
    out = []
    with open(path, encoding="utf-8") as fh:
        for raw in fh:
            line = raw.strip()
            if line and not line.startswith("#"):
                out.append(line.lower())
    return out


def load_templates(templates_path, quantities_path) -> TemplateSet:
    return TemplateSet(_load_lines(templates_path), _load_lines(quantities_path))


# ---------------------------------------------------------------------------
# catalog splitting


def split_catalog(catalog: ProductCatalog, holdout_fraction: float, seed: int):
    """Partition by canonical name into (train, test), deterministic in seed.

    The global test count is round(fraction * N) clamped to [1, N-1],
    apportioned across departments by largest remainder so every department
    with at least two products lands in both splits.  Single-product
    departments stay in train.
    """
    if not 0.0 < holdout_fraction < 1.0:
        raise ValueError(f"holdout_fraction must be in (0, 1), got {holdout_fraction}")
    n = len(catalog)
    if n < 2:
        raise ValueError("catalog has fewer than 2 products, cannot split")

    by_dept: dict = {}
    for e in catalog.entries:
        by_dept.setdefault(e.department, []).append(e)
    depts = sorted(by_dept)

    lows, highs, quotas = {}, {}, {}
    for d in depts:
        nd = len(by_dept[d])
        lows[d] = 1 if nd >= 2 else 0
        highs[d] = nd - 1 if nd >= 2 else 0
        quotas[d] = holdout_fraction * nd

    target = int(round(holdout_fraction * n))
    target = min(max(target, 1), n - 1)
    target = min(max(target, sum(lows.values())), sum(highs.values()))

    counts = {d: min(max(int(np.floor(quotas[d])), lows[d]), highs[d]) for d in depts}
    # largest-remainder adjustment toward the exact global target
    while sum(counts.values()) < target:
        cands = [d for d in depts if counts[d] < highs[d]]
        cands.sort(key=lambda d: (-(quotas[d] - counts[d]), d))
        counts[cands[0]] += 1
    while sum(counts.values()) > target:
        cands = [d for d in depts if counts[d] > lows[d]]
        cands.sort(key=lambda d: (quotas[d] - counts[d], d))
        counts[cands[0]] -= 1

    rng = np.random.default_rng(np.random.SeedSequence(seed))
    train, test = [], []
    for d in depts:
        group = sorted(by_dept[d], key=lambda e: e.canonical)
        order = rng.permutation(len(group))
        k = counts[d]
        test.extend(group[i] for i in order[:k])
        train.extend(group[i] for i in order[k:])
    train.sort(key=lambda e: e.canonical)
    test.sort(key=lambda e: e.canonical)
    return ProductCatalog(train), ProductCatalog(test)


# ---------------------------------------------------------------------------
# rendering and sampling


def render_utterance(template: str, items, rec_id: str = "") -> UtteranceRecord:
    """Fill {items} with "qty1 prod1 qty2 prod2 ..." and record product spans.

    Empty quantity phrases are simply omitted.  Gold spans cover exactly the
    product surface tokens.
    """
    if not 1 <= len(items) <= MAX_ITEMS:
        raise ValueError(f"item count out of range: {len(items)}")
    if template.count("{items}") != 1:
        raise ValueError(f"template must contain {{items}} exactly once: {template!r}")
    before, after = template.split("{items}")
    tokens = tokenize(before)
    spans = []
    for qty, surface in items:
        tokens.extend(tokenize(qty))
        ptoks = tokenize(surface)
        if not ptoks:
            raise ValueError(f"product surface has no tokens: {surface!r}")
        spans.append(EntitySpan(len(tokens), len(tokens) + len(ptoks)))
        tokens.extend(ptoks)
    tokens.extend(tokenize(after))
    return UtteranceRecord(rec_id, tokens, spans)


def sample_record(
    rng,
    templates: TemplateSet,
    catalog: ProductCatalog,
    min_items: int = 1,
    max_items: int = MAX_ITEMS,
    rec_id: str = "",
) -> UtteranceRecord:
    """One random record: uniform item count, products without replacement
    while the catalog allows, surface uniform over canonical + synonyms,
    quantity phrase uniform over the phrase list plus the empty phrase.
    """
    if not 1 <= min_items <= max_items <= MAX_ITEMS:
        raise ValueError(f"bad item bounds [{min_items}, {max_items}]")
    n = len(catalog)
    if n < min_items:
        raise ValueError(f"catalog of {n} products is smaller than min_items={min_items}")

    qty_pool = list(templates.quantity_phrases)
    if "" not in qty_pool:
        qty_pool.append("")

    template = templates.templates[int(rng.integers(len(templates.templates)))]
    count = int(rng.integers(min_items, max_items + 1))
    if count <= n:
        chosen = rng.choice(n, size=count, replace=False)
    else:
        chosen = np.concatenate(
            [rng.permutation(n), rng.integers(0, n, size=count - n)]
        )
    items = []
    for idx in chosen:
        entry = catalog.entries[int(idx)]
        surfaces = entry.surfaces
        surface = surfaces[int(rng.integers(len(surfaces)))]
        qty = qty_pool[int(rng.integers(len(qty_pool)))]
        items.append((qty, surface))
    return render_utterance(template, items, rec_id)


def shard_rng(root_seed: int, shard: int):
    """The documented shard seeding rule: PCG64 over SeedSequence([root, shard])."""
    return np.random.default_rng(np.random.SeedSequence([root_seed, shard]))


def generate_dataset(
    seed: int,
    templates: TemplateSet,
    catalog: ProductCatalog,
    count: int,
    min_items: int = 1,
    max_items: int = MAX_ITEMS,
    out_path=None,
    shard: int = 0,
) -> dict:
    """Generate ``count`` records; optionally write them as JSON Lines.

    Returns {"records": ..., "histogram": {entity_count: n}, "items": [...]}
    where "items" is the record list (handy for in-process use).
    """
    if count < 1:
        raise ValueError(f"count must be >= 1, got {count}")
    rng = shard_rng(seed, shard)
    records = []
    histogram: Counter = Counter()
    for i in range(count):
        rec = sample_record(
            rng, templates, catalog, min_items, max_items,
            rec_id=f"u{shard:03d}-{i:06d}",
        )
        histogram[len(rec.entities)] += 1
        records.append(rec)
    if out_path is not None:
        write_jsonl(records, out_path)
    return {
        "records": count,
        "histogram": dict(sorted(histogram.items())),
        "items": records,
    }
