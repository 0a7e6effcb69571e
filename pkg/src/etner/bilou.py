"""BILOU tag codec for single-label (product) entity spans.

Tag ids are fixed: O=0, B=1, I=2, L=3, U=4.  O first so that an untrained
all-zero scorer decodes to "no entities" under lowest-id tie-breaking.
"""

from __future__ import annotations

from dataclasses import dataclass, field

O, B, I, L, U = range(5)
TAG_NAMES = ("O", "B-product", "I-product", "L-product", "U-product")
N_TAGS = 5

DEFAULT_LABEL = "product"


@dataclass(frozen=True, order=True)
class EntitySpan:
    """Token-index span [start, end) with an entity label."""

    start: int
    end: int
    label: str = DEFAULT_LABEL


def validate_spans(spans, length: int) -> None:
    prev_end = 0
    for s in spans:
        if not (0 <= s.start < s.end <= length):
            raise ValueError(f"invalid spans: {s} out of range for length {length}")
        if s.start < prev_end:
            raise ValueError(f"invalid spans: {s} overlaps or is out of order")
        prev_end = s.end


def bilou_encode(spans, length: int) -> list[int]:
    """Spans -> tag ids.  Length-1 spans become U; longer ones B, I..., L."""
    validate_spans(spans, length)
    tags = [O] * length
    for s in spans:
        if s.end - s.start == 1:
            tags[s.start] = U
        else:
            tags[s.start] = B
            for i in range(s.start + 1, s.end - 1):
                tags[i] = I
            tags[s.end - 1] = L
    return tags


def bilou_decode(tags, strict: bool = True, label: str = DEFAULT_LABEL):
    """Tag ids -> spans.

    Strict mode accepts exactly the sequences bilou_encode produces and raises
    on anything else.  Lenient mode never raises: a span opens at the first
    entity tag of a run and closes at L or U (inclusive) or where the run
    ends, so well-formed stretches decode unchanged and a malformed run
    without an explicit closer collapses to one span.
    """
    if strict:
        return _decode_strict(tags, label)
    return _decode_lenient(tags, label)


def _decode_strict(tags, label):
    spans = []
    i, n = 0, len(tags)
    while i < n:
        t = tags[i]
        if t == O:
            i += 1
        elif t == U:
            spans.append(EntitySpan(i, i + 1, label))
            i += 1
        elif t == B:
            j = i + 1
            while j < n and tags[j] == I:
                j += 1
            if j >= n or tags[j] != L:
                raise ValueError(f"ill-formed BILOU: B at {i} never closed by L")
            spans.append(EntitySpan(i, j + 1, label))
            i = j + 1
        else:
            raise ValueError(f"ill-formed BILOU: {TAG_NAMES[t]} at {i} without opening B")
    return spans


def _decode_lenient(tags, label):
    spans = []
    open_start = None
    for i, t in enumerate(tags):
        if t == O:
            if open_start is not None:
                spans.append(EntitySpan(open_start, i, label))
                open_start = None
        elif t in (L, U):
            start = open_start if open_start is not None else i
            spans.append(EntitySpan(start, i + 1, label))
            open_start = None
        else:  # B or I
            if open_start is None:
                open_start = i
    if open_start is not None:
        spans.append(EntitySpan(open_start, len(tags), label))
    return spans
