"""Linear-chain CRF over BILOU tags.

Pure-numpy lattice functions (path scoring, forward-algorithm log-partition,
Viterbi with optional legality constraints) plus a differentiable negative
log-likelihood built from autodiff primitives for training.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .bilou import B, I, L, N_TAGS, O, U


@dataclass
class TagLattice:
    """Per-position emission scores plus shared transition/start/end scores.

    transitions[a, b] scores tag a followed by tag b.
    """

    emissions: np.ndarray  # [n, n_tags]
    transitions: np.ndarray  # [n_tags, n_tags]
    start_scores: np.ndarray  # [n_tags]
    end_scores: np.ndarray  # [n_tags]

    @property
    def n(self) -> int:
        return self.emissions.shape[0]

    @property
    def n_tags(self) -> int:
        return self.emissions.shape[1]


@dataclass
class ConstraintMask:
    allowed_transitions: np.ndarray  # bool [n_tags, n_tags]
    allowed_start: np.ndarray  # bool [n_tags]
    allowed_end: np.ndarray  # bool [n_tags]


def bilou_constraints() -> ConstraintMask:
    """Legality rules of the 5-tag BILOU scheme: B opens, I continues, L
    closes, U stands alone, so e.g. B->O is illegal and I may not start."""
    trans = np.zeros((N_TAGS, N_TAGS), dtype=bool)
    for a, b in [
        (O, O), (O, B), (O, U),
        (B, I), (B, L),
        (I, I), (I, L),
        (L, O), (L, B), (L, U),
        (U, O), (U, B), (U, U),
    ]:
        trans[a, b] = True
    start = np.zeros(N_TAGS, dtype=bool)
    start[[O, B, U]] = True
    end = np.zeros(N_TAGS, dtype=bool)
    end[[O, L, U]] = True
    return ConstraintMask(trans, start, end)


def score_sequence(lattice: TagLattice, tags) -> float:
    """start + per-position emissions + pairwise transitions + end."""
    tags = np.asarray(tags)
    n = lattice.n
    if tags.shape != (n,):
        raise ValueError(f"tag length {tags.shape} does not match lattice length {n}")
    em = lattice.emissions.astype(np.float64)
    s = float(lattice.start_scores[tags[0]]) + float(lattice.end_scores[tags[-1]])
    s += float(em[np.arange(n), tags].sum())
    if n > 1:
        s += float(lattice.transitions.astype(np.float64)[tags[:-1], tags[1:]].sum())
    return s


def log_partition(lattice: TagLattice) -> float:
    """log sum over all tag sequences of exp(score), by the forward algorithm."""
    from scipy.special import logsumexp as lse

    em = lattice.emissions.astype(np.float64)
    trans = lattice.transitions.astype(np.float64)
    alpha = lattice.start_scores.astype(np.float64) + em[0]
    for t in range(1, lattice.n):
        alpha = lse(alpha[:, None] + trans, axis=0) + em[t]
    return float(lse(alpha + lattice.end_scores.astype(np.float64)))


def viterbi(lattice: TagLattice, mask: ConstraintMask | None = None):
    """Highest-scoring tag sequence and its score.

    With a constraint mask, maximization is restricted to legal paths.  Ties
    break toward the lowest tag id (argmax picks the first maximum).
    """
    em = lattice.emissions.astype(np.float64)
    trans = lattice.transitions.astype(np.float64).copy()
    start = lattice.start_scores.astype(np.float64).copy()
    end = lattice.end_scores.astype(np.float64).copy()
    if mask is not None:
        trans[~mask.allowed_transitions] = -np.inf
        start[~mask.allowed_start] = -np.inf
        end[~mask.allowed_end] = -np.inf

    n = lattice.n
    score = start + em[0]
    backptr = np.zeros((n, lattice.n_tags), dtype=np.int64)
    for t in range(1, n):
        cand = score[:, None] + trans  # [prev, cur]
        backptr[t] = np.argmax(cand, axis=0)
        score = cand[backptr[t], np.arange(lattice.n_tags)] + em[t]
    final = score + end
    last = int(np.argmax(final))
    best = float(final[last])
    if not np.isfinite(best):
        raise ValueError("no legal path through the lattice")
    path = [last]
    for t in range(n - 1, 0, -1):
        path.append(int(backptr[t, path[-1]]))
    path.reverse()
    return path, best


def crf_nll(lattice: TagLattice, gold) -> float:
    """Plain-number NLL of the gold path: log Z - score(gold)."""
    return log_partition(lattice) - score_sequence(lattice, gold)


# ---------------------------------------------------------------------------
# differentiable batched NLL (the training loss)


def crf_nll_batch(emissions, transitions, start_scores, end_scores, tags, lengths):
    """Mean over sequences of (log Z - gold score), as an autodiff node.

    emissions: Tensor [B, T, K]; transitions/start/end: Tensors; tags: int
    array [B, T] (values past each sequence's length are ignored); lengths:
    int array [B].  Positions past a sequence's length contribute nothing:
    the forward recursion freezes alpha there and gold-score terms are masked.
    """
    tags = np.asarray(tags)
    lengths = np.asarray(lengths)
    bsz, tmax, k = emissions.data.shape
    if np.any(lengths < 1) or np.any(lengths > tmax):
        raise ValueError("lengths must be in [1, T]")
    dtype = emissions.data.dtype
    step_mask = (np.arange(tmax)[None, :] < lengths[:, None]).astype(dtype)  # [B, T]

    trans_t = ad.permute(transitions, (1, 0))  # [cur, prev]

    # log-partition by the forward algorithm, alpha frozen past each length
    alpha = ad.add(
        ad.reshape(start_scores, (1, k)),
        ad.reshape(
            ad.take(emissions, _time_slice_idx(bsz, tmax, k, 0)), (bsz, k)
        ),
    )
    for t in range(1, tmax):
        scores = ad.add(ad.reshape(alpha, (bsz, 1, k)), trans_t)  # [B, cur, prev]
        em_t = ad.reshape(
            ad.take(emissions, _time_slice_idx(bsz, tmax, k, t)), (bsz, k)
        )
        alpha_new = ad.add(ad.logsumexp(scores), em_t)
        m = step_mask[:, t][:, None]
        alpha = ad.add(ad.mul(alpha_new, m), ad.mul(alpha, 1.0 - m))
    log_z = ad.logsumexp(ad.add(alpha, ad.reshape(end_scores, (1, k))))  # [B]

    # gold path score
    gold_start = ad.take(start_scores, tags[:, 0])  # [B]
    flat_em_idx = (
        np.arange(bsz)[:, None] * (tmax * k) + np.arange(tmax)[None, :] * k + tags
    )
    em_terms = ad.mul(ad.take(emissions, flat_em_idx), step_mask)  # [B, T]
    gold_em = ad.reduce_sum(em_terms, axis=1)
    gold_end = ad.take(end_scores, tags[np.arange(bsz), lengths - 1])  # [B]

    gold = ad.add(ad.add(gold_start, gold_em), gold_end)
    if tmax > 1:
        flat_tr_idx = tags[:, :-1] * k + tags[:, 1:]  # [B, T-1]
        tr_terms = ad.mul(ad.take(transitions, flat_tr_idx), step_mask[:, 1:])
        gold = ad.add(gold, ad.reduce_sum(tr_terms, axis=1))

    nll = ad.sub(log_z, gold)  # [B]
    return ad.scale(ad.reduce_sum(nll), 1.0 / bsz)


def _time_slice_idx(bsz, tmax, k, t):
    """Flat indices of emissions[:, t, :] in a [B, T, K] layout."""
    return (np.arange(bsz)[:, None] * (tmax * k) + t * k + np.arange(k)[None, :])


def crf_nll_node(emissions, transitions, start_scores, end_scores, gold):
    """Single-sequence differentiable NLL; emissions is a Tensor [n, K]."""
    n, k = emissions.data.shape
    return crf_nll_batch(
        ad.reshape(emissions, (1, n, k)),
        transitions,
        start_scores,
        end_scores,
        np.asarray(gold)[None, :],
        np.array([n]),
    )
