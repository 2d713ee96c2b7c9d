"""
Turns a query's position vectors into classifier input: one-hot subplan
encodings, the subset vocabulary and framed, padded token sequences.
"""

import logging
from dataclasses import dataclass
from typing import Tuple

import numpy as np

from .errors import CapacityError, UnknownReferenceError, UnsupportedSchemaError
from .planspace import subplan_key

logger = logging.getLogger(__name__)

BOS, SEP, EOS, PAD = 0, 1, 2, 3
SPECIALS = {"bos": BOS, "sep": SEP, "eos": EOS, "pad": PAD}
UNKNOWN = 4
# largest schema whose subsets are all enumerated up front
FULL_VOCAB_TABLES = 12
MAX_TABLES = 30


class Vocabulary:
    """
    Token ids for the four specials and for table subsets.  With T <= 12
    every nonempty subset has id bitmask + 4; otherwise only observed subsets
    get ids (from 5 up, in bitmask order) and the rest map to the unknown
    token 4.
    """

    def __init__(self, table_names, observed=None):
        self.table_names = tuple(table_names)
        self.table_count = len(self.table_names)
        self.table_index = {name: i for i, name in enumerate(self.table_names)}
        self.full = observed is None
        if self.full:
            self._ids = None
            self._masks = None
        else:
            masks = sorted(set(observed))
            self._ids = {mask: UNKNOWN + 1 + i for i, mask in enumerate(masks)}
            self._masks = {i: mask for mask, i in self._ids.items()}

    def __len__(self):
        if self.full:
            return 2 ** self.table_count - 1 + len(SPECIALS)
        return len(self._ids) + 1 + len(SPECIALS)

    def __repr__(self):
        mode = "full" if self.full else "observed"
        return "Vocabulary(T={}, {} ids, {})".format(self.table_count, len(self), mode)

    @property
    def embedding_rows(self):
        """
        Rows an embedding table needs to hold every id this vocabulary emits.
        """
        if self.full:
            return 2 ** self.table_count + len(SPECIALS)
        return len(self)

    def bitmask(self, tables):
        mask = 0
        for table in subplan_key(tables):
            if table not in self.table_index:
                raise UnknownReferenceError("unknown table {}".format(table))
            mask |= 1 << self.table_index[table]
        return mask

    def token(self, subplan):
        """
        Returns the token id of a subplan (or table-name tuple, or bitmask).
        """
        mask = subplan if isinstance(subplan, (int, np.integer)) else self.bitmask(subplan)
        if not 0 < mask < 2 ** self.table_count:
            raise UnknownReferenceError("bitmask {} is not a table subset".format(mask))
        if self.full:
            return int(mask) + len(SPECIALS)
        return self._ids.get(int(mask), UNKNOWN)

    def mask_of(self, token):
        """
        Returns the bitmask of a subset token id.
        """
        if self.full:
            if len(SPECIALS) < token < self.embedding_rows:
                return token - len(SPECIALS)
        elif token in self._masks:
            return self._masks[token]
        raise UnknownReferenceError("token {} is not a subset token".format(token))

    def subset_tokens(self):
        if self.full:
            return list(range(len(SPECIALS) + 1, self.embedding_rows))
        return sorted(self._masks)

    def to_dict(self):
        return {
            "table_names": list(self.table_names),
            "observed": None if self.full else sorted(self._ids),
        }

    @classmethod
    def from_dict(cls, mapping):
        return cls(mapping["table_names"], mapping.get("observed"))


def build_vocab(table_count, observed_subsets=(), table_names=None):
    """
    Returns the Vocabulary of a schema with ``table_count`` tables.
    ``observed_subsets`` (bitmasks or table-name tuples) only matter when the
    schema is too large for full enumeration.
    """
    if table_count > MAX_TABLES:
        raise UnsupportedSchemaError(
            "{} tables exceed the supported maximum of {}".format(table_count, MAX_TABLES)
        )
    if table_count < 2:
        raise UnsupportedSchemaError("a vocabulary needs at least 2 tables")
    if table_names is None:
        table_names = ["t{}".format(i) for i in range(table_count)]
    if len(table_names) != table_count:
        raise ValueError("expected {} table names, got {}".format(table_count, len(table_names)))
    if table_count <= FULL_VOCAB_TABLES:
        return Vocabulary(table_names)
    indexer = Vocabulary(table_names)
    masks = [s if isinstance(s, (int, np.integer)) else indexer.bitmask(s) for s in observed_subsets]
    vocab = Vocabulary(table_names, observed=[int(m) for m in masks])
    logger.info("built observed-subset vocabulary with %d ids", len(vocab))
    return vocab


def vocab_for_catalog(catalog, observed_subsets=()):
    return build_vocab(len(catalog.table_names), observed_subsets, catalog.table_names)


def one_hot(subplan, vocab):
    """
    Returns the bit vector with bit i set iff the table with index i takes
    part in ``subplan``.
    """
    bits = np.zeros(vocab.table_count, dtype=np.int64)
    for table in subplan_key(subplan):
        if table not in vocab.table_index:
            raise UnknownReferenceError("unknown table {}".format(table))
        bits[vocab.table_index[table]] = 1
    return bits


@dataclass(frozen=True)
class TokenSequence:
    tokens: Tuple[int, ...]
    attention_mask: Tuple[int, ...]
    true_length: int

    def __len__(self):
        return len(self.tokens)

    def padded(self, max_len):
        """
        Returns the same content padded (or trimmed of padding) to ``max_len``.
        """
        if max_len < self.true_length:
            raise CapacityError(self.true_length, max_len)
        extra = max_len - self.true_length
        return TokenSequence(
            tokens=self.tokens[: self.true_length] + (PAD,) * extra,
            attention_mask=(1,) * self.true_length + (0,) * extra,
            true_length=self.true_length,
        )


def sequence_length(pairs):
    return 2 * sum(p.n for p in pairs) + 3


def encode_sequence(pairs, vocab, max_len):
    """
    Returns [bos, rho subplans, sep, rho_hat subplans, eos, pad...] where each
    side walks join sizes in ascending order and positions in ascending order.
    """
    required = sequence_length(pairs)
    if required > max_len:
        raise CapacityError(required, max_len)
    ordered = sorted(pairs, key=lambda p: p.k)
    tokens = [BOS]
    tokens += [vocab.token(s) for p in ordered for s in p.in_rho_order()]
    tokens.append(SEP)
    tokens += [vocab.token(s) for p in ordered for s in p.in_rho_hat_order()]
    tokens.append(EOS)
    tokens += [PAD] * (max_len - required)
    mask = [1] * required + [0] * (max_len - required)
    return TokenSequence(tuple(tokens), tuple(mask), required)
