"""QR decomposition of acyclic join results without materializing the join."""

from .core import OutAccumulator, compute_r0, figaro
from .counts import CountTables, brute_force_counts, compute_counts
from .errors import (
    CountOverflowError,
    EmptyJoinError,
    FigaroError,
    IntegrityError,
    JoinSizeError,
    JoinTreeError,
    ParseError,
    RankError,
    SchemaError,
)
from .givens import (
    generalized_head,
    generalized_head_and_tail,
    generalized_tail,
    givens_coeffs,
    head,
    head_and_tail,
    tail,
)
from .pipeline import FigaroResult, figaro_qr
from .postprocess import (
    TriangularFactor,
    householder_oracle,
    normalize_signs,
    postprocess,
    recover_q,
    thin_merge,
    triangularize_block,
)
from .relational import (
    JoinTree,
    Relation,
    load_relation,
    materialize_join,
    parse_config,
    parse_tree_term,
    semi_join_reduce,
    validate_join_tree,
)

__all__ = [name for name in dir() if not name.startswith("_")]
