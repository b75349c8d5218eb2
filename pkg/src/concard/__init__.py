"""Containment-rate driven cardinality estimation for conjunctive queries.

The package bundles a tiny in-memory relational store with an exact
evaluator, a featurizer turning queries into sets of fixed-width vectors,
a set-pooling network that scores query pairs by containment rate, and the
conversions that turn rate estimates into cardinality estimates through a
pool of previously executed queries.
"""

from .exceptions import (
    ConcardError,
    ConfigError,
    ContainmentDomainError,
    DataError,
    FeaturizationError,
    GenerationError,
    NumericError,
    QueryError,
    SchemaError,
    ShapeError,
)
from .querymodel import OPS, Query, canonicalize, from_key, intersect, make_query, same_from, to_sql
from .relstore import (
    ColumnDef,
    Database,
    Schema,
    TableDef,
    build_database,
    cardinality,
    execute,
    load_database,
    load_schema,
    save_schema,
    schema_hash,
    true_containment_rate,
    validate_query,
)
from .featurizer import FeatureSpace, build_feature_space, featurize
from .ratenet import (
    NetParams,
    TrainConfig,
    TrainReport,
    expected_param_count,
    forward,
    init_params,
    load_checkpoint,
    predict,
    qerror,
    save_checkpoint,
    train,
    write_train_report_csv,
)
from .qgen import (
    GenConfig,
    LabeledPair,
    LabeledQuery,
    Workload,
    generate_workload,
    load_workload,
    save_workload,
)
from .estimators import (
    ExactCardinality,
    IndependenceCardinality,
    QueryPool,
    build_pool,
    cnt2crd_single,
    crd2cnt,
    estimate_cardinality,
    final_mean,
    final_median,
    final_trimmed_mean,
    improved_estimator,
    load_pool,
    pool_estimator,
    save_pool,
    stratify_records,
)
from .evaluation import (
    CardEvalReport,
    QErrorStats,
    RateEvalReport,
    card_qerror,
    eval_cardinality,
    eval_containment,
    percentile_nearest_rank,
    rate_qerror,
    summarize_qerrors,
    write_samples_csv,
    write_stats_csv,
)

__version__ = "0.1.0"
