"""stockgat: correlation-graph attention models for daily stock movement
prediction, with a deterministic daily-rebalance backtester.

Core layers are pure numpy over a minimal autodiff tape; the pipeline runs
behind a FastAPI service with a thin CLI client.
"""

__version__ = "0.1.0"

from .backtest import (
    BacktestLedger,
    LedgerRecord,
    MetricsReport,
    accuracy,
    compute_metrics,
    max_drawdown,
    run_backtest,
)
from .config import PipelineConfig, validate_config
from .encoder import EncodedSequence, EncoderParams, encode_history, positional_encoding
from .errors import (
    AlignmentError,
    ConfigError,
    CoverageError,
    DimensionError,
    DivergenceError,
    DuplicateError,
    GraphLookupError,
    ParseError,
    StockgatError,
    ValidationError,
)
from .fusion import FusedEmbedding, HgaParams, hga_forward, self_projection
from .graph_attention import RelationMessages, TgaParams, flatten_embeddings, tga_forward
from .graphs import (
    CorrelationMatrix,
    RelationSnapshot,
    TemporalHeteroGraph,
    build_relation_snapshot,
    build_temporal_graph,
    correlation_matrix,
    neighborhood,
    pairwise_correlation,
)
from .market_data import (
    FeatureWindow,
    PriceBar,
    PriceSeries,
    build_feature_window,
    gen_planted_market,
    gen_synthetic_market,
    load_price_csv,
    save_price_csv,
)
from .model import (
    DayLabels,
    ModelDims,
    ModelParams,
    PredictionScores,
    bce_loss,
    forward_day,
    init_model_params,
    label_day,
)
from .training import TrainConfig, gradient_check, load_checkpoint, save_checkpoint, train

__all__ = [name for name in dir() if not name.startswith("_")]
