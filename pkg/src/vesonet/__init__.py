"""Social-aware vehicular content caching toolkit.

A road-network model with detour-budgeted provider-maximizing path planning,
content-graph skip-gram embeddings with threshold recommendation, a
deliverability-driven DQN for provider navigation, ICN-style dissemination,
and a deterministic discrete-time simulator whose metrics are derived from an
auditable event log.
"""

from .counters import OpCounter
from .road_net import (
    GraphFormatError,
    Intersection,
    InvalidPathError,
    NoPathError,
    Path,
    RoadNetwork,
    RoadSegment,
    SegmentOccupancy,
    SignalCycle,
    UnknownSegmentError,
    concat_paths,
    providers_on_path,
    shortest_path,
    travel_time,
)
from .social_path import (
    DetourBudget,
    SearchState,
    VisitRecord,
    alternative_social_path,
    brute_force_social_path,
    shortest_social_path,
    social_graph_pruning,
)
from .content_embed import (
    ContentGraph,
    ContentItem,
    EmbedParams,
    EmbeddingModel,
    SimilarityThreshold,
    ZeroVectorError,
    build_content_graph,
    cosine_similarity,
    neighborhood,
    recommend_items,
    softmax_prob,
    train_embeddings,
    vehicle_matrix,
)
from .provider_rl import (
    DQNAgent,
    DQNConfig,
    DeadEndError,
    Deliverability,
    QNetwork,
    ReplayBuffer,
    RLState,
    Transition,
    content_deliverability,
    epsilon_at,
    make_state,
    q_backup,
    reward,
    select_action,
    td_loss,
)
from .dissemination import (
    ContentMessage,
    ContentPlane,
    InterestPacket,
    MetaDataIndex,
    ProviderCache,
    transfer_step,
)
from .sim_engine import (
    Accident,
    MetricsReport,
    Scenario,
    World,
    apply_axis,
    compute_report,
    run,
    sweep,
)
from .audit import AuditResult, audit_events, audit_rows

__version__ = "0.1.0"
