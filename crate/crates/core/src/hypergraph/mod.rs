//! Industry hypergraph: soft incidence, lead-lag aggregation between
//! industries, and cross-scale fusion.

mod construct;
mod fusion;
mod leadlag;

pub use construct::{build_hyperedges, edge_to_node, Hyperedges};
pub use fusion::{
    fuse_scales, fused_edge_to_node, mahalanobis_affinity, nearest_upsample, upsample_edges, Affinity, DEGREE_FLOOR,
    DISTANCE_EPS,
};
pub use leadlag::{edge_attention_mass, lead_lag_aggregate, sliding_patches, LeadLagOutput, LeadLagParams};
