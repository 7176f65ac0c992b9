//! Locality and entanglement instruments: layer deviation, next-token divergence,
//! non-target drift and cell-level attention maps, with CSV/SVG export.

mod attention;
mod deviation;
mod drift;
mod export;

pub use attention::{cell_attention_map, cell_token_spans, CellAttentionMap};
pub use deviation::{activation_deviation, next_token_jsd, LayerDeviationProfile, MIN_BASE_NORM};
pub use drift::{non_target_drift, DriftReport};
pub use export::{attention_svg, deviation_svg, line_chart_svg, write_attention_csv, write_deviation_csv};
