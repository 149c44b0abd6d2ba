//! Banked eDRAM KV cache: bit-plane layout, score registers, the
//! two-dimensional refresh controller and retention-failure injection.

mod cache;
mod classify;
mod flips;
mod refresh;
mod retention;

pub use cache::{BankGroup, BankLayout, EdramCache, EdramConfig, EdramStats, FlipRecord, REFRESH_J_PER_BYTE};
pub use classify::{classify, classify_all, input_vector_score, threshold, ThresholdPolicy};
pub use flips::{flip_plane_bits, inject_flips, sample_positions};
pub use refresh::{
    group_index, BitPlane, ImportanceClass, RefreshController, RefreshEvent, RefreshGroup, RefreshPolicy, TickOutcome,
    GROUP_ORDER,
};
pub use retention::{anchors, RetentionModel};
