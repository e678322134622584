//! Item availability and per-user recourse audits.

pub mod items;
pub mod users;

pub use items::{
    aligned_delta, delta_block, exact_top1_available, gram_constraint_report, item_audit, popularity_stats,
    sampled_availability, sampled_available_items, summarize_items, Cdf, ItemAuditOptions, ItemAuditRecord,
    ItemAuditSummary, PopularityStats,
};
pub use users::{
    alignment_check, b_dagger_norm, coldstart_eval, difficulty_bound, difficulty_l1, exact_recourse_top1, reaction_set,
    recourse_sufficient, user_recourse, Averaging, ColdStartEval, DifficultyBoundReport, DifficultyRecord,
    ReactionPolicy, RecourseMode, RecourseRecord, SufficientScreen,
};
