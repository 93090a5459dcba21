//! Beat, downbeat, boundary and labeling scores.

mod events;
mod report;
mod structure;

pub use events::{continuity, event_f1, match_count, metrical_variations, Prf, CONTINUITY_TOLERANCE};
pub use report::{
    aggregate, evaluate_track, render_table, AnnotatedBeat, Annotation, EvalOptions, MetricsReport, Task,
    TABLE_COLUMNS,
};
pub use structure::{boundary_hit_rate, entropy_scores, pairwise_f, segment_boundaries, EntropyScores};
