//! Evaluation protocols and reporting.

mod protocol;
mod report;

pub use protocol::{
    cosine_reference_analysis, id_embedding_requests, run_cloned_eval, run_identification, track_bucket,
    ExperimentContext, GenreScore, Protocol, RunOutput, RunResult, BUCKETS, COSINE_KEYS,
};
pub use report::{
    aggregate, aggregate_csv, box_plot_svg, breakdown, AggregateRow, Breakdown, Summary, MIN_GENRE_TEST_TRACKS,
};
