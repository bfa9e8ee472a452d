//! Command line, experiment configs, run orchestration and figure data.

pub mod cli;
pub mod config;
mod plot;
mod run;

pub use config::{
    DataSpec, ExperimentConfig, MetaSection, MetricsSection, ModelSection, RunSection, SdeSection,
};
pub use plot::{plot_data, svg_chart, svg_heatmap, PlotFiles};
pub use run::{
    load_data, meta_experiment, parse_prune_events, prune_report, render_prune_events,
    render_prune_report, run_dir, run_method, sde_experiment, train_experiment, LayerPruneReport,
    LoadedData, MetaReport, RunSummary, SdeOutcome, FAILURE_MARKER,
};
