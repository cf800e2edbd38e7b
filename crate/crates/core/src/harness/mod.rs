//! Experiment harness: data ingestion, splits, oracles, the active-learning
//! loop, metrics, performance profiles and plots.

pub mod config;
pub mod dataset;
pub mod dolan_more;
pub mod metrics;
pub mod oracle;
pub mod run;
pub mod split;
pub mod svg;

pub use config::{load_config, parse_config, ExperimentConfig};
pub use dataset::{load_csv, ColumnStats, CsvOptions, Dataset};
pub use dolan_more::{dolan_more, DolanMoreTable};
pub use metrics::{metrics, Metrics};
pub use oracle::{make_synthetic_oracle, Oracle, SyntheticFunction};
pub use run::{run_active_learning, RunRecord, RunStatus};
pub use split::{split, Splits};
