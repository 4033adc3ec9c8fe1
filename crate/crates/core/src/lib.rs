//! Functional-unit segmentation, role annotation, storyline recovery and
//! performance analytics for short video ads.

pub mod ingest;
pub mod segmentation;
pub mod taxonomy;
pub mod annotator;
pub mod storyline;
pub mod analytics;
pub mod config;
pub mod store;
pub mod pipeline;
