//! Event-based disease surveillance over news article metadata.
//!
//! Articles are ingested and filtered, classified for relevance, translated
//! to English, gated on disease and location mentions, turned into health
//! events by one of two extractors, standardized against curated tables and
//! finally deduplicated per day into clusters for expert review.

pub mod clustering;
pub mod config;
pub mod extract;
pub mod fake;
pub mod gazetteer;
pub mod ingestion;
pub mod mapping;
pub mod metrics;
pub mod model;
pub mod numbers;
pub mod pipeline;
pub mod provider;
pub mod relevance;
pub mod store;
pub mod text;
pub mod translation;
pub mod web;

pub use model::*;
