//! Health-event extraction.

pub mod llm;
pub mod qa_nli;
pub mod templates;
