//! Curation toolchain for bilingual English/Darija instruction corpora.

pub mod corpus;
pub mod ingest;
pub mod lang_filter;
pub mod protect;
pub mod token_gate;
pub mod translate;
pub mod mixer;
pub mod metrics;
pub mod pipeline;
pub mod cli;
pub mod footprint;
