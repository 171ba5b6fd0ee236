//! Similar-data-point search driven by interest-focused summaries.
//!
//! Points (tabular rows or image manifest entries) are summarized into a few
//! tags under a human-authored interest, the summaries are embedded, and the
//! resulting unit vectors are compared by cosine similarity. Experts review
//! each round, refine the interest, and label pairs; the labels calibrate the
//! similarity threshold.
//!
//! Module map:
//! - [`ingest`]: CSV / image manifest loading and the synthetic AML generator
//! - [`prompting`]: interest specs and prompt rendering
//! - [`provider`]: stub, replay and live summarizer/embedder backends
//! - [`simcore`]: cosine, exact kNN, classification and calibration
//! - [`session`]: the review state machine
//! - [`store`]: on-disk project format
//! - [`pipeline`]: project-level operations used by the CLI and service

pub mod ingest;
pub mod pipeline;
pub mod prompting;
pub mod provider;
pub mod session;
pub mod simcore;
pub mod store;
