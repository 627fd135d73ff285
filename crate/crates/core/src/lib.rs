//! Entropy-gated branching (EGB) search for step-wise reasoning.
//!
//! A search keeps `K` beams. Each step, every beam generates one reasoning
//! step while the per-token entropy of the model's next-token distribution is
//! monitored. Beams that stay at or below the threshold `tau` contribute one
//! candidate; a beam that exceeds it is rolled back to the first high-entropy
//! token and branched `W` ways from there. Candidates are deduplicated,
//! scored by a process-reward verifier and the top `K` survive.
//!
//! `tau = 0` recovers beam search and `tau = inf` recovers independent
//! sampling (self-consistency).

pub mod answer;
pub mod arith;
pub mod exec;
pub mod harness;
pub mod http;
pub mod lm;
pub mod prob;
pub mod search;
pub mod seed;
pub mod trace;
pub mod verify;

pub use exec::Executor;
pub use lm::{ModelContext, SequenceModel, StepBoundaryRule};
pub use prob::{TokenDistribution, UncertaintyReading};
pub use search::{run_search, Method, SearchConfig, SearchResult};
pub use verify::{Aggregation, Verifier};
