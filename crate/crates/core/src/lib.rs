//! Self-paced knowledge distillation for code models: a three-stage loop of
//! knowledge delivery, multi-view feedback and feedback-based knowledge
//! update, driven against pluggable teacher, student and scorer backends.

pub mod corpus;
pub mod curriculum;
pub mod eval;
pub mod feedback;
pub mod gateway;
pub mod lang;
pub mod objectives;
pub mod pipeline;
pub mod prompts;
pub mod rng;
pub mod sandbox;
