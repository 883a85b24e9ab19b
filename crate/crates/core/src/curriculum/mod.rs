//! Feedback-driven knowledge update: ratio allocation across difficulty
//! buckets and teacher-generated new questions.

mod allocate;
mod generate;

pub use allocate::{allocate, apportion, Allocation, AllocationError, RatioPlan, DEFAULT_TOTAL_NEW};
pub use generate::{
    draw_parent, parse_question_reply, slots, BucketedParents, CurriculumReport, GenerationContext, GenerationError,
    GenerationOutcome, Slot, SlotFailure, MIN_QUESTION_CHARS, NEW_QUESTIONS_FILE, REGENERATION_ROUNDS, REPORT_FILE,
};
