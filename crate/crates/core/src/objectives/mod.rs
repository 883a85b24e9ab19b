//! Training objectives and export of training sets for external fine-tuning.

mod export;
mod loss;

pub use export::{
    export_training_sets, CslRecord, ExportError, FclRecord, TrainingExport, TrainingManifest, CSL_FILE,
    FCL_FILE, MANIFEST_FILE,
};
pub use loss::{
    csl_loss, fcl_gradient_from_margin, fcl_loss, fcl_loss_from_margin, fcl_margin_gradient,
    neg_log_sigmoid, sigmoid, LossError, PreferencePair, DEFAULT_BETA,
};
