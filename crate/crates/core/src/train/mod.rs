//! Reverse-mode training with skip-strength schedules.

mod backward;
mod gradcheck;
mod loss;
mod sgd;

pub use backward::{backward, Gradients, LayerGrad};
pub use gradcheck::{
    gradcheck, gradcheck_with, relative_error, GradCheckReport, ParamRef, FD_STEP, GRADCHECK_TOLERANCE,
    RELATIVE_FLOOR,
};
pub use loss::loss_softmax_ce;
pub use sgd::{
    epoch_order, excise_skips, sgd_epoch, sweep_csv, sweep_t, train_scheduled, EpochRecord, SgdConfig, SweepRow,
    TSchedule, TrainHistory, HISTORY_HEADER, SWEEP_HEADER,
};
