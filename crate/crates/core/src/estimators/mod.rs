//! Fitting of the calibration curve and of step settling, calibration
//! inversion, and package classification.

mod calibration;
mod classify;
pub mod lm;
mod settling;

pub use calibration::{
    fit_calibration, fit_calibration_with, invert_calibration, CalibrationFit, CalibrationOptions,
};
pub use classify::{classify_package, Classification, ClassifyConfig, PackageClass};
pub use settling::{
    fit_settling, fit_settling_with, select_model_order, select_model_order_with, SettlingFit,
    SettlingOptions, StepRecord, DEGENERATE_RATIO,
};
