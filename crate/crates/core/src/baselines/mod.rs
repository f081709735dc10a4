//! Clinical comparators: least-squares trend analysis of global thickness
//! and a pointwise event detector with baseline resets.

mod gpa;
mod ols;

pub use gpa::{
    gpa_classify, gpa_events_json, gpa_followups_csv, gpa_label_windows, gpa_label_eye_windows, FollowUp,
    GpaClass, GpaConfig, GpaResult, Mark,
};
pub use ols::{ols_fit, ols_progression, ols_score, OlsFit, OLS_ALPHA};
