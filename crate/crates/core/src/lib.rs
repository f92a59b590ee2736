//! Body-sensing mood analytics.
//!
//! The crate covers the whole chain from raw smartwatch observations to the
//! three analyses run on them:
//!
//! * [`model`] – domain records, the four-outcome mood grid, cleaning and
//!   feature-row assembly.
//! * [`sampling`] – experience-sampling poll plans and the poll state machine.
//! * [`corr`] – Pearson correlation tables with significance stars.
//! * [`glmm`] – random-intercept logistic regression by adaptive
//!   Gauss–Hermite marginal likelihood.
//! * [`forest`] – CART trees, random forests, Cohen's kappa and the
//!   replicated hold-out protocol with GPS ablation.
//! * [`simulator`] – synthetic cohorts with a known generating model.
//! * [`store`], [`ingest`], [`pipeline`], [`report`], [`maplayer`] –
//!   persistence, file formats and end-to-end report generation.

pub mod corr;
pub mod error;
pub mod forest;
pub mod glmm;
pub mod ingest;
pub mod maplayer;
pub mod model;
pub mod pipeline;
pub mod report;
pub mod sampling;
pub mod simulator;
pub mod special;
pub mod store;

mod seed;

pub use error::{Error, Result};
pub use model::{
    decode_grid_selection, encode_mood_state, BigFive, FeatureRow, Gender, HolidayCalendar,
    MoodResponse, MoodState, Observation, Outcome, Participant, Quadrant, Variable,
};
pub use seed::derive_seed;
