//! Treatment effect estimation for observational tables that carry raw text.
//!
//! Text can enter an analysis three ways: vectorized as TF-IDF controls
//! ([`text_vectorizer`]), autocoded into treatment/outcome/covariate columns
//! ([`autocoder`]), or learned end-to-end by a small per-treatment-head
//! network ([`textnet`]). Effects are estimated by S-, T-, X-, and R-Learners
//! ([`metalearners`]) over pluggable base learners ([`learners`]); the
//! [`simulator`] produces text-confounded data with a known ground truth.

pub mod autocoder;
pub mod benchmark;
pub mod error;
pub mod estimator;
pub mod learners;
pub mod metalearners;
pub mod simulator;
pub mod tabular;
pub mod textnet;
pub mod text_vectorizer;

pub use error::{Error, Result};
