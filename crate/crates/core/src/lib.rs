//! Binary regression when the observed labels pass through a known
//! class-conditional noise channel, including the positive-unlabeled special
//! case.
//!
//! The crate provides two estimation routes built on the same design matrix:
//! a likelihood route that models the noisy label directly through a
//! composite link, and a convex surrogate route that first relabels the
//! responses to be conditionally unbiased. Both come with proximal-gradient
//! solvers for penalized and constrained fits, Fisher-information comparisons
//! between the routes, de-biased estimates with standard errors and
//! confidence intervals, and a deterministic Monte-Carlo study harness.

pub mod error;
pub mod glm;
pub mod inference;
pub mod loss;
pub mod optim;
pub mod simgen;
pub mod study;

pub use error::{Error, Result};
pub use glm::{DerivativeBundle, NoiseModel};
pub use inference::{DebiasReport, InfoPair, PsiSpec, ThetaDiag};
pub use simgen::{Ar1Cov, Design, PuSpec};
pub use study::{LambdaRule, SolverOverrides, StudyKind, StudyResult, StudyRow, StudySpec};
pub use loss::{Dataset, HessianTerms, LossEval, LossKind};
pub use optim::{FitConfig, FitResult, Init, Termination};
