//! Extended Kalman filtering with exponential-family observations and fading
//! memory, the online natural gradient over trajectories of a dynamical
//! system, and tooling to check numerically that the two coincide.
//!
//! The discrete-time pieces live in [`ekf`] and [`natgrad`], their
//! continuous-time counterparts in [`bucy`], and [`equivalence`] maps the
//! fading rate `α` of the filter to the learning rate `η` of the gradient and
//! compares whole runs.
//!
//! ```
//! use kalnat::prelude::*;
//! use nalgebra::DVector;
//!
//! let model = builtin("linear2d")?.discrete()?;
//! let family = default_family("linear2d")?;
//! let scenario = generate_scenario(&model, &family, 20, 7)?;
//! let s0 = DVector::from_row_slice(&[0.0, 0.0]);
//! let p0 = SymMatrix::identity(2);
//! let cmp = check_discrete(&scenario, &s0, &p0, &DiscreteCheck::new(Schedule::Constant(0.1)))?;
//! assert!(cmp.report.passed);
//! # Ok::<(), kalnat::Error>(())
//! ```

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bucy;
pub mod ekf;
pub mod equivalence;
pub mod error;
pub mod expfam;
pub mod model;
pub mod natgrad;
pub mod numerics;
pub mod rng;
pub mod schedule;

pub use error::{Error, Result};

pub mod prelude {
    pub use crate::bucy::{
        integrate, ContinuousTrace, FilterKind, InitialCondition, IntegratorConfig,
    };
    pub use crate::ekf::{EkfConfig, FilterTrace, GaussianBelief, ProcessNoise, UpdateForm};
    pub use crate::equivalence::{
        check_continuous, check_discrete, map_alpha_to_eta, map_eta_to_alpha, ComparisonReport,
        ContinuousCheck, DiscreteCheck, HyperMap, Mutation,
    };
    pub use crate::error::{Error, Result};
    pub use crate::expfam::{Observation, ObservationFamily};
    pub use crate::model::{
        builtin, default_family, generate_scenario, Builtin, ContinuousModel, DynamicalModel,
        Scenario, BUILTIN_NAMES,
    };
    pub use crate::natgrad::{FisherMode, GradTrace, NatGradConfig, NatGradState};
    pub use crate::numerics::{JacobianSpec, SymMatrix};
    pub use crate::schedule::{Schedule, TimeSchedule};
}
