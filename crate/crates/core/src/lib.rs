//! Simulation and analysis toolkit for detection-loophole-free CH Bell tests:
//! quantum predictions under lossy detection, local-hidden-variable
//! adversaries, a pulsed-trial Monte-Carlo engine, coincidence counting,
//! CH estimators with error analysis, state/angle optimization and
//! device-independent randomness accounting.

pub mod coincidence;
pub mod counts;
pub mod dire;
pub mod error;
pub mod lhv;
pub mod optimizer;
pub mod quantum;
pub mod settings;
pub mod sim;
pub mod stats;
pub mod timetag;

pub use counts::{BlockRecord, Count, CountsRow, CountsTable};
pub use error::{Error, Result};
pub use quantum::{DetectionModel, ForwardModel, PolarizationState};
pub use settings::{MeasurementSettings, SettingPair};
pub use stats::{BellResult, SinglesEstimator};
pub use timetag::{Channel, TimetagStream};
