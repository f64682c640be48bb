pub mod equilibrium1;
pub mod equilibrium2;
pub mod error;
pub mod lightfield;
pub mod model1;
pub mod model2;
pub mod numerics;
pub mod par;
pub mod params;
pub mod spatial;

pub use error::{Error, Result};
pub use lightfield::LightProfile;
pub use par::Exec;
pub use params::ModelParams;
