//! Wave packet transforms, tent spaces and Hardy spaces for Fourier integral
//! operators, sampled on a periodic grid.
//!
//! The spatial substrate, phase-space storage and the packet transform are
//! generic over the scalar type; the aliases below fix it to `f64`.

pub mod analysis;
pub mod config;
pub mod error;
pub mod family;
pub mod field;
pub mod fio;
pub mod io;

pub mod metric;
pub mod packets;
pub mod tent;
pub mod transform;

pub use error::{Error, Result};

/// Scalar types the generic parts of the library run on.
pub trait Real:
    num_traits::Float
    + num_traits::FloatConst
    + num_traits::FromPrimitive
    + rustfft::FftNum
    + std::fmt::Debug
    + Send
    + Sync
    + 'static
{
}

impl Real for f32 {}
impl Real for f64 {}

pub type SampledField = field::SampledField<f64>;
pub type SpectralField = field::SpectralField<f64>;
pub type PhaseSpaceField = tent::PhaseSpaceField<f64>;
pub type TransformPlan = transform::TransformPlan<f64>;

pub use field::GridSpec;
pub use metric::{CospherePoint, SigmaGrid, SphereGrid};
pub use packets::{Bump, ProfilePair};

/// Library version embedded in reports.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
