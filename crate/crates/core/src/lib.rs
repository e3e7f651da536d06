pub mod error;
pub mod eval;
pub mod geo;
pub mod morphology;
pub mod overlay;
pub mod patching;
pub mod raster;
pub mod raster_io;
pub mod scalar;
pub mod segment;
pub mod split;
pub mod synth;
pub mod tiles;
pub mod vectorize;

pub use error::{Error, Result};

/// Exact rational type for metric computations without rounding.
pub type ExactRatio = num_rational::BigRational;

pub type GeoTransform64 = geo::GeoTransform<f64>;
pub type GeoTransform32 = geo::GeoTransform<f32>;
pub type Ring64 = vectorize::Ring<f64>;
pub type Ring32 = vectorize::Ring<f32>;
pub type Footprint64 = vectorize::Footprint<f64>;
pub type Footprint32 = vectorize::Footprint<f32>;
pub type FootprintLayer64 = vectorize::FootprintLayer<f64>;
pub type FootprintLayer32 = vectorize::FootprintLayer<f32>;
pub type CandidateSite64 = overlay::CandidateSite<f64>;
pub type CandidateSite32 = overlay::CandidateSite<f32>;
