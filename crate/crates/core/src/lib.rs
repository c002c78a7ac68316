//! Hypersurfaces of hyperbolic space, their duals in the space of
//! horospheres, and the horospherical metric `I* = I + 2II + III`.

pub mod admissibility;
pub mod cli;
pub mod duality;
pub mod error;
pub mod factor;
pub mod horospace;
pub mod hypersurface;
pub mod isometry;
pub mod lorentz;
pub mod numeric;
pub mod sphere;

pub use error::{GeomError, Result};
