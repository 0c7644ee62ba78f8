//! Signal model: dimensions, steering atoms, scenes, the lifted unknown and
//! the measurement operator.
//!
//! Atoms are pure exponentials in the transform domain. For each dimension
//! the factor is `exp(sign * i 2 pi n t)` with `sign = +1` for delay and `-1`
//! otherwise, and the atom is the Kronecker product over
//! `(aoa, aod, delay, doppler)`, outermost first. With `U = sum alpha h a^H`
//! this makes every observation an ordinary sum of physical phases
//! `exp(i 2 pi (r phi + s theta - j tau + p v))`.

mod dims;
mod ensemble;
mod scene;
mod simulate;
mod steering;

pub use dims::{Dim, DimKind, DimensionSpec};
pub use ensemble::{build_measurement_ensemble, inner, MeasurementEnsemble};
pub use scene::{
    build_lifted, min_separation, random_targets, LiftedMatrix, SceneConfig, TargetParams, TargetScene,
    MAX_SCENE_ATTEMPTS,
};
pub use simulate::{simulate_time_domain, TransmitSignal};
pub use steering::{dim_factor, dirichlet_kernel, kron, steering_factors, steering_vector, tau_distance, wrap_distance};
