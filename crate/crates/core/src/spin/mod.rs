//! Spin-chain basics: basis convention, charge sectors, states and reduced
//! density matrices.

pub mod basis;
pub mod density;
pub mod state;

pub use basis::{charge_sectors, ChargeSector, ChargeSectorIndex, SiteSet};
pub use density::{
    cross_partial_trace, exact_ea, partial_trace, purity, symmetrize, SubsystemDensity,
};
pub use state::PureState;
