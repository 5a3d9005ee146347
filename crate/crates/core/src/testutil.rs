//! Fixtures shared by unit tests.

use std::sync::OnceLock;

use crate::newton::{refine, Mode, NewtonConfig};
use crate::seeds::{lyapunov_po_target, seed_from_po, PeriodicOrbit, PoConfig, PoFamily, PoTarget};
use crate::symplectic_model::Rtbp;
use crate::torus_rep::TorusState;

pub const RHO: f64 = 0.031865;

pub fn vertical_po() -> &'static PeriodicOrbit {
    static PO: OnceLock<PeriodicOrbit> = OnceLock::new();
    PO.get_or_init(|| {
        lyapunov_po_target(&Rtbp::earth_moon(), PoFamily::Vertical, PoTarget::Rotation(RHO), &PoConfig::default()).unwrap()
    })
}

pub fn seed() -> TorusState {
    seed_from_po(&Rtbp::earth_moon(), vertical_po(), 4, 32, 1e-3, &Default::default()).unwrap()
}

/// Small torus around the vertical orbit, converged to `err < 1e-11`.
pub fn converged() -> &'static TorusState {
    static T: OnceLock<TorusState> = OnceLock::new();
    T.get_or_init(|| {
        let cfg = NewtonConfig { eps: 1e-11, eps_w: 1e-9, ..Default::default() };
        refine(&Rtbp::earth_moon(), &seed(), &cfg, Mode::FixedCalabi, None).unwrap().state
    })
}
