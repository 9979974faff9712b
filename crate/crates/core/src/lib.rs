//! Lp pooling operators over frames, their inversion by alternating
//! minimization, and lower-Lipschitz certificates of their stability.
//!
//! * [`frames`]: frames, pools, frame bounds, the Hadamard lift
//! * [`pooling`]: `P_p`, rectified `R_p`, modulus, maxout, switches
//! * [`recovery`]: alternating minimization, sphere-constrained solves, the
//!   sign-enumeration oracle
//! * [`init`]: nearest-neighbour initialization
//! * [`certify`]: lower Lipschitz bounds, empirical ratios, injectivity probes
//! * [`dictlearn`]: block OMP and block K-SVD
//! * [`harness`]: sweep experiments producing recovery-angle curves
//! * [`io`]: frame and matrix files

#[cfg(test)]
#[macro_use]
mod test_macros;

pub mod certify;
pub mod dictlearn;
pub mod error;
pub mod frames;
pub mod harness;
pub mod init;
pub mod io;
pub mod linalg;
pub mod pooling;
pub mod recovery;

pub use error::{Error, Result};
pub use frames::Frame;
pub use pooling::{PoolNorm, PoolingSpec};
