//! Classical simulator for pivot-switching linearizations of polynomial ODE systems.
//!
//! A polynomial vector field `dx/dt = Σ_m F_m x^{⊗m}` is lifted into a linear system over
//! tensor-power blocks and integrated with forward Euler. Three liftings are provided:
//!
//! * conventional truncated Carleman linearization around the origin,
//! * the PS method: the tangent plane at a pivot state `s`, giving a lifted state `(1, x)`,
//! * the PSC method: an order-`P` expansion around `s` followed by Carleman truncation.
//!
//! The pivot is moved to the current state estimate according to a [`simulate::SwitchPolicy`],
//! which keeps the lifted dynamics valid over arbitrarily long horizons, while the plain Carleman
//! lifting blows up after a finite evolution time.
//!
//! ```
//! use pivotsim::{linearize, models};
//!
//! let logistic = models::build_logistic();
//! let sys = linearize::build_carleman(&logistic.ode, 3).unwrap();
//! let dense = sys.op.to_dense().unwrap();
//! assert_eq!(dense[[1, 2]], -1.0);
//! assert_eq!(dense[[3, 3]], 3.0);
//! ```

pub mod cli;
pub mod error;
pub mod linearize;
pub mod models;
pub mod poly;
pub mod simulate;
pub mod tensor;

pub use error::{Error, Result};
pub use linearize::{Basis, LiftedSystem, Method};
pub use models::NamedModel;
pub use poly::{PivotState, PolyOde, PolyTerm};
pub use simulate::{SimConfig, SwitchPolicy, Trajectory};
pub use tensor::{BlockOperator, CoeffBlock, Factor, KronTerm, TensorIndex};
