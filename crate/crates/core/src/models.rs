//! Benchmark models: the logistic equation and periodic 1D discretizations of KPP-Fisher and
//! a cubic phase-field equation (grid spacing `Δz² = 1`).

use crate::error::{Error, Result};
use crate::poly::{PolyOde, PolyTerm};

/// States of all built-in models stay in `[-1, 1]`. Transient overshoots of fixed-pivot PSC runs
/// reach about 3.5, so only `‖x‖∞ > 5` is treated as blow-up of a lifted approximation.
pub const BUILTIN_DIVERGENCE_BOUND: f64 = 5.0;

/// Phase-field initial profile on 8 sites.
pub const PHASE_FIELD_X0: [f64; 8] = [-0.90, -0.56, 0.56, 0.90, 0.90, 0.56, -0.56, -0.90];

#[derive(Clone, Debug, PartialEq)]
pub struct NamedModel {
    pub label: String,
    pub ode: PolyOde,
    pub default_x0: Vec<f64>,
    /// `‖x‖∞` bound used as the divergence threshold for runs of this model.
    pub divergence_bound: f64,
}

/// `dx/dt = x(1 − x)`, starting from `x0 = 0.1`.
pub fn build_logistic() -> NamedModel {
    let ode = PolyOde::new(
        1,
        2,
        [
            PolyTerm::new(0, vec![0], 1.0),
            PolyTerm::new(0, vec![0, 0], -1.0),
        ],
    )
    .expect("logistic terms are valid");
    NamedModel {
        label: "logistic".into(),
        ode,
        default_x0: vec![0.1],
        divergence_bound: BUILTIN_DIVERGENCE_BOUND,
    }
}

/// Second-order central difference `u_{i-1} − 2u_i + u_{i+1}` with periodic wraparound.
fn periodic_laplacian(n: usize, i: usize) -> [PolyTerm; 3] {
    [
        PolyTerm::new(i, vec![(i + n - 1) % n], 1.0),
        PolyTerm::new(i, vec![(i + 1) % n], 1.0),
        PolyTerm::new(i, vec![i], -2.0),
    ]
}

fn check_sites(n: usize) -> Result<()> {
    if n < 3 {
        return Err(Error::input(format!(
            "periodic lattice needs at least 3 sites, got {n}"
        )));
    }
    Ok(())
}

/// `du_i/dt = u_{i-1} − 2u_i + u_{i+1} + u_i(1 − u_i)` on a ring of `n` sites.
///
/// The default initial state is 0.9 on sites 3 and 4 (0-based) and 0.1 elsewhere.
pub fn build_kpp(n: usize) -> Result<NamedModel> {
    check_sites(n)?;
    let terms = (0..n).flat_map(|i| {
        periodic_laplacian(n, i).into_iter().chain([
            PolyTerm::new(i, vec![i], 1.0),
            PolyTerm::new(i, vec![i, i], -1.0),
        ])
    });
    let ode = PolyOde::new(n, 2, terms)?;
    let default_x0 = (0..n)
        .map(|i| if i == 3 || i == 4 { 0.9 } else { 0.1 })
        .collect();
    Ok(NamedModel {
        label: format!("kpp-n{n}"),
        ode,
        default_x0,
        divergence_bound: BUILTIN_DIVERGENCE_BOUND,
    })
}

/// `dφ_i/dt = φ_{i-1} − 2φ_i + φ_{i+1} − (φ_i − 1)(φ_i + β)(φ_i + 1)` on a ring of `n` sites.
///
/// The reaction has stable roots ±1 and an unstable root at `−β`; for `β < 0` the `−1` phase is
/// energetically preferred and invades the lattice.
pub fn phase_field_ode(n: usize, beta: f64) -> Result<PolyOde> {
    check_sites(n)?;
    if !beta.is_finite() {
        return Err(Error::input("beta must be finite"));
    }
    // −(φ − 1)(φ + β)(φ + 1) = −φ³ − βφ² + φ + β
    let terms = (0..n).flat_map(|i| {
        periodic_laplacian(n, i).into_iter().chain([
            PolyTerm::new(i, vec![], beta),
            PolyTerm::new(i, vec![i], 1.0),
            PolyTerm::new(i, vec![i, i], -beta),
            PolyTerm::new(i, vec![i, i, i], -1.0),
        ])
    });
    PolyOde::new(n, 3, terms)
}

/// Phase-field model with its 8-site initial profile; other lattice sizes need an explicit
/// initial state (see [`phase_field_ode`]).
pub fn build_phase_field(n: usize, beta: f64) -> Result<NamedModel> {
    let ode = phase_field_ode(n, beta)?;
    if n != PHASE_FIELD_X0.len() {
        return Err(Error::input(format!(
            "the phase-field initial profile is defined on {} sites, got n = {n}",
            PHASE_FIELD_X0.len()
        )));
    }
    Ok(NamedModel {
        label: format!("phase-field-n{n}"),
        ode,
        default_x0: PHASE_FIELD_X0.to_vec(),
        divergence_bound: BUILTIN_DIVERGENCE_BOUND,
    })
}

/// Closed-form logistic solution `x0·eᵗ / (1 − x0 + x0·eᵗ)`.
pub fn logistic_analytic(x0: f64, t: f64) -> f64 {
    let e = t.exp();
    x0 * e / (1.0 - x0 + x0 * e)
}
