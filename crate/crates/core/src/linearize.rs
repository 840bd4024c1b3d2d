//! Linear lifted systems for polynomial ODEs.
//!
//! All three constructions share one block rule. For a field with coefficients `F_m`, the
//! derivative of the order-`k` block `x^{⊗k}` is
//!
//! ```text
//! d/dt x^{⊗k} = Σ_m Σ_{v=0}^{k-1} (I^{⊗v} ⊗ F_m ⊗ I^{⊗(k-1-v)}) x^{⊗(k-1+m)}
//! ```
//!
//! so block `(k, k-1+m)` carries the positional sum of `F_m`, and truncation at order `K` drops
//! every block whose input index exceeds `K`.
//!
//! * Carleman applies the rule to `F_m` directly on `(1, x, …, x^{⊗K})`.
//! * PSC first re-centers the field at the pivot (`f(s+δ) = Σ H_m δ^{⊗m}`) and applies the rule to
//!   `H_m` on `(1, δ, …, δ^{⊗P})`, `δ = x − s`. Conjugating with the binomial lift transform gives
//!   the same system in monomial coordinates.
//! * PS is the tangent plane at the pivot, `dx/dt = (G_0 − G_1 s) + G_1 x`, on `(1, x)`.

use std::fmt;
use std::str::FromStr;

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::poly::{PivotState, PolyOde};
use crate::tensor::{
    binomial_lift_transform, kron_power, lifted_dims, positional_sum_terms, BlockOperator,
    CoeffBlock, Factor, KronTerm, DEFAULT_DENSE_CAP,
};

/// Allowed drift of the constant block before [`read_x`] reports an inconsistent state.
pub const CONSTANT_BLOCK_TOLERANCE: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Method {
    Carleman,
    Ps,
    Psc,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Carleman => "carleman",
            Method::Ps => "ps",
            Method::Psc => "psc",
        })
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "carleman" => Ok(Method::Carleman),
            "ps" => Ok(Method::Ps),
            "psc" => Ok(Method::Psc),
            other => Err(Error::input(format!("unknown method '{other}'"))),
        }
    }
}

/// Coordinates of the lifted state: powers of `x` or powers of `x − s`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Basis {
    Monomial,
    PivotCentered,
}

impl FromStr for Basis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "monomial" => Ok(Basis::Monomial),
            "centered" | "pivot-centered" => Ok(Basis::PivotCentered),
            other => Err(Error::input(format!("unknown basis '{other}'"))),
        }
    }
}

#[derive(Clone, Debug)]
pub struct LiftedSystem {
    pub method: Method,
    pub pivot: PivotState,
    /// `K` for Carleman, 1 for PS, `P` for PSC.
    pub order: usize,
    pub basis: Basis,
    pub op: BlockOperator,
    pub n: usize,
}

impl LiftedSystem {
    /// Total length of the lifted state, `Σ_{k=0}^{order} n^k`.
    pub fn dim(&self) -> usize {
        self.op.total_in()
    }

    /// Dense generator expressed in `basis`, converting with the binomial lift transform when it
    /// differs from the system's native basis.
    pub fn dense_in_basis(&self, basis: Basis) -> Result<Array2<f64>> {
        self.dense_in_basis_capped(basis, DEFAULT_DENSE_CAP)
    }

    pub fn dense_in_basis_capped(&self, basis: Basis, cap: usize) -> Result<Array2<f64>> {
        let native = self.op.to_dense_capped(cap)?;
        if basis == self.basis || self.pivot.is_origin() {
            return Ok(native);
        }
        let s = self.pivot.as_slice();
        let neg: Vec<f64> = s.iter().map(|v| -v).collect();
        let to_centered = binomial_lift_transform(s, self.order)?.to_dense_capped(cap)?;
        let to_monomial = binomial_lift_transform(&neg, self.order)?.to_dense_capped(cap)?;
        Ok(match basis {
            // A_m = T⁻¹ A_c T
            Basis::Monomial => to_monomial.dot(&native).dot(&to_centered),
            Basis::PivotCentered => to_centered.dot(&native).dot(&to_monomial),
        })
    }
}

/// Truncated Carleman generator of `ode` on `(1, b_1, …, b_order)`.
fn carleman_operator(ode: &PolyOde, order: usize) -> Result<BlockOperator> {
    let n = ode.n();
    let dims = lifted_dims(n, order)?;
    let mut op = BlockOperator::new(dims.clone(), dims);
    let coeffs = (0..=ode.degree())
        .map(|m| ode.coeff_block(m))
        .collect::<Result<Vec<_>>>()?;
    for k in 1..=order {
        for (m, coeff) in coeffs.iter().enumerate() {
            let l = k - 1 + m;
            if l > order || coeff.is_zero() {
                continue;
            }
            for term in positional_sum_terms(coeff, k, n)? {
                op.add_term(k, l, term)?;
            }
        }
    }
    Ok(op)
}

/// Conventional Carleman linearization truncated at order `K ≥ 1`, monomial basis.
pub fn build_carleman(ode: &PolyOde, order: usize) -> Result<LiftedSystem> {
    if order < 1 {
        return Err(Error::input("Carleman truncation order must be at least 1"));
    }
    Ok(LiftedSystem {
        method: Method::Carleman,
        pivot: PivotState::zeros(ode.n()),
        order,
        basis: Basis::Monomial,
        op: carleman_operator(ode, order)?,
        n: ode.n(),
    })
}

/// Tangent-plane system at `s` on `(1, x)`: row block 1 is `[G_0 − G_1 s | G_1]` with
/// `G_0 = f(s)` and `G_1 = ∂f/∂x(s)`.
pub fn build_ps(ode: &PolyOde, s: &PivotState) -> Result<LiftedSystem> {
    let n = ode.n();
    let g0 = ode.eval_rhs(s.as_slice())?;
    let g1 = ode.jacobian(s.as_slice())?;
    let offset: Vec<f64> = g0
        .iter()
        .zip(g1.rows())
        .map(|(c, row)| {
            c - row
                .iter()
                .zip(s.as_slice())
                .map(|(a, b)| a * b)
                .sum::<f64>()
        })
        .collect();
    let mut op = BlockOperator::new(vec![1, n], vec![1, n]);
    op.add_term(
        1,
        0,
        KronTerm::new(1.0, vec![Factor::Coeff(CoeffBlock::column(&offset))]),
    )?;
    op.add_term(
        1,
        1,
        KronTerm::new(1.0, vec![Factor::Coeff(CoeffBlock::from_dense(&g1))]),
    )?;
    Ok(LiftedSystem {
        method: Method::Ps,
        pivot: s.clone(),
        order: 1,
        basis: Basis::Monomial,
        op,
        n,
    })
}

/// Order-`P` polynomial-surface system at `s`, in pivot-centered coordinates.
pub fn build_psc(ode: &PolyOde, s: &PivotState, order: usize) -> Result<LiftedSystem> {
    if order < 1 {
        return Err(Error::input("PSC expansion order must be at least 1"));
    }
    let recentered = ode.recenter(s)?;
    Ok(LiftedSystem {
        method: Method::Psc,
        pivot: s.clone(),
        order,
        basis: Basis::PivotCentered,
        op: carleman_operator(&recentered, order)?,
        n: ode.n(),
    })
}

/// Builds the lifted system for `method`; `order` is ignored for PS.
pub fn build(ode: &PolyOde, method: Method, order: usize, s: &PivotState) -> Result<LiftedSystem> {
    match method {
        Method::Carleman => build_carleman(ode, order),
        Method::Ps => build_ps(ode, s),
        Method::Psc => build_psc(ode, s, order),
    }
}

/// `(1, b, b^{⊗2}, …)` with `b = x` (monomial) or `b = x − s` (pivot-centered).
pub fn lift_state(x: &[f64], sys: &LiftedSystem) -> Result<Vec<f64>> {
    if x.len() != sys.n {
        return Err(Error::input(format!(
            "state has dimension {}, system expects {}",
            x.len(),
            sys.n
        )));
    }
    let base: Vec<f64> = match sys.basis {
        Basis::Monomial => x.to_vec(),
        Basis::PivotCentered => x
            .iter()
            .zip(sys.pivot.as_slice())
            .map(|(a, b)| a - b)
            .collect(),
    };
    let mut y = Vec::with_capacity(sys.dim());
    for k in 0..=sys.order {
        y.extend(kron_power(&base, k));
    }
    Ok(y)
}

/// Recovers `x` from block 1 (adding the pivot back in pivot-centered coordinates).
pub fn read_x(y: &[f64], sys: &LiftedSystem) -> Result<Vec<f64>> {
    if y.len() != sys.dim() {
        return Err(Error::input(format!(
            "lifted state has length {}, system expects {}",
            y.len(),
            sys.dim()
        )));
    }
    if (y[0] - 1.0).abs().is_nan() || (y[0] - 1.0).abs() > CONSTANT_BLOCK_TOLERANCE {
        return Err(Error::Consistency(format!(
            "constant block is {} instead of 1",
            y[0]
        )));
    }
    let block = &y[1..1 + sys.n];
    Ok(match sys.basis {
        Basis::Monomial => block.to_vec(),
        Basis::PivotCentered => block
            .iter()
            .zip(sys.pivot.as_slice())
            .map(|(z, s)| s + z)
            .collect(),
    })
}
