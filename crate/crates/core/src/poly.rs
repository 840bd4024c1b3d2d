//! Sparse polynomial vector fields `dx/dt = Σ_{m=0}^{M} F_m x^{⊗m}`.
//!
//! Each nonzero entry of a coefficient matrix `F_m` is stored as a [`PolyTerm`]: output row `i`,
//! the multi-index of the `m` input slots, and a value. Column multi-indices are kept as written
//! (no symmetrization), so `x_0 x_1` and `x_1 x_0` are distinct terms that evaluate identically.

use std::collections::BTreeMap;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{checked_pow, flat_index, CoeffBlock};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolyTerm {
    #[serde(rename = "m")]
    pub degree: usize,
    pub row: usize,
    pub cols: Vec<usize>,
    pub value: f64,
}

impl PolyTerm {
    pub fn new(row: usize, cols: Vec<usize>, value: f64) -> Self {
        Self {
            degree: cols.len(),
            row,
            cols,
            value,
        }
    }

    /// `value · Π x[cols]`
    fn monomial(&self, x: &[f64]) -> f64 {
        self.cols.iter().fold(self.value, |acc, &c| acc * x[c])
    }
}

/// A state around which dynamics are re-expanded.
#[derive(Clone, Debug, PartialEq)]
pub struct PivotState(Vec<f64>);

impl PivotState {
    pub fn new(s: Vec<f64>) -> Result<Self> {
        if s.iter().any(|v| !v.is_finite()) {
            return Err(Error::input("pivot state has non-finite entries"));
        }
        Ok(Self(s))
    }

    pub fn zeros(n: usize) -> Self {
        Self(vec![0.0; n])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn is_origin(&self) -> bool {
        self.0.iter().all(|&v| v == 0.0)
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl AsRef<[f64]> for PivotState {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PolyOde {
    n: usize,
    degree: usize,
    terms: Vec<PolyTerm>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    n: usize,
    degree: usize,
    terms: Vec<PolyTerm>,
}

impl PolyOde {
    /// Validates every term and merges duplicates (same degree, row and column multi-index).
    /// Terms whose merged value is exactly zero are dropped.
    pub fn new(n: usize, degree: usize, terms: impl IntoIterator<Item = PolyTerm>) -> Result<Self> {
        if n == 0 {
            return Err(Error::input("state dimension must be at least 1"));
        }
        let mut merged: BTreeMap<(usize, usize, Vec<usize>), f64> = BTreeMap::new();
        for (i, t) in terms.into_iter().enumerate() {
            validate_term(&t, n, degree).map_err(|msg| Error::input(format!("term {i}: {msg}")))?;
            *merged.entry((t.degree, t.row, t.cols)).or_insert(0.0) += t.value;
        }
        let terms = merged
            .into_iter()
            .filter(|(_, v)| *v != 0.0)
            .map(|((degree, row, cols), value)| PolyTerm {
                degree,
                row,
                cols,
                value,
            })
            .collect();
        Ok(Self { n, degree, terms })
    }

    pub fn zero(n: usize, degree: usize) -> Result<Self> {
        Self::new(n, degree, [])
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    /// Sorted by `(degree, row, cols)`.
    pub fn terms(&self) -> &[PolyTerm] {
        &self.terms
    }

    fn check_dim(&self, x: &[f64], what: &str) -> Result<()> {
        if x.len() != self.n {
            return Err(Error::input(format!(
                "{what} has dimension {}, expected {}",
                x.len(),
                self.n
            )));
        }
        Ok(())
    }

    pub fn eval_rhs(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(x, "state")?;
        let mut out = vec![0.0; self.n];
        for t in &self.terms {
            out[t.row] += t.monomial(x);
        }
        Ok(out)
    }

    /// Exact Jacobian: each degree-`m` term is differentiated slot by slot.
    pub fn jacobian(&self, x: &[f64]) -> Result<Array2<f64>> {
        self.check_dim(x, "state")?;
        let mut jac = Array2::zeros((self.n, self.n));
        for t in &self.terms {
            for (v, &col) in t.cols.iter().enumerate() {
                let others = t
                    .cols
                    .iter()
                    .enumerate()
                    .filter(|&(u, _)| u != v)
                    .fold(t.value, |acc, (_, &c)| acc * x[c]);
                jac[[t.row, col]] += others;
            }
        }
        Ok(jac)
    }

    /// Coefficients `H_m` of `f(s + δ) = Σ_m H_m δ^{⊗m}`, obtained by expanding every term over
    /// its `2^m` slot patterns. Slots assigned to `s` collapse into the coefficient; the rest keep
    /// their column index in order. The expansion is exact and preserves the degree bound.
    pub fn recenter(&self, s: &PivotState) -> Result<PolyOde> {
        self.check_dim(s.as_slice(), "pivot")?;
        let s = s.as_slice();
        let mut expanded = Vec::new();
        for t in &self.terms {
            let m = t.degree;
            for mask in 0u64..(1u64 << m) {
                let mut value = t.value;
                let mut cols = Vec::with_capacity(m);
                for (v, &c) in t.cols.iter().enumerate() {
                    if mask >> v & 1 == 1 {
                        cols.push(c);
                    } else {
                        value *= s[c];
                    }
                }
                if value != 0.0 {
                    expanded.push(PolyTerm::new(t.row, cols, value));
                }
            }
        }
        PolyOde::new(self.n, self.degree, expanded)
    }

    /// `F_m` as an `n × n^m` sparse block.
    pub fn coeff_block(&self, m: usize) -> Result<CoeffBlock> {
        let cols = checked_pow(self.n, m)?;
        let entries = self
            .terms
            .iter()
            .filter(|t| t.degree == m)
            .map(|t| Ok((t.row, flat_index(&t.cols, self.n)?, t.value)))
            .collect::<Result<Vec<_>>>()?;
        CoeffBlock::from_entries(self.n, cols, entries)
    }

    /// Parses the JSON model format: `{"n": .., "degree": .., "terms": [{"m", "row", "cols", "value"}]}`.
    pub fn from_json(text: &str) -> Result<Self> {
        let file: ModelFile = serde_json::from_str(text).map_err(|e| {
            Error::parse(
                format!("line {} column {}", e.line(), e.column()),
                e.to_string(),
            )
        })?;
        for (i, t) in file.terms.iter().enumerate() {
            validate_term(t, file.n, file.degree)
                .map_err(|msg| Error::parse(format!("terms[{i}]"), msg))?;
        }
        if file.n == 0 {
            return Err(Error::parse("n", "state dimension must be at least 1"));
        }
        PolyOde::new(file.n, file.degree, file.terms)
    }

    pub fn to_json(&self) -> String {
        let file = ModelFile {
            n: self.n,
            degree: self.degree,
            terms: self.terms.clone(),
        };
        serde_json::to_string_pretty(&file).expect("model serialization cannot fail")
    }
}

fn validate_term(t: &PolyTerm, n: usize, degree: usize) -> std::result::Result<(), String> {
    if t.degree > degree {
        return Err(format!(
            "degree {} exceeds the model degree {degree}",
            t.degree
        ));
    }
    if t.cols.len() != t.degree {
        return Err(format!(
            "degree {} requires {} column indices, found {}",
            t.degree,
            t.degree,
            t.cols.len()
        ));
    }
    if t.row >= n {
        return Err(format!("row {} out of range for n = {n}", t.row));
    }
    if let Some(c) = t.cols.iter().find(|&&c| c >= n) {
        return Err(format!("column index {c} out of range for n = {n}"));
    }
    if !t.value.is_finite() {
        return Err("coefficient is not finite".into());
    }
    Ok(())
}
