//! Kronecker-power vectors and Kronecker-structured block operators.
//!
//! Multi-indices are flattened big-endian: for digits `(j_1, …, j_m)` over base `n` the flat
//! coordinate is `Σ_v j_v · n^{m-1-v}`, which is the row ordering of the usual Kronecker product.
//! All operators here are applied matrix-free; [`BlockOperator::to_dense`] exists for inspection and
//! cross-checks on small systems.

use std::borrow::Cow;
use std::collections::BTreeMap;

use ndarray::Array2;

use crate::error::{Error, Result};

/// Default cap on either side of a dense materialization (512 MiB of `f64` at the limit).
pub const DEFAULT_DENSE_CAP: usize = 8_192;

/// `n^k`, failing on overflow.
pub fn checked_pow(n: usize, k: usize) -> Result<usize> {
    let mut acc: usize = 1;
    for _ in 0..k {
        acc = acc
            .checked_mul(n)
            .ok_or_else(|| Error::Resource(format!("dimension {n}^{k} overflows")))?;
    }
    Ok(acc)
}

/// A multi-index `(j_1, …, j_m)` with every digit in `[0, n)`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TensorIndex {
    base: usize,
    digits: Vec<usize>,
}

impl TensorIndex {
    pub fn new(base: usize, digits: Vec<usize>) -> Result<Self> {
        if base == 0 {
            return Err(Error::input("tensor index base must be at least 1"));
        }
        if let Some((pos, d)) = digits.iter().enumerate().find(|(_, &d)| d >= base) {
            return Err(Error::input(format!(
                "digit {d} at slot {pos} is out of range for base {base}"
            )));
        }
        Ok(Self { base, digits })
    }

    /// Inverse of [`TensorIndex::flat`].
    pub fn from_flat(flat: usize, base: usize, order: usize) -> Result<Self> {
        let size = checked_pow(base, order)?;
        if base == 0 || flat >= size {
            return Err(Error::input(format!(
                "flat index {flat} out of range for {base}^{order}"
            )));
        }
        let mut digits = vec![0; order];
        let mut rest = flat;
        for slot in digits.iter_mut().rev() {
            *slot = rest % base;
            rest /= base;
        }
        Ok(Self { base, digits })
    }

    pub fn flat(&self) -> usize {
        self.digits.iter().fold(0, |acc, &d| acc * self.base + d)
    }

    pub fn digits(&self) -> &[usize] {
        &self.digits
    }

    pub fn base(&self) -> usize {
        self.base
    }

    pub fn order(&self) -> usize {
        self.digits.len()
    }
}

/// Flat coordinate of `digits` in base `n`.
pub fn flat_index(digits: &[usize], n: usize) -> Result<usize> {
    TensorIndex::new(n, digits.to_vec()).map(|idx| idx.flat())
}

/// `x^{⊗k}` flattened big-endian; `k = 0` gives `[1.0]`.
pub fn kron_power(x: &[f64], k: usize) -> Vec<f64> {
    let mut out = vec![1.0];
    for _ in 0..k {
        out = out
            .iter()
            .flat_map(|&a| x.iter().map(move |&b| a * b))
            .collect();
    }
    out
}

/// Sparse real matrix used as a non-identity Kronecker factor.
///
/// Entries are kept sorted by `(row, col)` with duplicates summed and exact zeros removed.
#[derive(Clone, Debug, PartialEq)]
pub struct CoeffBlock {
    rows: usize,
    cols: usize,
    entries: Vec<(usize, usize, f64)>,
}

impl CoeffBlock {
    pub fn from_entries(
        rows: usize,
        cols: usize,
        entries: impl IntoIterator<Item = (usize, usize, f64)>,
    ) -> Result<Self> {
        let mut acc: BTreeMap<(usize, usize), f64> = BTreeMap::new();
        for (r, c, v) in entries {
            if r >= rows || c >= cols {
                return Err(Error::input(format!(
                    "entry ({r}, {c}) outside a {rows}x{cols} block"
                )));
            }
            *acc.entry((r, c)).or_insert(0.0) += v;
        }
        let entries = acc
            .into_iter()
            .filter(|&(_, v)| v != 0.0)
            .map(|((r, c), v)| (r, c, v))
            .collect();
        Ok(Self {
            rows,
            cols,
            entries,
        })
    }

    pub fn from_dense(m: &Array2<f64>) -> Self {
        let (rows, cols) = m.dim();
        let entries = m
            .indexed_iter()
            .filter(|&(_, &v)| v != 0.0)
            .map(|((r, c), &v)| (r, c, v))
            .collect();
        Self {
            rows,
            cols,
            entries,
        }
    }

    /// A single column (`rows × 1`).
    pub fn column(values: &[f64]) -> Self {
        Self::from_dense(&Array2::from_shape_fn((values.len(), 1), |(r, _)| {
            values[r]
        }))
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn entries(&self) -> &[(usize, usize, f64)] {
        &self.entries
    }

    pub fn is_zero(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn to_dense(&self) -> Array2<f64> {
        let mut m = Array2::zeros((self.rows, self.cols));
        for &(r, c, v) in &self.entries {
            m[[r, c]] = v;
        }
        m
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Factor {
    Identity(usize),
    Coeff(CoeffBlock),
}

impl Factor {
    pub fn rows(&self) -> usize {
        match self {
            Factor::Identity(d) => *d,
            Factor::Coeff(c) => c.rows,
        }
    }

    pub fn cols(&self) -> usize {
        match self {
            Factor::Identity(d) => *d,
            Factor::Coeff(c) => c.cols,
        }
    }

    fn nonzeros(&self) -> Vec<(usize, usize, f64)> {
        match self {
            Factor::Identity(d) => (0..*d).map(|i| (i, i, 1.0)).collect(),
            Factor::Coeff(c) => c.entries.clone(),
        }
    }
}

/// `scale · (factor_1 ⊗ factor_2 ⊗ … )`.
#[derive(Clone, Debug, PartialEq)]
pub struct KronTerm {
    scale: f64,
    factors: Vec<Factor>,
}

impl KronTerm {
    /// Adjacent identity factors are merged and trivial `Identity(1)` factors dropped; neither
    /// changes the represented matrix.
    pub fn new(scale: f64, factors: Vec<Factor>) -> Self {
        let mut merged: Vec<Factor> = Vec::with_capacity(factors.len());
        for f in factors {
            match (merged.last_mut(), f) {
                (_, Factor::Identity(1)) => {}
                (Some(Factor::Identity(prev)), Factor::Identity(d)) => *prev *= d,
                (_, f) => merged.push(f),
            }
        }
        Self {
            scale,
            factors: merged,
        }
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn factors(&self) -> &[Factor] {
        &self.factors
    }

    pub fn rows(&self) -> usize {
        self.factors.iter().map(Factor::rows).product()
    }

    pub fn cols(&self) -> usize {
        self.factors.iter().map(Factor::cols).product()
    }

    fn is_zero(&self) -> bool {
        self.scale == 0.0
            || self
                .factors
                .iter()
                .any(|f| matches!(f, Factor::Coeff(c) if c.is_zero()))
    }

    /// `out += self · input`. Lengths must equal `cols()` and `rows()`.
    pub fn apply_add(&self, input: &[f64], out: &mut [f64]) {
        debug_assert_eq!(input.len(), self.cols());
        debug_assert_eq!(out.len(), self.rows());
        if self.is_zero() {
            return;
        }
        let coeff_positions: Vec<usize> = self
            .factors
            .iter()
            .enumerate()
            .filter(|(_, f)| matches!(f, Factor::Coeff(_)))
            .map(|(i, _)| i)
            .collect();
        let Some(&last) = coeff_positions.last() else {
            out.iter_mut()
                .zip(input)
                .for_each(|(o, &v)| *o += self.scale * v);
            return;
        };

        // Mode products, one non-identity factor at a time. Factors left of the current one have
        // already been applied (their row counts describe the leading axis), factors to the
        // right have not (their column counts describe the trailing axis).
        let mut cur: Cow<[f64]> = Cow::Borrowed(input);
        let mut left = 1;
        for (i, factor) in self.factors.iter().enumerate() {
            match factor {
                Factor::Identity(d) => left *= d,
                Factor::Coeff(c) => {
                    let right: usize = self.factors[i + 1..].iter().map(Factor::cols).product();
                    if i == last {
                        mode_product_add(c, left, right, &cur, out, self.scale);
                    } else {
                        let mut next = vec![0.0; left * c.rows * right];
                        mode_product_add(c, left, right, &cur, &mut next, 1.0);
                        cur = Cow::Owned(next);
                    }
                    left *= c.rows;
                }
            }
        }
    }

    /// Dense Kronecker product built from the factors' nonzeros.
    pub fn to_dense(&self) -> Array2<f64> {
        let mut acc: Vec<(usize, usize, f64)> = vec![(0, 0, self.scale)];
        for f in &self.factors {
            let (fr, fc) = (f.rows(), f.cols());
            let nz = f.nonzeros();
            acc = acc
                .iter()
                .flat_map(|&(r, c, v)| {
                    nz.iter()
                        .map(move |&(a, b, w)| (r * fr + a, c * fc + b, v * w))
                })
                .collect();
        }
        let mut m = Array2::zeros((self.rows(), self.cols()));
        for (r, c, v) in acc {
            m[[r, c]] += v;
        }
        m
    }
}

fn mode_product_add(
    c: &CoeffBlock,
    left: usize,
    right: usize,
    src: &[f64],
    dst: &mut [f64],
    scale: f64,
) {
    for a in 0..left {
        let src_base = a * c.cols * right;
        let dst_base = a * c.rows * right;
        for &(r, col, v) in &c.entries {
            let w = scale * v;
            let s = &src[src_base + col * right..src_base + (col + 1) * right];
            let d = &mut dst[dst_base + r * right..dst_base + (r + 1) * right];
            for (di, &si) in d.iter_mut().zip(s) {
                *di += w * si;
            }
        }
    }
}

/// `Σ_{v=0}^{k-1} I_n^{⊗v} ⊗ coeff ⊗ I_n^{⊗(k-1-v)}`: the action of `d(x^{⊗k})/dx` composed with
/// a coefficient block acting on one tensor slot at a time.
pub fn positional_sum_terms(coeff: &CoeffBlock, k: usize, n: usize) -> Result<Vec<KronTerm>> {
    (0..k)
        .map(|v| {
            Ok(KronTerm::new(
                1.0,
                vec![
                    Factor::Identity(checked_pow(n, v)?),
                    Factor::Coeff(coeff.clone()),
                    Factor::Identity(checked_pow(n, k - 1 - v)?),
                ],
            ))
        })
        .collect()
}

/// Block matrix whose `(k, l)` block is a sum of [`KronTerm`]s.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockOperator {
    dims_out: Vec<usize>,
    dims_in: Vec<usize>,
    blocks: BTreeMap<(usize, usize), Vec<KronTerm>>,
}

impl BlockOperator {
    pub fn new(dims_out: Vec<usize>, dims_in: Vec<usize>) -> Self {
        Self {
            dims_out,
            dims_in,
            blocks: BTreeMap::new(),
        }
    }

    pub fn add_term(&mut self, k: usize, l: usize, term: KronTerm) -> Result<()> {
        let (Some(&out_dim), Some(&in_dim)) = (self.dims_out.get(k), self.dims_in.get(l)) else {
            return Err(Error::input(format!(
                "block ({k}, {l}) outside the operator"
            )));
        };
        if term.rows() != out_dim || term.cols() != in_dim {
            return Err(Error::input(format!(
                "term of shape {}x{} does not fit block ({k}, {l}) of shape {out_dim}x{in_dim}",
                term.rows(),
                term.cols()
            )));
        }
        if !term.is_zero() {
            self.blocks.entry((k, l)).or_default().push(term);
        }
        Ok(())
    }

    pub fn dims_out(&self) -> &[usize] {
        &self.dims_out
    }

    pub fn dims_in(&self) -> &[usize] {
        &self.dims_in
    }

    pub fn total_out(&self) -> usize {
        self.dims_out.iter().sum()
    }

    pub fn total_in(&self) -> usize {
        self.dims_in.iter().sum()
    }

    pub fn terms(&self, k: usize, l: usize) -> &[KronTerm] {
        self.blocks.get(&(k, l)).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Iterates nonzero blocks in `(k, l)` order.
    pub fn blocks(&self) -> impl Iterator<Item = ((usize, usize), &[KronTerm])> {
        self.blocks.iter().map(|(&kl, t)| (kl, t.as_slice()))
    }

    /// True when no term writes into output block `k`.
    pub fn row_block_is_zero(&self, k: usize) -> bool {
        self.blocks.keys().all(|&(kk, _)| kk != k)
    }

    fn offsets(dims: &[usize]) -> Vec<usize> {
        let mut off = Vec::with_capacity(dims.len() + 1);
        off.push(0);
        for d in dims {
            off.push(off.last().unwrap() + d);
        }
        off
    }

    /// Matrix-free product. Blocks are visited in `(k, l)` order and terms in insertion order, so
    /// the result is bit-reproducible.
    pub fn apply(&self, y: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.total_out()];
        self.apply_into(y, &mut out)?;
        Ok(out)
    }

    /// Overwrites `out` with `self · y`.
    pub fn apply_into(&self, y: &[f64], out: &mut [f64]) -> Result<()> {
        if y.len() != self.total_in() || out.len() != self.total_out() {
            return Err(Error::input(format!(
                "operator is {}x{}, got input of length {} and output of length {}",
                self.total_out(),
                self.total_in(),
                y.len(),
                out.len()
            )));
        }
        out.fill(0.0);
        let off_out = Self::offsets(&self.dims_out);
        let off_in = Self::offsets(&self.dims_in);
        for (&(k, l), terms) in &self.blocks {
            let src = &y[off_in[l]..off_in[l + 1]];
            let dst = &mut out[off_out[k]..off_out[k + 1]];
            for term in terms {
                term.apply_add(src, dst);
            }
        }
        Ok(())
    }

    pub fn to_dense(&self) -> Result<Array2<f64>> {
        self.to_dense_capped(DEFAULT_DENSE_CAP)
    }

    pub fn to_dense_capped(&self, cap: usize) -> Result<Array2<f64>> {
        let (rows, cols) = (self.total_out(), self.total_in());
        if rows > cap || cols > cap {
            return Err(Error::Resource(format!(
                "dense materialization of a {rows}x{cols} operator exceeds the cap of {cap}"
            )));
        }
        let off_out = Self::offsets(&self.dims_out);
        let off_in = Self::offsets(&self.dims_in);
        let mut m = Array2::zeros((rows, cols));
        for (&(k, l), terms) in &self.blocks {
            for term in terms {
                let d = term.to_dense();
                let mut view = m.slice_mut(ndarray::s![
                    off_out[k]..off_out[k + 1],
                    off_in[l]..off_in[l + 1]
                ]);
                view += &d;
            }
        }
        Ok(m)
    }
}

/// Block dimensions `(1, n, n², …, n^order)`.
pub fn lifted_dims(n: usize, order: usize) -> Result<Vec<usize>> {
    (0..=order).map(|k| checked_pow(n, k)).collect()
}

/// Re-centering map on lifted states.
///
/// Sends `(1, x, x^{⊗2}, …, x^{⊗order})` to `(1, x−s, (x−s)^{⊗2}, …)`. Block `p` of the output
/// expands `(x − s)^{⊗p}` over all `2^p` slot patterns: slots holding `x` become identity factors
/// fed from input block `q = #x-slots`, slots holding `−s` become constant column factors. The map
/// is block lower triangular with identity diagonal blocks, and `binomial_lift_transform(-s)`
/// inverts it.
pub fn binomial_lift_transform(s: &[f64], order: usize) -> Result<BlockOperator> {
    let n = s.len();
    let dims = lifted_dims(n, order)?;
    let mut op = BlockOperator::new(dims.clone(), dims);
    let shift = CoeffBlock::column(&s.iter().map(|v| -v).collect::<Vec<_>>());
    let shift_is_zero = shift.is_zero();
    for p in 0..=order {
        for mask in 0u64..(1u64 << p) {
            let x_slots = mask.count_ones() as usize;
            if shift_is_zero && x_slots != p {
                continue;
            }
            let factors = (0..p)
                .map(|slot| {
                    if mask >> (p - 1 - slot) & 1 == 1 {
                        Factor::Identity(n)
                    } else {
                        Factor::Coeff(shift.clone())
                    }
                })
                .collect();
            op.add_term(p, x_slots, KronTerm::new(1.0, factors))?;
        }
    }
    Ok(op)
}
