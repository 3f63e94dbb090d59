use std::collections::BTreeSet;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::basis::BasisSet;
use crate::error::Result;
use crate::wigner::DExpansion;

type C = Complex64;

/// Couplings `(Δj, Δk, Δm)` that occur among the nonzero elements.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct SelectionMeta {
    pub dj: BTreeSet<i32>,
    pub dk: BTreeSet<i32>,
    pub dm: BTreeSet<i32>,
}

impl SelectionMeta {
    pub fn permits(&self, dj: i32, dk: i32, dm: i32) -> bool {
        self.dj.contains(&dj) && self.dk.contains(&dk) && self.dm.contains(&dm)
    }
}

/// Hermitian operator over a [`BasisSet`], stored as compressed rows.
///
/// Constructors only take the upper triangle and mirror it, so
/// `element(a, b) == conj(element(b, a))` holds bit-for-bit.
#[derive(Debug, Clone)]
pub struct Operator {
    basis: Arc<BasisSet>,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<C>,
}

impl Operator {
    pub fn zero(basis: Arc<BasisSet>) -> Self {
        let n = basis.dim();
        Self {
            basis,
            row_ptr: vec![0; n + 1],
            cols: Vec::new(),
            vals: Vec::new(),
        }
    }

    pub fn identity(basis: Arc<BasisSet>) -> Self {
        let n = basis.dim();
        Self::from_diagonal(basis, &vec![1.0; n])
    }

    pub fn from_diagonal(basis: Arc<BasisSet>, diag: &[f64]) -> Self {
        assert_eq!(diag.len(), basis.dim());
        Self::from_upper(basis, diag.iter().enumerate().map(|(i, &d)| (i, i, C::new(d, 0.0))))
    }

    /// Build from upper-triangle entries `(row, col, value)` with
    /// `row <= col`. Duplicates are summed; diagonal imaginary parts dropped.
    pub fn from_upper<I>(basis: Arc<BasisSet>, entries: I) -> Self
    where
        I: IntoIterator<Item = (usize, usize, C)>,
    {
        let n = basis.dim();
        let mut rows: Vec<Vec<(usize, C)>> = vec![Vec::new(); n];
        for (r, c, v) in entries {
            assert!(r <= c && c < n, "entry ({r}, {c}) not in upper triangle of {n}");
            if r == c {
                rows[r].push((c, C::new(v.re, 0.0)));
            } else {
                rows[r].push((c, v));
                rows[c].push((r, v.conj()));
            }
        }
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        row_ptr.push(0);
        for mut row in rows {
            row.sort_by_key(|e| e.0);
            let mut last: Option<usize> = None;
            for (c, v) in row {
                if last == Some(c) {
                    *vals.last_mut().unwrap() += v;
                } else {
                    cols.push(c);
                    vals.push(v);
                    last = Some(c);
                }
            }
            row_ptr.push(cols.len());
        }
        let mut op = Self {
            basis,
            row_ptr,
            cols,
            vals,
        };
        op.drop_zeros();
        op
    }

    fn drop_zeros(&mut self) {
        if self.vals.iter().all(|v| *v != C::new(0.0, 0.0)) {
            return;
        }
        let n = self.basis.dim();
        let mut row_ptr = vec![0];
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        for r in 0..n {
            for p in self.row_ptr[r]..self.row_ptr[r + 1] {
                if self.vals[p] != C::new(0.0, 0.0) {
                    cols.push(self.cols[p]);
                    vals.push(self.vals[p]);
                }
            }
            row_ptr.push(cols.len());
        }
        self.row_ptr = row_ptr;
        self.cols = cols;
        self.vals = vals;
    }

    /// Matrix of the function on the Euler volume described by `expansion`.
    /// The expansion must represent a real function so the result is
    /// Hermitian.
    pub fn from_expansion(basis: Arc<BasisSet>, expansion: &DExpansion) -> Self {
        let terms: Vec<_> = expansion.terms().collect();
        let mut entries = Vec::new();
        for (col, s) in basis.states().iter().enumerate() {
            let mut targets = BTreeSet::new();
            for &(l, bm, bk, _) in &terms {
                let (kp, mp) = (s.k - bk, s.m - bm);
                let lo = s.j.abs_diff(l);
                for jp in lo..=(s.j + l).min(basis.j_max()) {
                    if let Some(row) = basis.index_of(crate::basis::RotorState::new(jp, kp, mp)) {
                        if row <= col {
                            targets.insert(row);
                        }
                    }
                }
            }
            for row in targets {
                let t = basis.state_at(row);
                let v = expansion.matrix_element(t.j, t.k, t.m, s.j, s.k, s.m);
                if v.norm() > 1e-15 {
                    entries.push((row, col, v));
                }
            }
        }
        Self::from_upper(basis, entries)
    }

    pub fn basis(&self) -> &Arc<BasisSet> {
        &self.basis
    }

    pub fn dim(&self) -> usize {
        self.basis.dim()
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, C)> + '_ {
        (self.row_ptr[r]..self.row_ptr[r + 1]).map(move |p| (self.cols[p], self.vals[p]))
    }

    pub fn entries(&self) -> impl Iterator<Item = (usize, usize, C)> + '_ {
        (0..self.dim()).flat_map(move |r| self.row(r).map(move |(c, v)| (r, c, v)))
    }

    pub fn element(&self, r: usize, c: usize) -> C {
        let span = &self.cols[self.row_ptr[r]..self.row_ptr[r + 1]];
        match span.binary_search(&c) {
            Ok(p) => self.vals[self.row_ptr[r] + p],
            Err(_) => C::new(0.0, 0.0),
        }
    }

    pub fn is_diagonal(&self) -> bool {
        self.entries().all(|(r, c, _)| r == c)
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.dim()).map(|i| self.element(i, i).re).collect()
    }

    pub fn selection(&self) -> SelectionMeta {
        let mut meta = SelectionMeta::default();
        for (r, c, _) in self.entries() {
            let (a, b) = (self.basis.state_at(r), self.basis.state_at(c));
            meta.dj.insert(a.j as i32 - b.j as i32);
            meta.dk.insert(a.k - b.k);
            meta.dm.insert(a.m - b.m);
        }
        meta
    }

    pub fn scaled(&self, s: f64) -> Self {
        let mut out = self.clone();
        out.vals.iter_mut().for_each(|v| *v *= s);
        out.drop_zeros();
        out
    }

    /// `Σ cᵢ Oᵢ` over operators on the same basis.
    pub fn combine(basis: Arc<BasisSet>, terms: &[(f64, &Operator)]) -> Result<Self> {
        let mut entries = Vec::new();
        for (c, op) in terms {
            op.basis.require_same(&basis)?;
            if *c == 0.0 {
                continue;
            }
            entries.extend(op.entries().filter(|(r, col, _)| r <= col).map(|(r, col, v)| (r, col, v * *c)));
        }
        Ok(Self::from_upper(basis, entries))
    }

    pub fn add(&self, other: &Operator) -> Result<Self> {
        Self::combine(self.basis.clone(), &[(1.0, self), (1.0, other)])
    }

    pub fn apply(&self, psi: &[C]) -> Vec<C> {
        (0..self.dim())
            .map(|r| self.row(r).map(|(c, v)| v * psi[c]).sum())
            .collect()
    }

    /// `⟨ψ|O|ψ⟩` (real part; the imaginary part vanishes for Hermitian `O`).
    pub fn expectation_pure(&self, psi: &[C]) -> f64 {
        let mut acc = 0.0;
        for r in 0..self.dim() {
            if psi[r] == C::new(0.0, 0.0) {
                continue;
            }
            let row: C = self.row(r).map(|(c, v)| v * psi[c]).sum();
            acc += (psi[r].conj() * row).re;
        }
        acc
    }

    /// `Tr[ρ O]` for a dense density matrix.
    pub fn expectation_mixed(&self, rho: &DMatrix<C>) -> f64 {
        self.entries().map(|(r, c, v)| (v * rho[(c, r)]).re).sum()
    }

    pub fn to_dense(&self) -> DMatrix<C> {
        let n = self.dim();
        let mut m = DMatrix::zeros(n, n);
        for (r, c, v) in self.entries() {
            m[(r, c)] = v;
        }
        m
    }

    /// Dense restriction to the listed indices (in that order).
    pub fn dense_block(&self, idx: &[usize]) -> DMatrix<C> {
        let mut local = vec![usize::MAX; self.dim()];
        for (p, &i) in idx.iter().enumerate() {
            local[i] = p;
        }
        let mut m = DMatrix::zeros(idx.len(), idx.len());
        for (p, &r) in idx.iter().enumerate() {
            for (c, v) in self.row(r) {
                if local[c] != usize::MAX {
                    m[(p, local[c])] = v;
                }
            }
        }
        m
    }

    pub fn max_hermiticity_error(&self) -> f64 {
        self.entries()
            .map(|(r, c, v)| (v - self.element(c, r).conj()).norm())
            .fold(0.0, f64::max)
    }

    pub fn max_abs_diff(&self, other: &Operator) -> f64 {
        let d = self.to_dense() - other.to_dense();
        d.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }
}

/// Partition of basis indices into the connected components of the union
/// of operator couplings. Every listed operator is block diagonal in it.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockStructure {
    blocks: Vec<Vec<usize>>,
    block_of: Vec<usize>,
}

impl BlockStructure {
    pub fn from_operators(dim: usize, ops: &[&Operator]) -> Self {
        for op in ops {
            assert_eq!(op.dim(), dim);
        }
        Self::from_couplings(dim, ops.iter().flat_map(|op| op.entries().map(|(r, c, _)| (r, c))))
    }

    /// Components of the graph whose edges are the index pairs `(r, c)`.
    pub fn from_couplings<I>(dim: usize, couplings: I) -> Self
    where
        I: IntoIterator<Item = (usize, usize)>,
    {
        let mut parent: Vec<usize> = (0..dim).collect();
        fn find(p: &mut [usize], mut x: usize) -> usize {
            while p[x] != x {
                p[x] = p[p[x]];
                x = p[x];
            }
            x
        }
        for (r, c) in couplings {
            let (a, b) = (find(&mut parent, r), find(&mut parent, c));
            if a != b {
                parent[a.max(b)] = a.min(b);
            }
        }
        let mut root_block = vec![usize::MAX; dim];
        let mut blocks: Vec<Vec<usize>> = Vec::new();
        let mut block_of = vec![0; dim];
        for i in 0..dim {
            let r = find(&mut parent, i);
            if root_block[r] == usize::MAX {
                root_block[r] = blocks.len();
                blocks.push(Vec::new());
            }
            blocks[root_block[r]].push(i);
            block_of[i] = root_block[r];
        }
        Self { blocks, block_of }
    }

    pub fn single(dim: usize) -> Self {
        Self {
            blocks: vec![(0..dim).collect()],
            block_of: vec![0; dim],
        }
    }

    pub fn blocks(&self) -> &[Vec<usize>] {
        &self.blocks
    }

    pub fn block_of(&self, i: usize) -> usize {
        self.block_of[i]
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    /// Blocks on which the vector has any nonzero amplitude.
    pub fn support(&self, psi: &[C]) -> Vec<usize> {
        let mut on = vec![false; self.blocks.len()];
        for (i, z) in psi.iter().enumerate() {
            if *z != C::new(0.0, 0.0) {
                on[self.block_of[i]] = true;
            }
        }
        on.iter().enumerate().filter(|(_, &b)| b).map(|(i, _)| i).collect()
    }
}

/// Block-diagonal unitary, one dense matrix per block.
#[derive(Debug, Clone)]
pub struct BlockUnitary {
    dim: usize,
    blocks: Vec<(Vec<usize>, DMatrix<C>)>,
}

impl BlockUnitary {
    pub fn new(dim: usize, blocks: Vec<(Vec<usize>, DMatrix<C>)>) -> Self {
        Self { dim, blocks }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn blocks(&self) -> &[(Vec<usize>, DMatrix<C>)] {
        &self.blocks
    }

    /// Indices not covered by any block are left unchanged (identity).
    pub fn apply(&self, psi: &mut [C]) {
        for (idx, u) in &self.blocks {
            let v = DVector::from_iterator(idx.len(), idx.iter().map(|&i| psi[i]));
            let w = u * v;
            for (p, &i) in idx.iter().enumerate() {
                psi[i] = w[p];
            }
        }
    }

    pub fn to_dense(&self) -> DMatrix<C> {
        let mut m = DMatrix::identity(self.dim, self.dim);
        for (idx, u) in &self.blocks {
            for i in idx {
                m[(*i, *i)] = C::new(0.0, 0.0);
            }
            for (p, &r) in idx.iter().enumerate() {
                for (q, &c) in idx.iter().enumerate() {
                    m[(r, c)] = u[(p, q)];
                }
            }
        }
        m
    }

    pub fn unitarity_error(&self) -> f64 {
        self.blocks
            .iter()
            .map(|(_, u)| crate::linalg::unitarity_error(u))
            .fold(0.0, f64::max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::TopClass;

    #[test]
    fn hermitian_by_construction() {
        let b = Arc::new(BasisSet::new(TopClass::Linear, 1));
        let op = Operator::from_upper(
            b,
            vec![(0, 1, C::new(0.3, 0.7)), (1, 1, C::new(2.0, 5.0)), (0, 1, C::new(0.1, 0.0))],
        );
        assert_eq!(op.element(1, 0), C::new(0.4, -0.7));
        assert_eq!(op.element(0, 1), C::new(0.4, 0.7));
        assert_eq!(op.element(1, 1), C::new(2.0, 0.0));
        assert_eq!(op.max_hermiticity_error(), 0.0);
    }

    #[test]
    fn blocks_follow_couplings() {
        let b = Arc::new(BasisSet::new(TopClass::Linear, 1));
        let op = Operator::from_upper(b, vec![(0, 2, C::new(1.0, 0.0))]);
        let bs = BlockStructure::from_operators(4, &[&op]);
        assert_eq!(bs.blocks(), &[vec![0, 2], vec![1], vec![3]]);
    }

    #[test]
    fn expectations_agree() {
        let b = Arc::new(BasisSet::new(TopClass::Linear, 1));
        let op = Operator::from_upper(
            b,
            vec![(0, 2, C::new(0.5, 0.2)), (1, 1, C::new(1.0, 0.0)), (2, 3, C::new(0.0, -0.3))],
        );
        let psi = vec![C::new(0.5, 0.1), C::new(0.2, -0.4), C::new(0.3, 0.3), C::new(-0.1, 0.6)];
        let rho = DMatrix::from_fn(4, 4, |r, c| psi[r] * psi[c].conj());
        assert!((op.expectation_pure(&psi) - op.expectation_mixed(&rho)).abs() < 1e-15);
        let dense = op.to_dense();
        let v = DVector::from_vec(psi.clone());
        let direct = (v.adjoint() * &dense * &v)[(0, 0)];
        assert!((direct.re - op.expectation_pure(&psi)).abs() < 1e-15);
    }
}
