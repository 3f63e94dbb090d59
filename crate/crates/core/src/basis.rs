//! Truncated `|j,k,m⟩` basis sets.
//!
//! States are ordered by ascending `j`, then `k`, then `m`. This ordering is
//! part of the file-format contract: operator and state dumps index into it.
//! A consequence is that `j` shells are contiguous while `m` blocks are not,
//! so [`BasisSet::m_block`] returns an index list rather than a range.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Result, RotorError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TopClass {
    Linear,
    ProlateSymmetric,
    OblateSymmetric,
    Spherical,
    Asymmetric,
}

impl TopClass {
    pub fn is_linear(self) -> bool {
        self == TopClass::Linear
    }

    pub fn is_symmetric(self) -> bool {
        matches!(
            self,
            TopClass::ProlateSymmetric | TopClass::OblateSymmetric | TopClass::Spherical
        )
    }

    /// Classify non-linear rotors from rotational constants `A <= B <= C`
    /// with relative tolerance `tol` on equalities.
    pub fn classify(a: f64, b: f64, c: f64, tol: f64) -> TopClass {
        let eq = |x: f64, y: f64| (x - y).abs() <= tol * x.abs().max(y.abs());
        match (eq(a, b), eq(b, c)) {
            (true, true) => TopClass::Spherical,
            (true, false) => TopClass::ProlateSymmetric,
            (false, true) => TopClass::OblateSymmetric,
            (false, false) => TopClass::Asymmetric,
        }
    }
}

/// One basis ket `|j,k,m⟩`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct RotorState {
    pub j: u32,
    pub k: i32,
    pub m: i32,
}

impl RotorState {
    pub fn new(j: u32, k: i32, m: i32) -> Self {
        Self { j, k, m }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BasisSet {
    top: TopClass,
    j_max: u32,
    states: Vec<RotorState>,
}

impl BasisSet {
    pub fn new(top: TopClass, j_max: u32) -> Self {
        let mut states = Vec::new();
        for j in 0..=j_max {
            let ji = j as i32;
            let ks = if top.is_linear() { 0..=0 } else { -ji..=ji };
            for k in ks {
                for m in -ji..=ji {
                    states.push(RotorState { j, k, m });
                }
            }
        }
        Self { top, j_max, states }
    }

    pub fn top(&self) -> TopClass {
        self.top
    }

    pub fn j_max(&self) -> u32 {
        self.j_max
    }

    pub fn dim(&self) -> usize {
        self.states.len()
    }

    pub fn states(&self) -> &[RotorState] {
        &self.states
    }

    pub fn state_at(&self, i: usize) -> RotorState {
        self.states[i]
    }

    fn shell_offset(&self, j: u32) -> usize {
        let j = j as usize;
        if self.top.is_linear() {
            j * j
        } else {
            // Σ_{j'<j} (2j'+1)² = j(2j-1)(2j+1)/3
            (j * (2 * j + 1) * (2 * j).saturating_sub(1)) / 3
        }
    }

    pub fn index_of(&self, state: RotorState) -> Option<usize> {
        let RotorState { j, k, m } = state;
        if j > self.j_max || k.unsigned_abs() > j || m.unsigned_abs() > j {
            return None;
        }
        if self.top.is_linear() && k != 0 {
            return None;
        }
        let width = 2 * j as usize + 1;
        let k_pos = if self.top.is_linear() { 0 } else { (k + j as i32) as usize };
        Some(self.shell_offset(j) + k_pos * width + (m + j as i32) as usize)
    }

    /// Contiguous index range of the `j` shell.
    pub fn shell(&self, j: u32) -> Range<usize> {
        if j > self.j_max {
            return self.dim()..self.dim();
        }
        self.shell_offset(j)..self.shell_offset(j + 1)
    }

    /// Indices of all states with magnetic quantum number `m`, ascending.
    /// Empty when `|m| > j_max`.
    pub fn m_block(&self, m: i32) -> Vec<usize> {
        self.states
            .iter()
            .enumerate()
            .filter(|(_, s)| s.m == m)
            .map(|(i, _)| i)
            .collect()
    }

    /// Indices of all states whose `j` has the given parity.
    pub fn parity_block(&self, even: bool) -> Vec<usize> {
        self.states
            .iter()
            .enumerate()
            .filter(|(_, s)| (s.j % 2 == 0) == even)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn require_same(&self, other: &BasisSet) -> Result<()> {
        if self == other {
            Ok(())
        } else {
            Err(RotorError::BasisMismatch(format!(
                "{:?}/j_max={} vs {:?}/j_max={}",
                self.top, self.j_max, other.top, other.j_max
            )))
        }
    }
}
