//! Derivative multi-indices `α ∈ ℕ^d` with `|α| ≤ s`.
//!
//! Indices are kept in graded order: total degree ascending, and within a
//! degree in descending lexicographic order on the tuple, so that for
//! `d = 2` the sequence is `(0,0), (1,0), (0,1), (2,0), (1,1), (0,2), …`.
//! Position 0 is always the zero index (the function value).
//!
//! The coefficient vector of the representer expansion is laid out
//! multi-index-major: all `N` samples for the first index, then all `N`
//! samples for the second, and so on.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::S_MAX;

/// A single multi-index, one non-negative order per coordinate.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub struct MultiIndex(Vec<u32>);

impl MultiIndex {
    pub fn new(orders: Vec<u32>) -> Self {
        MultiIndex(orders)
    }

    pub fn zero(d: usize) -> Self {
        MultiIndex(vec![0; d])
    }

    /// Unit index `e_k` in dimension `d`.
    pub fn unit(d: usize, k: usize) -> Self {
        let mut v = vec![0; d];
        v[k] = 1;
        MultiIndex(v)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    /// Total order `|α|`.
    pub fn order(&self) -> usize {
        self.0.iter().map(|&a| a as usize).sum()
    }

    pub fn orders(&self) -> &[u32] {
        &self.0
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|&a| a == 0)
    }
}

impl fmt::Display for MultiIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut first = true;
        for a in &self.0 {
            if !first {
                f.write_str(".")?;
            }
            write!(f, "{a}")?;
            first = false;
        }
        Ok(())
    }
}

impl FromStr for MultiIndex {
    type Err = Error;

    /// Parses the dot-separated form `a1.a2…ad`, e.g. `"1.0"`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.is_empty() {
            return Err(Error::invalid("empty multi-index string"));
        }
        s.split('.')
            .map(|part| {
                part.trim()
                    .parse::<u32>()
                    .map_err(|_| Error::invalid(format!("bad multi-index component '{part}' in '{s}'")))
            })
            .collect::<Result<Vec<_>>>()
            .map(MultiIndex)
    }
}

impl From<MultiIndex> for String {
    fn from(m: MultiIndex) -> String {
        m.to_string()
    }
}

impl TryFrom<String> for MultiIndex {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

/// The ordered set `A_s` of all multi-indices with `|α| ≤ s` in dimension `d`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct MultiIndexSet {
    d: usize,
    s: usize,
    indices: Vec<MultiIndex>,
}

/// Enumerates `A_s` for dimension `d` in graded descending-lex order.
pub fn enumerate(d: usize, s: usize) -> Result<MultiIndexSet> {
    if d == 0 {
        return Err(Error::invalid("dimension d must be at least 1"));
    }
    if s > S_MAX {
        return Err(Error::UnsupportedOrder { order: s, max: S_MAX });
    }
    let mut indices = Vec::with_capacity(binomial(s + d, d));
    for degree in 0..=s {
        let mut current = vec![0u32; d];
        push_degree(&mut indices, &mut current, 0, degree as u32);
    }
    Ok(MultiIndexSet { d, s, indices })
}

// Fills coordinates left to right, largest remaining order first, which
// yields descending lexicographic order within one total degree.
fn push_degree(out: &mut Vec<MultiIndex>, current: &mut [u32], pos: usize, remaining: u32) {
    if pos + 1 == current.len() {
        current[pos] = remaining;
        out.push(MultiIndex(current.to_vec()));
        return;
    }
    for a in (0..=remaining).rev() {
        current[pos] = a;
        push_degree(out, current, pos + 1, remaining - a);
    }
    current[pos] = 0;
}

pub(crate) fn binomial(n: usize, k: usize) -> usize {
    let k = k.min(n - k);
    (0..k).fold(1usize, |acc, i| acc * (n - i) / (i + 1))
}

impl MultiIndexSet {
    pub fn d(&self) -> usize {
        self.d
    }

    pub fn s(&self) -> usize {
        self.s
    }

    /// Number of indices, `m_s = binomial(s + d, d)`.
    pub fn m_s(&self) -> usize {
        self.indices.len()
    }

    pub fn indices(&self) -> &[MultiIndex] {
        &self.indices
    }

    pub fn get(&self, pos: usize) -> Option<&MultiIndex> {
        self.indices.get(pos)
    }

    pub fn position(&self, alpha: &MultiIndex) -> Option<usize> {
        self.indices.iter().position(|m| m == alpha)
    }

    /// Flat position of sample `i` under multi-index position `a` in the
    /// `N·m_s` basis: `a·N + i`.
    pub fn flat_index(&self, i: usize, a: usize, n: usize) -> Result<usize> {
        if i >= n {
            return Err(Error::invalid(format!("sample index {i} out of range for N = {n}")));
        }
        if a >= self.m_s() {
            return Err(Error::invalid(format!(
                "multi-index position {a} out of range for m_s = {}",
                self.m_s()
            )));
        }
        Ok(a * n + i)
    }

    /// Inverse of [`flat_index`](Self::flat_index): returns `(i, a)`.
    pub fn unflatten(&self, k: usize, n: usize) -> Result<(usize, usize)> {
        if n == 0 || k >= n * self.m_s() {
            return Err(Error::invalid(format!(
                "flat index {k} out of range for M = {}",
                n * self.m_s()
            )));
        }
        Ok((k % n, k / n))
    }
}

/// Positions of `A_s` whose weights are not identically zero.
///
/// Sorted ascending, so the active blocks keep the graded order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ActiveSet {
    positions: Vec<usize>,
}

impl ActiveSet {
    pub fn new(set: &MultiIndexSet, mut positions: Vec<usize>) -> Result<Self> {
        positions.sort_unstable();
        positions.dedup();
        if positions.is_empty() {
            return Err(Error::invalid("active set must be non-empty"));
        }
        if let Some(&bad) = positions.iter().find(|&&p| p >= set.m_s()) {
            return Err(Error::invalid(format!(
                "active position {bad} out of range for m_s = {}",
                set.m_s()
            )));
        }
        Ok(ActiveSet { positions })
    }

    /// Every index of the set is active.
    pub fn full(set: &MultiIndexSet) -> Self {
        ActiveSet {
            positions: (0..set.m_s()).collect(),
        }
    }

    /// From a boolean mask over `0..m_s`.
    pub fn from_mask(set: &MultiIndexSet, mask: &[bool]) -> Result<Self> {
        if mask.len() != set.m_s() {
            return Err(Error::DimensionMismatch {
                expected: set.m_s(),
                got: mask.len(),
                context: "active mask length",
            });
        }
        let positions = mask
            .iter()
            .enumerate()
            .filter_map(|(p, &on)| on.then_some(p))
            .collect();
        Self::new(set, positions)
    }

    pub fn positions(&self) -> &[usize] {
        &self.positions
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn contains(&self, pos: usize) -> bool {
        self.positions.binary_search(&pos).is_ok()
    }
}
