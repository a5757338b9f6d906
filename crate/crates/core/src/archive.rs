//! Unstructured behaviour archive.
//!
//! A candidate enters when its nearest neighbour is farther than `l`;
//! otherwise it competes with that single neighbour on fitness. Nearest
//! neighbours come from an exact linear scan, ties resolved by insertion order.

use crate::controller::Genotype;
use crate::{Error, Result};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Side of the square reference grid used for coverage.
pub const COVERAGE_CELLS: usize = 32;
/// The coverage grid spans `[-COVERAGE_EXTENT, COVERAGE_EXTENT]^2` metres.
pub const COVERAGE_EXTENT: f64 = 0.6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Solution {
    pub id: u64,
    pub genotype: Genotype,
    pub bd: [f64; 2],
    pub fitness: f64,
    /// Real executions folded into `bd` and `fitness`.
    pub n_evals: u32,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AddOutcome {
    Added,
    Replaced(u64),
    Rejected,
}

impl AddOutcome {
    pub fn inserted(self) -> bool {
        !matches!(self, AddOutcome::Rejected)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArchiveMetrics {
    pub size: usize,
    pub coverage: f64,
    pub max_fitness: f64,
    pub qd_score: f64,
}

pub fn bd_distance(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

/// Reference-grid cell of a descriptor; out-of-range values clamp to the border.
pub fn coverage_cell(bd: [f64; 2]) -> (usize, usize) {
    let idx = |v: f64| {
        let t = (v + COVERAGE_EXTENT) / (2.0 * COVERAGE_EXTENT) * COVERAGE_CELLS as f64;
        (t.floor().max(0.0) as usize).min(COVERAGE_CELLS - 1)
    };
    (idx(bd[0]), idx(bd[1]))
}

/// Mean distance from `bd` to its `k` nearest points; fewer than `k` points
/// averages over all of them, none gives `+inf`.
pub fn novelty_among<'a, I>(bd: [f64; 2], points: I, k: usize) -> f64
where
    I: IntoIterator<Item = &'a [f64; 2]>,
{
    let mut d: Vec<f64> = points.into_iter().map(|p| bd_distance(bd, *p)).collect();
    if d.is_empty() || k == 0 {
        return f64::INFINITY;
    }
    let k = k.min(d.len());
    d.select_nth_unstable_by(k - 1, f64::total_cmp);
    let mut nearest = d[..k].to_vec();
    // Fixed summation order keeps the score independent of archive order.
    nearest.sort_by(f64::total_cmp);
    nearest.iter().sum::<f64>() / k as f64
}

#[derive(Clone, Debug, PartialEq)]
pub struct UnstructuredArchive {
    solutions: Vec<Solution>,
    /// Addition threshold in metres.
    pub l: f64,
    /// Neighbour count for novelty.
    pub k: usize,
}

impl UnstructuredArchive {
    pub fn new(l: f64, k: usize) -> Self {
        Self { solutions: Vec::new(), l, k }
    }

    pub fn solutions(&self) -> &[Solution] {
        &self.solutions
    }

    pub fn len(&self) -> usize {
        self.solutions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.solutions.is_empty()
    }

    pub fn get(&self, id: u64) -> Option<&Solution> {
        self.solutions.iter().find(|s| s.id == id)
    }

    pub fn contains(&self, id: u64) -> bool {
        self.get(id).is_some()
    }

    /// Index and distance of the nearest member; first one wins ties.
    pub fn nearest(&self, bd: [f64; 2]) -> Option<(usize, f64)> {
        let mut best: Option<(usize, f64)> = None;
        for (i, s) in self.solutions.iter().enumerate() {
            let d = bd_distance(bd, s.bd);
            if best.is_none_or(|(_, bd)| d < bd) {
                best = Some((i, d));
            }
        }
        best
    }

    pub fn try_add(&mut self, s: Solution) -> AddOutcome {
        match self.nearest(s.bd) {
            None => {
                self.solutions.push(s);
                AddOutcome::Added
            }
            Some((_, d)) if d > self.l => {
                self.solutions.push(s);
                AddOutcome::Added
            }
            Some((i, _)) if s.fitness > self.solutions[i].fitness => {
                let old = std::mem::replace(&mut self.solutions[i], s);
                AddOutcome::Replaced(old.id)
            }
            Some(_) => AddOutcome::Rejected,
        }
    }

    pub fn remove(&mut self, id: u64) -> Result<Solution> {
        let i = self.solutions.iter().position(|s| s.id == id).ok_or(Error::UnknownSolution(id))?;
        Ok(self.solutions.remove(i))
    }

    pub fn novelty(&self, bd: [f64; 2]) -> f64 {
        novelty_among(bd, self.solutions.iter().map(|s| &s.bd), self.k)
    }

    pub fn metrics(&self) -> ArchiveMetrics {
        let mut cells = vec![false; COVERAGE_CELLS * COVERAGE_CELLS];
        for s in &self.solutions {
            let (cx, cy) = coverage_cell(s.bd);
            cells[cy * COVERAGE_CELLS + cx] = true;
        }
        let occupied = cells.iter().filter(|c| **c).count();
        ArchiveMetrics {
            size: self.solutions.len(),
            coverage: occupied as f64 / cells.len() as f64,
            max_fitness: self.solutions.iter().map(|s| s.fitness).fold(f64::NEG_INFINITY, f64::max),
            qd_score: self.solutions.iter().map(|s| 1.0 - s.fitness.abs() / PI).sum(),
        }
    }

    /// Rebuilds an archive from stored members without re-running admission.
    pub fn from_solutions(solutions: Vec<Solution>, l: f64, k: usize) -> Self {
        Self { solutions, l, k }
    }
}
