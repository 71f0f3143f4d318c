//! k-nearest, reverse-nearest and symmetric-nearest neighbor sets.
//!
//! `NN_k(x)` lists `x` first (its own nearest neighbor, so `NN_1(x) = {x}`)
//! followed by the `k - 1` closest other observations, ties broken by the
//! smaller id. `RNN_k(x) = {l : x in NN_k(l)}` and
//! `SNN_k(x) = NN_k(x) ∩ RNN_k(x)`.

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{LamaError, Result};
use crate::kernel::SquaredDistances;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NeighborhoodOptions {
    pub k: usize,
    /// When false, `NN_k(x)` holds the k closest observations other than `x`.
    pub include_self: bool,
}

impl NeighborhoodOptions {
    pub fn new(k: usize) -> Self {
        NeighborhoodOptions { k, include_self: true }
    }
}

#[derive(Debug, Clone)]
pub struct NeighborhoodIndex {
    k: usize,
    include_self: bool,
    nn: Vec<Vec<usize>>,
    rnn: Vec<Vec<usize>>,
    snn: Vec<Vec<usize>>,
}

impl NeighborhoodIndex {
    pub fn build(points: &DMatrix<f64>, opts: NeighborhoodOptions) -> Result<Self> {
        Self::from_distances(&SquaredDistances::from_points(points), opts)
    }

    pub fn from_distances(dist: &SquaredDistances, opts: NeighborhoodOptions) -> Result<Self> {
        let n = dist.len();
        let available = if opts.include_self { n } else { n.saturating_sub(1) };
        if opts.k == 0 || opts.k > available {
            return Err(LamaError::InvalidParameter(format!(
                "neighborhood size k = {} must lie in [1, {available}]",
                opts.k
            )));
        }
        let others = if opts.include_self { opts.k - 1 } else { opts.k };

        let nn: Vec<Vec<usize>> = (0..n)
            .into_par_iter()
            .map(|x| {
                let row = dist.row(x);
                let mut candidates: Vec<usize> = (0..n).filter(|&j| j != x).collect();
                let by_distance = |a: &usize, b: &usize| row[*a].total_cmp(&row[*b]).then(a.cmp(b));
                if others < candidates.len() {
                    candidates.select_nth_unstable_by(others, by_distance);
                    candidates.truncate(others);
                }
                candidates.sort_unstable_by(by_distance);
                let mut list = Vec::with_capacity(opts.k);
                if opts.include_self {
                    list.push(x);
                }
                list.extend(candidates);
                list
            })
            .collect();

        let mut rnn = vec![Vec::new(); n];
        for (l, neighbors) in nn.iter().enumerate() {
            for &x in neighbors {
                rnn[x].push(l);
            }
        }
        // rnn lists are filled in ascending l, hence already sorted.

        let snn = (0..n)
            .map(|x| {
                let mut s: Vec<usize> = nn[x]
                    .iter()
                    .copied()
                    .filter(|l| rnn[x].binary_search(l).is_ok())
                    .collect();
                s.sort_unstable();
                s
            })
            .collect();

        Ok(NeighborhoodIndex {
            k: opts.k,
            include_self: opts.include_self,
            nn,
            rnn,
            snn,
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn includes_self(&self) -> bool {
        self.include_self
    }

    pub fn len(&self) -> usize {
        self.nn.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nn.is_empty()
    }

    /// Nearest neighbors of `x`, ascending by distance.
    pub fn nn(&self, x: usize) -> &[usize] {
        &self.nn[x]
    }

    /// Reverse nearest neighbors of `x`, ascending by id.
    pub fn rnn(&self, x: usize) -> &[usize] {
        &self.rnn[x]
    }

    /// Symmetric nearest neighbors of `x`, ascending by id.
    pub fn snn(&self, x: usize) -> &[usize] {
        &self.snn[x]
    }

    pub fn in_nn(&self, x: usize, candidate: usize) -> bool {
        self.nn[x].contains(&candidate)
    }

    pub fn in_rnn(&self, x: usize, candidate: usize) -> bool {
        self.rnn[x].binary_search(&candidate).is_ok()
    }

    pub fn in_snn(&self, x: usize, candidate: usize) -> bool {
        self.snn[x].binary_search(&candidate).is_ok()
    }
}
