//! Partition point estimation: posterior similarity matrix, expected Binder
//! loss and a randomised greedy search with sweetening sweeps.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};

/// Sweetening sweeps per restart.
const MAX_SWEEPS: usize = 50;

/// Posterior co-clustering probabilities, stored densely row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    n: usize,
    values: Vec<f64>,
}

impl SimilarityMatrix {
    /// Checks symmetry, the unit diagonal and the `[0, 1]` range.
    pub fn from_rows(n: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != n * n {
            return Err(Error::input(format!("{} entries for a {n}x{n} matrix", values.len())));
        }
        for i in 0..n {
            if values[i * n + i] != 1.0 {
                return Err(Error::input(format!("diagonal entry {i} is not 1")));
            }
            for j in 0..n {
                let v = values[i * n + j];
                if !(0.0..=1.0).contains(&v) || v != values[j * n + i] {
                    return Err(Error::input(format!("entry ({i}, {j}) = {v} is out of range or asymmetric")));
                }
            }
        }
        Ok(SimilarityMatrix { n, values })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.n..(i + 1) * self.n]
    }
}

/// Fraction of draws in which each pair shares a label.
pub fn posterior_similarity<S: AsRef<[usize]> + Sync>(draws: &[S]) -> Result<SimilarityMatrix> {
    let first = draws
        .first()
        .ok_or_else(|| Error::input("posterior similarity needs at least one draw"))?;
    let n = first.as_ref().len();
    if let Some(k) = draws.iter().position(|d| d.as_ref().len() != n) {
        return Err(Error::input(format!("draw {k} has {} labels, expected {n}", draws[k].as_ref().len())));
    }
    let chunk = draws.len().div_ceil(4 * rayon::current_num_threads()).max(1);
    let counts = draws
        .par_chunks(chunk)
        .map(|part| {
            let mut c = vec![0u32; n * n];
            for d in part {
                let s = d.as_ref();
                for i in 0..n {
                    for j in i + 1..n {
                        if s[i] == s[j] {
                            c[i * n + j] += 1;
                        }
                    }
                }
            }
            c
        })
        .reduce(
            || vec![0u32; n * n],
            |mut a, b| {
                for (x, y) in a.iter_mut().zip(b) {
                    *x += y;
                }
                a
            },
        );
    let total = draws.len() as f64;
    let mut values = vec![0.0; n * n];
    for i in 0..n {
        values[i * n + i] = 1.0;
        for j in i + 1..n {
            let v = counts[i * n + j] as f64 / total;
            values[i * n + j] = v;
            values[j * n + i] = v;
        }
    }
    Ok(SimilarityMatrix { n, values })
}

/// `sum_{i<j} |1[s_i = s_j] - psm_ij|`.
pub fn binder_expected_loss(candidate: &[usize], psm: &SimilarityMatrix) -> f64 {
    let n = candidate.len();
    let mut loss = 0.0;
    for i in 0..n {
        let row = psm.row(i);
        for j in i + 1..n {
            loss += if candidate[i] == candidate[j] { 1.0 - row[j] } else { row[j] };
        }
    }
    loss
}

/// Relabels by first appearance.
pub fn first_appearance(labels: &[usize]) -> Vec<usize> {
    let mut map = std::collections::HashMap::new();
    labels
        .iter()
        .map(|&s| {
            let next = map.len();
            *map.entry(s).or_insert(next)
        })
        .collect()
}

/// Working partition for one restart. `cost[k]` is the change in loss from
/// putting the unit under consideration into cluster `k`, relative to a new
/// singleton: `sum_{j in k} (1 - 2 p_ij)`.
struct Search<'a> {
    psm: &'a SimilarityMatrix,
    labels: Vec<usize>,
    sizes: Vec<usize>,
    max_clusters: usize,
}

const UNASSIGNED: usize = usize::MAX;

impl Search<'_> {
    fn costs(&self, i: usize, cost: &mut Vec<f64>) {
        cost.clear();
        cost.resize(self.sizes.len(), 0.0);
        let row = self.psm.row(i);
        for (j, &s) in self.labels.iter().enumerate() {
            if s != UNASSIGNED && j != i {
                cost[s] += 1.0 - 2.0 * row[j];
            }
        }
    }

    /// Cheapest existing label, or a fresh one when that is strictly better
    /// and allowed. Ties go to the lowest label.
    fn best(&self, cost: &[f64], open: usize) -> usize {
        let mut best = None;
        for (k, &c) in cost.iter().enumerate() {
            if self.sizes[k] == 0 {
                continue;
            }
            if best.is_none_or(|(_, b)| c < b) {
                best = Some((k, c));
            }
        }
        match best {
            Some((k, c)) if c <= 0.0 || open >= self.max_clusters => k,
            _ => self.fresh_label(),
        }
    }

    fn fresh_label(&self) -> usize {
        self.sizes.iter().position(|&s| s == 0).unwrap_or(self.sizes.len())
    }

    fn place(&mut self, i: usize, k: usize) {
        if k == self.sizes.len() {
            self.sizes.push(0);
        }
        self.sizes[k] += 1;
        self.labels[i] = k;
    }

    fn open(&self) -> usize {
        self.sizes.iter().filter(|&&s| s > 0).count()
    }

    fn greedy(&mut self, order: &[usize]) {
        let mut cost = Vec::new();
        for &i in order {
            self.costs(i, &mut cost);
            let k = self.best(&cost, self.open());
            self.place(i, k);
        }
    }

    /// One-unit reallocation sweeps until nothing moves.
    fn sweeten(&mut self) {
        let mut cost = Vec::new();
        for _ in 0..MAX_SWEEPS {
            let mut moved = false;
            for i in 0..self.labels.len() {
                let cur = self.labels[i];
                self.sizes[cur] -= 1;
                self.labels[i] = UNASSIGNED;
                self.costs(i, &mut cost);
                let stay = if self.sizes[cur] == 0 { 0.0 } else { cost[cur] };
                let k = self.best(&cost, self.open());
                let new_cost = if k < cost.len() && self.sizes[k] > 0 { cost[k] } else { 0.0 };
                if new_cost < stay && !(self.sizes[cur] == 0 && new_cost == 0.0) {
                    self.place(i, k);
                    moved = true;
                } else {
                    self.place(i, cur);
                }
            }
            if !moved {
                break;
            }
        }
    }
}

fn restart(psm: &SimilarityMatrix, max_clusters: usize, seed: u64, stream: u64) -> (f64, Vec<usize>) {
    let n = psm.n();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let mut search = Search {
        psm,
        labels: vec![UNASSIGNED; n],
        sizes: Vec::new(),
        max_clusters,
    };
    search.greedy(&order);
    search.sweeten();
    let labels = first_appearance(&search.labels);
    (binder_expected_loss(&labels, psm), labels)
}

/// Minimises the expected Binder loss by randomised sequential allocation
/// followed by sweetening sweeps, keeping the best of `n_restarts` runs.
///
/// Restart `r` uses stream `r` of a ChaCha generator keyed by one draw from
/// `rng`, so adding restarts never makes the result worse. Ties between
/// restarts go to the earliest one.
pub fn search_optimal_partition<R: Rng + ?Sized>(
    psm: &SimilarityMatrix,
    n_restarts: usize,
    max_clusters: Option<usize>,
    rng: &mut R,
) -> Vec<usize> {
    let seed: u64 = rng.random();
    if psm.n() == 0 {
        return Vec::new();
    }
    let cap = max_clusters.unwrap_or(usize::MAX).max(1);
    let results: Vec<(f64, Vec<usize>)> = (0..n_restarts.max(1) as u64)
        .into_par_iter()
        .map(|r| restart(psm, cap, seed, r))
        .collect();
    let mut best = 0;
    for (k, r) in results.iter().enumerate() {
        if r.0 < results[best].0 {
            best = k;
        }
    }
    results.into_iter().nth(best).map(|r| r.1).unwrap_or_default()
}

/// Adjusted Rand index between two labelings of the same units.
pub fn adjusted_rand_index(a: &[usize], b: &[usize]) -> f64 {
    assert_eq!(a.len(), b.len(), "labelings differ in length");
    let n = a.len();
    let a = first_appearance(a);
    let b = first_appearance(b);
    let ka = a.iter().max().map_or(0, |v| v + 1);
    let kb = b.iter().max().map_or(0, |v| v + 1);
    let mut table = vec![0u64; ka * kb];
    for (&x, &y) in a.iter().zip(&b) {
        table[x * kb + y] += 1;
    }
    let pairs = |v: u64| (v * v.saturating_sub(1)) as f64 / 2.0;
    let index: f64 = table.iter().map(|&v| pairs(v)).sum();
    let rows: f64 = (0..ka).map(|x| pairs(table[x * kb..(x + 1) * kb].iter().sum())).sum();
    let cols: f64 = (0..kb).map(|y| pairs((0..ka).map(|x| table[x * kb + y]).sum())).sum();
    let total = pairs(n as u64);
    if total == 0.0 {
        return 1.0;
    }
    let expected = rows * cols / total;
    let max = 0.5 * (rows + cols);
    if max == expected {
        return 1.0;
    }
    (index - expected) / (max - expected)
}

#[cfg(test)]
pub(crate) mod fixtures {
    use super::*;
    use crate::dp::enumerate_partitions;

    /// A psm averaged from a handful of random partitions, so it is a
    /// genuine similarity matrix with some structure.
    pub fn random_psm<R: Rng>(rng: &mut R, n: usize) -> SimilarityMatrix {
        let k = rng.random_range(1..=n.max(1));
        let draws: Vec<Vec<usize>> = (0..rng.random_range(2..12))
            .map(|_| (0..n).map(|_| rng.random_range(0..k)).collect())
            .collect();
        posterior_similarity(&draws).unwrap()
    }

    pub fn exhaustive_minimum(psm: &SimilarityMatrix) -> f64 {
        enumerate_partitions(psm.n())
            .iter()
            .map(|p| binder_expected_loss(p, psm))
            .fold(f64::INFINITY, f64::min)
    }
}
