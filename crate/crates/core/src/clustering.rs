//! Deterministic k-medoids (PAM: greedy BUILD, then best-improvement SWAP)
//! over a precomputed distance matrix, and an exhaustive oracle for small
//! instances.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::DistanceMatrix;

/// Upper bound on medoid sets enumerated by [`brute_force_kmedoids`].
pub const BRUTE_FORCE_LIMIT: u128 = 1_000_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Clustering {
    /// Medoid indices, ascending. Cluster `c` is the one around `medoids[c]`.
    pub medoids: Vec<usize>,
    pub labels: Vec<usize>,
    /// Sum over points of the distance to their medoid.
    pub cost: f64,
}

impl Clustering {
    /// Assigns every point to its nearest medoid (lowest cluster id on ties;
    /// medoids always label themselves).
    pub fn assign(d: &DistanceMatrix, medoids: &[usize]) -> Self {
        let mut medoids = medoids.to_vec();
        medoids.sort_unstable();
        let n = d.n();
        let mut labels = vec![0usize; n];
        let mut cost = 0f64;
        for (i, label) in labels.iter_mut().enumerate() {
            let (best, dist) = match medoids.binary_search(&i) {
                Ok(own) => (own, 0.0),
                Err(_) => {
                    let row = d.row(i);
                    let mut best = 0;
                    for c in 1..medoids.len() {
                        if row[medoids[c]] < row[medoids[best]] {
                            best = c;
                        }
                    }
                    (best, row[medoids[best]] as f64)
                }
            };
            *label = best;
            cost += dist;
        }
        Self {
            medoids,
            labels,
            cost,
        }
    }

    pub fn k(&self) -> usize {
        self.medoids.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PamOptions {
    pub max_passes: usize,
    /// When set, ties are broken in a seeded random index order instead of by lowest index.
    pub seed: Option<u64>,
}

impl Default for PamOptions {
    fn default() -> Self {
        Self {
            max_passes: 100,
            seed: None,
        }
    }
}

pub fn kmedoids(d: &DistanceMatrix, k: usize) -> Result<Clustering> {
    kmedoids_with(d, k, PamOptions::default())
}

pub fn kmedoids_with(d: &DistanceMatrix, k: usize, opts: PamOptions) -> Result<Clustering> {
    let n = d.n();
    if k == 0 || k > n {
        return Err(Error::KTooLarge { k, n });
    }
    let medoids = match opts.seed {
        None => pam(d, k, opts.max_passes),
        Some(seed) => {
            let mut perm: Vec<usize> = (0..n).collect();
            perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            let shuffled = d.permuted(&perm);
            pam(&shuffled, k, opts.max_passes)
                .into_iter()
                .map(|m| perm[m])
                .collect()
        }
    };
    Ok(Clustering::assign(d, &medoids))
}

/// Distance of each point to its nearest and second-nearest medoid, plus the
/// slot of the nearest one.
struct Nearest {
    slot: Vec<usize>,
    near: Vec<f64>,
    second: Vec<f64>,
}

impl Nearest {
    fn compute(d: &DistanceMatrix, medoids: &[usize]) -> Self {
        let n = d.n();
        let mut slot = vec![0; n];
        let mut near = vec![f64::INFINITY; n];
        let mut second = vec![f64::INFINITY; n];
        for o in 0..n {
            let row = d.row(o);
            for (s, &m) in medoids.iter().enumerate() {
                let v = row[m] as f64;
                if v < near[o] {
                    second[o] = near[o];
                    near[o] = v;
                    slot[o] = s;
                } else if v < second[o] {
                    second[o] = v;
                }
            }
        }
        Self { slot, near, second }
    }

    fn cost(&self) -> f64 {
        self.near.iter().sum()
    }
}

fn pam(d: &DistanceMatrix, k: usize, max_passes: usize) -> Vec<usize> {
    let mut medoids = build(d, k);
    if k == d.n() {
        return medoids;
    }
    for _ in 0..max_passes {
        let nearest = Nearest::compute(d, &medoids);
        let cost = nearest.cost();
        let Some((delta, slot, candidate)) = best_swap(d, &medoids, &nearest) else {
            break;
        };
        if delta >= -1e-12 * (1.0 + cost.abs()) {
            break;
        }
        medoids[slot] = candidate;
    }
    medoids
}

/// Greedy initialization: the point with the smallest row sum, then repeatedly
/// the point that lowers the total cost most.
fn build(d: &DistanceMatrix, k: usize) -> Vec<usize> {
    let n = d.n();
    let first = (0..n)
        .map(|i| (i, d.row(i).iter().map(|&v| v as f64).sum::<f64>()))
        .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)))
        .map(|(i, _)| i)
        .expect("n >= 1");
    let mut medoids = vec![first];
    let mut is_medoid = vec![false; n];
    is_medoid[first] = true;
    let mut near: Vec<f64> = d.row(first).iter().map(|&v| v as f64).collect();

    while medoids.len() < k {
        let (pick, _) = (0..n)
            .into_par_iter()
            .filter(|&c| !is_medoid[c])
            .map(|c| {
                let row = d.row(c);
                let gain: f64 = near
                    .iter()
                    .zip(row)
                    .map(|(&dn, &dc)| (dn - dc as f64).max(0.0))
                    .sum();
                (c, gain)
            })
            .reduce(
                || (usize::MAX, f64::NEG_INFINITY),
                |a, b| match a.1.total_cmp(&b.1) {
                    std::cmp::Ordering::Greater => a,
                    std::cmp::Ordering::Less => b,
                    std::cmp::Ordering::Equal => {
                        if a.0 <= b.0 {
                            a
                        } else {
                            b
                        }
                    }
                },
            );
        medoids.push(pick);
        is_medoid[pick] = true;
        for (dn, &dc) in near.iter_mut().zip(d.row(pick)) {
            *dn = dn.min(dc as f64);
        }
    }
    medoids
}

/// Best single swap over all (medoid slot, non-medoid) pairs as
/// `(cost delta, slot, candidate)`. Ties go to the lowest removed medoid index,
/// then the lowest candidate index.
fn best_swap(d: &DistanceMatrix, medoids: &[usize], nearest: &Nearest) -> Option<(f64, usize, usize)> {
    let n = d.n();
    let k = medoids.len();
    let mut is_medoid = vec![false; n];
    for &m in medoids {
        is_medoid[m] = true;
    }

    let key = |(delta, slot, cand): (f64, usize, usize)| (delta, medoids[slot], cand);
    let better = |a: (f64, usize, usize), b: (f64, usize, usize)| {
        let (ka, kb) = (key(a), key(b));
        match ka.0.total_cmp(&kb.0) {
            std::cmp::Ordering::Less => a,
            std::cmp::Ordering::Greater => b,
            std::cmp::Ordering::Equal => {
                if (ka.1, ka.2) <= (kb.1, kb.2) {
                    a
                } else {
                    b
                }
            }
        }
    };

    (0..n)
        .into_par_iter()
        .filter(|&h| !is_medoid[h])
        .map(|h| {
            let row = d.row(h);
            let mut shared = 0f64;
            let mut per_slot = vec![0f64; k];
            for o in 0..n {
                let d_oh = row[o] as f64;
                let near = nearest.near[o];
                let gain_if_kept = (d_oh - near).min(0.0);
                shared += gain_if_kept;
                let if_removed = d_oh.min(nearest.second[o]) - near;
                per_slot[nearest.slot[o]] += if_removed - gain_if_kept;
            }
            (0..k)
                .map(|s| (shared + per_slot[s], s, h))
                .reduce(better)
                .expect("k >= 1")
        })
        .reduce_with(better)
}

fn binomial(n: usize, k: usize) -> u128 {
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) as u128 / (i + 1) as u128;
        if acc > BRUTE_FORCE_LIMIT * 1_000 {
            return acc;
        }
    }
    acc
}

/// Exact optimum by enumerating every medoid set in lexicographic order; the
/// first set reaching the minimum cost wins.
pub fn brute_force_kmedoids(d: &DistanceMatrix, k: usize) -> Result<Clustering> {
    let n = d.n();
    if k == 0 || k > n {
        return Err(Error::KTooLarge { k, n });
    }
    if binomial(n, k) > BRUTE_FORCE_LIMIT {
        return Err(Error::InstanceTooLarge { n, k });
    }
    let mut combo: Vec<usize> = (0..k).collect();
    let mut best: Option<Clustering> = None;
    loop {
        let candidate = Clustering::assign(d, &combo);
        if best.as_ref().is_none_or(|b| candidate.cost < b.cost) {
            best = Some(candidate);
        }
        // next combination in lexicographic order
        let mut i = k;
        loop {
            if i == 0 {
                return Ok(best.expect("at least one combination"));
            }
            i -= 1;
            if combo[i] < n - k + i {
                break;
            }
        }
        combo[i] += 1;
        for j in i + 1..k {
            combo[j] = combo[j - 1] + 1;
        }
    }
}
