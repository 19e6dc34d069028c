//! Frame dissimilarities and dense distance matrices.

use std::io::{Read, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{GaussianSummary, LatentVector, ScdaDescriptor};

/// Euclidean distance, accumulated in f64.
pub fn l2<T: Copy + Into<f64>>(a: &[T], b: &[T]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch(a.len(), b.len()));
    }
    Ok(l2_unchecked(a, b))
}

fn l2_unchecked<T: Copy + Into<f64>>(a: &[T], b: &[T]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = x.into() - y.into();
            d * d
        })
        .sum::<f64>()
        .sqrt()
}

/// 2-Wasserstein distance between two univariate Gaussians.
pub fn wasserstein_1d(g1: &GaussianSummary, g2: &GaussianSummary) -> f64 {
    let dm = g1.mu - g2.mu;
    let ds = g1.sigma - g2.sigma;
    (dm * dm + ds * ds).sqrt()
}

/// `|i - j| / (n - 1)`, or 0 for a single frame.
pub fn temporal_distance(i: usize, j: usize, n: usize) -> f64 {
    if n <= 1 {
        return 0.0;
    }
    i.abs_diff(j) as f64 / (n - 1) as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum MetricTag {
    L2,
    UnivariateWasserstein,
    Blended(f64),
}

/// Frame descriptor of any supported kind.
#[derive(Debug, Clone, PartialEq)]
pub enum Descriptor {
    Latent(LatentVector),
    Gaussian(GaussianSummary),
    Scda(ScdaDescriptor),
}

impl Descriptor {
    fn kind(&self) -> &'static str {
        match self {
            Descriptor::Latent(_) => "latent",
            Descriptor::Gaussian(_) => "gaussian",
            Descriptor::Scda(_) => "scda",
        }
    }
}

/// Dense symmetric matrix of pairwise dissimilarities, stored as f32.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    n: usize,
    values: Vec<f32>,
    tag: MetricTag,
}

impl DistanceMatrix {
    /// Builds a matrix from row-major values, checking symmetry, the zero
    /// diagonal and non-negativity.
    pub fn from_values(n: usize, values: Vec<f32>, tag: MetricTag) -> Result<Self> {
        if n == 0 {
            return Err(Error::NoDescriptors);
        }
        if values.len() != n * n {
            return Err(Error::ShapeMismatch(format!(
                "{n}x{n} matrix needs {} values, got {}",
                n * n,
                values.len()
            )));
        }
        let m = Self { n, values, tag };
        m.check()?;
        Ok(m)
    }

    /// Builds a matrix from a symmetric function of index pairs; only `i < j` is evaluated.
    pub fn from_fn<F>(n: usize, tag: MetricTag, f: F) -> Result<Self>
    where
        F: Fn(usize, usize) -> f64 + Sync,
    {
        if n == 0 {
            return Err(Error::NoDescriptors);
        }
        let mut values = vec![0f32; n * n];
        values.par_chunks_mut(n).enumerate().for_each(|(i, row)| {
            for (j, cell) in row.iter_mut().enumerate().skip(i + 1) {
                *cell = f(i, j) as f32;
            }
        });
        for i in 0..n {
            for j in 0..i {
                values[i * n + j] = values[j * n + i];
            }
        }
        let m = Self { n, values, tag };
        debug_assert!(m.check().is_ok(), "{:?}", m.check());
        Ok(m)
    }

    fn check(&self) -> Result<()> {
        let n = self.n;
        for i in 0..n {
            if self.values[i * n + i] != 0.0 {
                return Err(Error::ShapeMismatch(format!("diagonal entry {i} is not zero")));
            }
            for j in 0..n {
                let v = self.values[i * n + j];
                if !(v.is_finite() && v >= 0.0) {
                    return Err(Error::ShapeMismatch(format!(
                        "entry ({i}, {j}) = {v} is negative or non-finite"
                    )));
                }
                let asym = (v as f64 - self.values[j * n + i] as f64).abs();
                if asym > 1e-9 {
                    return Err(Error::NotSymmetric(asym));
                }
            }
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn tag(&self) -> MetricTag {
        self.tag
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f32 {
        self.values[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.values[i * self.n..(i + 1) * self.n]
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    /// Largest off-diagonal entry (0 for a 1x1 matrix).
    pub fn max_off_diagonal(&self) -> f32 {
        let n = self.n;
        (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| self.get(i, j))
            .fold(0.0, f32::max)
    }

    /// Symmetric reordering: entry `(i, j)` of the result is `(perm[i], perm[j])` of `self`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let n = self.n;
        assert_eq!(perm.len(), n);
        let mut values = vec![0f32; n * n];
        for i in 0..n {
            for j in 0..n {
                values[i * n + j] = self.get(perm[i], perm[j]);
            }
        }
        Self {
            n,
            values,
            tag: self.tag,
        }
    }
}

/// Which dissimilarity to apply to a descriptor list.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    L2,
    UnivariateWasserstein,
}

pub fn distance_matrix(descriptors: &[Descriptor], metric: Metric) -> Result<DistanceMatrix> {
    let first = descriptors.first().ok_or(Error::NoDescriptors)?;
    if descriptors.iter().any(|d| d.kind() != first.kind()) {
        return Err(Error::MixedDescriptorKinds);
    }
    let n = descriptors.len();
    match (first, metric) {
        (Descriptor::Latent(_), Metric::L2) => {
            let rows: Vec<&[f32]> = descriptors
                .iter()
                .map(|d| match d {
                    Descriptor::Latent(v) => v.values.as_slice(),
                    _ => unreachable!(),
                })
                .collect();
            check_lengths(rows.iter().map(|r| r.len()))?;
            DistanceMatrix::from_fn(n, MetricTag::L2, |i, j| l2_unchecked(rows[i], rows[j]))
        }
        (Descriptor::Scda(_), Metric::L2) => {
            let rows: Vec<&[f64]> = descriptors
                .iter()
                .map(|d| match d {
                    Descriptor::Scda(v) => v.values.as_slice(),
                    _ => unreachable!(),
                })
                .collect();
            check_lengths(rows.iter().map(|r| r.len()))?;
            DistanceMatrix::from_fn(n, MetricTag::L2, |i, j| l2_unchecked(rows[i], rows[j]))
        }
        (Descriptor::Gaussian(_), Metric::UnivariateWasserstein) => {
            let gs: Vec<&GaussianSummary> = descriptors
                .iter()
                .map(|d| match d {
                    Descriptor::Gaussian(g) => g,
                    _ => unreachable!(),
                })
                .collect();
            DistanceMatrix::from_fn(n, MetricTag::UnivariateWasserstein, |i, j| {
                wasserstein_1d(gs[i], gs[j])
            })
        }
        (d, m) => Err(Error::MetricMismatch {
            kind: d.kind(),
            metric: match m {
                Metric::L2 => "l2",
                Metric::UnivariateWasserstein => "univariate-wasserstein",
            },
        }),
    }
}

fn check_lengths(mut lens: impl Iterator<Item = usize>) -> Result<()> {
    let first = lens.next().unwrap_or(0);
    match lens.find(|&l| l != first) {
        Some(other) => Err(Error::LengthMismatch(first, other)),
        None => Ok(()),
    }
}

/// Convex blend of the max-normalized feature distances with the temporal
/// distance: `(1 - lambda) * D / max(D) + lambda * |i - j| / (n - 1)`.
pub fn blended_matrix(feature: &DistanceMatrix, lambda: f64) -> Result<DistanceMatrix> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::InvalidLambda(lambda));
    }
    let n = feature.n();
    let max = feature.max_off_diagonal() as f64;
    let scale = if max > 0.0 { 1.0 / max } else { 0.0 };
    DistanceMatrix::from_fn(n, MetricTag::Blended(lambda), |i, j| {
        (1.0 - lambda) * feature.get(i, j) as f64 * scale + lambda * temporal_distance(i, j, n)
    })
}

const MATRIX_MAGIC: &[u8; 4] = b"VSDM";
const MATRIX_VERSION: u8 = 1;
const DTYPE_F32: u8 = 4;

/// Writes the debugging dump: `VSDM`, version, dtype, metric tag, lambda (f64),
/// `n` (u64), then the lower triangle including the diagonal, row-major. All
/// numbers are little-endian.
pub fn write_matrix<W: Write>(m: &DistanceMatrix, mut out: W) -> Result<()> {
    let (tag, lambda) = match m.tag {
        MetricTag::L2 => (0u8, 0.0),
        MetricTag::UnivariateWasserstein => (1, 0.0),
        MetricTag::Blended(l) => (2, l),
    };
    out.write_all(MATRIX_MAGIC)?;
    out.write_all(&[MATRIX_VERSION, DTYPE_F32, tag, 0])?;
    out.write_all(&lambda.to_le_bytes())?;
    out.write_all(&(m.n as u64).to_le_bytes())?;
    for i in 0..m.n {
        for &v in &m.row(i)[..=i] {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_matrix<R: Read>(mut input: R) -> Result<DistanceMatrix> {
    let bad = |msg: &str| Error::InvalidMatrixFile(msg.to_string());
    let mut header = [0u8; 24];
    input.read_exact(&mut header).map_err(|_| bad("truncated header"))?;
    if &header[..4] != MATRIX_MAGIC {
        return Err(bad("bad magic"));
    }
    if header[4] != MATRIX_VERSION || header[5] != DTYPE_F32 {
        return Err(bad("unsupported version or dtype"));
    }
    let lambda = f64::from_le_bytes(header[8..16].try_into().unwrap());
    let tag = match header[6] {
        0 => MetricTag::L2,
        1 => MetricTag::UnivariateWasserstein,
        2 => MetricTag::Blended(lambda),
        _ => return Err(bad("unknown metric tag")),
    };
    let n = u64::from_le_bytes(header[16..24].try_into().unwrap()) as usize;
    let mut values = vec![0f32; n * n];
    let mut buf = [0u8; 4];
    for i in 0..n {
        for j in 0..=i {
            input.read_exact(&mut buf).map_err(|_| bad("truncated body"))?;
            let v = f32::from_le_bytes(buf);
            values[i * n + j] = v;
            values[j * n + i] = v;
        }
    }
    DistanceMatrix::from_values(n, values, tag)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn gauss(mu: f64, sigma: f64) -> GaussianSummary {
        GaussianSummary {
            frame_index: 0,
            mu,
            sigma,
        }
    }

    fn latent(i: usize, v: Vec<f32>) -> Descriptor {
        Descriptor::Latent(LatentVector::new(i, v).unwrap())
    }

    #[test]
    fn l2_examples() {
        assert_eq!(l2(&[1.0f32, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(l2(&[0.0f64, 0.0], &[3.0, 4.0]).unwrap(), 5.0);
        assert!(matches!(
            l2(&[0.0f64], &[1.0, 2.0]),
            Err(Error::LengthMismatch(1, 2))
        ));
    }

    #[test]
    fn wasserstein_examples() {
        assert_eq!(wasserstein_1d(&gauss(1.0, 2.0), &gauss(1.0, 2.0)), 0.0);
        assert_eq!(wasserstein_1d(&gauss(0.0, 1.0), &gauss(3.0, 5.0)), 5.0);
    }

    #[test]
    fn temporal_examples() {
        assert_eq!(temporal_distance(4, 4, 9), 0.0);
        assert_eq!(temporal_distance(0, 8, 9), 1.0);
        assert_eq!(temporal_distance(1, 0, 2), 1.0);
        assert!((temporal_distance(2, 5, 11) - 0.3).abs() < 1e-15);
        assert_eq!(temporal_distance(0, 0, 1), 0.0);
    }

    #[test]
    fn blend_endpoints() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let descs: Vec<Descriptor> = (0..6)
            .map(|i| latent(i, (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect()))
            .collect();
        let d = distance_matrix(&descs, Metric::L2).unwrap();
        let max = d.max_off_diagonal() as f64;

        let b0 = blended_matrix(&d, 0.0).unwrap();
        let b1 = blended_matrix(&d, 1.0).unwrap();
        for i in 0..6 {
            for j in 0..6 {
                let norm = d.get(i, j) as f64 / max;
                assert!((b0.get(i, j) as f64 - norm).abs() < 1e-6);
                assert!((b1.get(i, j) as f64 - temporal_distance(i, j, 6)).abs() < 1e-7);
            }
        }
        assert_eq!(b1.tag(), MetricTag::Blended(1.0));
    }

    #[test]
    fn blend_half_two_by_two() {
        let d = DistanceMatrix::from_values(2, vec![0.0, 1.0, 1.0, 0.0], MetricTag::L2).unwrap();
        let b = blended_matrix(&d, 0.5).unwrap();
        assert_eq!(b.get(0, 1), 1.0);
    }

    #[test]
    fn blend_of_zero_matrix_is_temporal() {
        let d = DistanceMatrix::from_values(3, vec![0.0; 9], MetricTag::L2).unwrap();
        let b = blended_matrix(&d, 0.25).unwrap();
        assert!((b.get(0, 2) - 0.25).abs() < 1e-7);
    }

    #[test]
    fn invalid_lambda() {
        let d = DistanceMatrix::from_values(1, vec![0.0], MetricTag::L2).unwrap();
        assert!(matches!(blended_matrix(&d, 1.5), Err(Error::InvalidLambda(_))));
        assert!(matches!(blended_matrix(&d, -0.1), Err(Error::InvalidLambda(_))));
    }

    #[test]
    fn small_matrices() {
        let one = distance_matrix(&[latent(0, vec![1.0, 2.0])], Metric::L2).unwrap();
        assert_eq!(one.values(), &[0.0]);
        let two = distance_matrix(&[latent(0, vec![1.0]), latent(1, vec![1.0])], Metric::L2).unwrap();
        assert!(two.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn matches_brute_force_double_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let rows: Vec<Vec<f32>> = (0..4)
            .map(|_| (0..5).map(|_| rng.gen_range(-3.0..3.0)).collect())
            .collect();
        let descs: Vec<Descriptor> = rows.iter().cloned().enumerate().map(|(i, r)| latent(i, r)).collect();
        let d = distance_matrix(&descs, Metric::L2).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                let mut s = 0f64;
                for k in 0..5 {
                    let diff = rows[i][k] as f64 - rows[j][k] as f64;
                    s += diff * diff;
                }
                assert_eq!(d.get(i, j), s.sqrt() as f32);
            }
        }
    }

    #[test]
    fn mixed_and_mismatched_kinds() {
        let mixed = vec![latent(0, vec![1.0]), Descriptor::Gaussian(gauss(0.0, 1.0))];
        assert!(matches!(distance_matrix(&mixed, Metric::L2), Err(Error::MixedDescriptorKinds)));
        let gs = vec![Descriptor::Gaussian(gauss(0.0, 1.0))];
        assert!(matches!(distance_matrix(&gs, Metric::L2), Err(Error::MetricMismatch { .. })));
        assert!(matches!(distance_matrix(&[], Metric::L2), Err(Error::NoDescriptors)));
        let ragged = vec![latent(0, vec![1.0]), latent(1, vec![1.0, 2.0])];
        assert!(matches!(distance_matrix(&ragged, Metric::L2), Err(Error::LengthMismatch(1, 2))));
    }

    #[test]
    fn wasserstein_matrix() {
        let gs: Vec<Descriptor> = [(0.0, 1.0), (3.0, 5.0), (0.0, 2.0)]
            .iter()
            .map(|&(m, s)| Descriptor::Gaussian(gauss(m, s)))
            .collect();
        let d = distance_matrix(&gs, Metric::UnivariateWasserstein).unwrap();
        assert_eq!(d.get(0, 1), 5.0);
        assert_eq!(d.get(2, 0), 1.0);
        assert_eq!(d.tag(), MetricTag::UnivariateWasserstein);
    }

    #[test]
    fn rejects_invalid_matrices() {
        assert!(DistanceMatrix::from_values(2, vec![0.0, 1.0, 2.0, 0.0], MetricTag::L2).is_err());
        assert!(DistanceMatrix::from_values(2, vec![1.0, 1.0, 1.0, 0.0], MetricTag::L2).is_err());
        assert!(DistanceMatrix::from_values(2, vec![0.0, -1.0, -1.0, 0.0], MetricTag::L2).is_err());
    }

    #[test]
    fn dump_round_trip() {
        let d = DistanceMatrix::from_fn(5, MetricTag::Blended(0.25), |i, j| (i * 7 + j) as f64 * 0.5)
            .unwrap();
        let mut buf = Vec::new();
        write_matrix(&d, &mut buf).unwrap();
        assert_eq!(buf.len(), 24 + 15 * 4);
        assert_eq!(read_matrix(&buf[..]).unwrap(), d);
        assert!(read_matrix(&buf[..30]).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn arb_gauss() -> impl Strategy<Value = GaussianSummary> {
            (-100.0f64..100.0, 0.0f64..50.0).prop_map(|(mu, sigma)| gauss(mu, sigma))
        }

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(1000))]

            #[test]
            fn wasserstein_is_a_metric(a in arb_gauss(), b in arb_gauss(), c in arb_gauss()) {
                let ab = wasserstein_1d(&a, &b);
                prop_assert!(ab >= 0.0);
                prop_assert_eq!(ab, wasserstein_1d(&b, &a));
                prop_assert_eq!(wasserstein_1d(&a, &a), 0.0);
                prop_assert!(ab <= wasserstein_1d(&a, &c) + wasserstein_1d(&c, &b) + 1e-9);
            }

            #[test]
            fn l2_symmetric(a in proptest::collection::vec(-10.0f64..10.0, 8),
                            b in proptest::collection::vec(-10.0f64..10.0, 8)) {
                prop_assert_eq!(l2(&a, &b).unwrap(), l2(&b, &a).unwrap());
            }
        }

        proptest! {
            #[test]
            fn blend_moves_monotonically_toward_temporal(
                rows in proptest::collection::vec(proptest::collection::vec(-5.0f32..5.0, 3), 2..9),
            ) {
                let descs: Vec<Descriptor> =
                    rows.into_iter().enumerate().map(|(i, r)| latent(i, r)).collect();
                let d = distance_matrix(&descs, Metric::L2).unwrap();
                let n = d.n();
                let dist_to_temporal = |lambda: f64| {
                    let b = blended_matrix(&d, lambda).unwrap();
                    let mut worst = 0f64;
                    for i in 0..n {
                        for j in 0..n {
                            worst = worst.max((b.get(i, j) as f64 - temporal_distance(i, j, n)).abs());
                        }
                    }
                    worst
                };
                let mut prev = f64::INFINITY;
                for step in 0..=10 {
                    let cur = dist_to_temporal(step as f64 / 10.0);
                    prop_assert!(cur <= prev + 1e-6);
                    prev = cur;
                }
            }
        }
    }
}
