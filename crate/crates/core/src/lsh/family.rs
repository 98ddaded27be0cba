use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Standard normal variates by the Box–Muller transform over ChaCha8.
///
/// Both outputs of each transform are used, cosine branch first. The
/// transcendental functions come from `libm` so the stream is identical on
/// every platform.
pub struct GaussianStream {
    rng: ChaCha8Rng,
    spare: Option<f64>,
}

impl GaussianStream {
    pub fn new(seed: u64) -> Self {
        GaussianStream {
            rng: ChaCha8Rng::seed_from_u64(seed),
            spare: None,
        }
    }

    pub fn next_gaussian(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        // u1 in (0, 1] keeps the logarithm finite
        let u1 = 1.0 - self.rng.random::<f64>();
        let u2: f64 = self.rng.random();
        let radius = libm::sqrt(-2.0 * libm::log(u1));
        let theta = 2.0 * std::f64::consts::PI * u2;
        self.spare = Some(radius * libm::sin(theta));
        radius * libm::cos(theta)
    }

    /// Uniform in `[0, 1)`; discards any cached Gaussian spare.
    pub fn next_uniform(&mut self) -> f64 {
        self.spare = None;
        self.rng.random()
    }
}

/// `L x K` Gaussian projection directions plus per-function offset fractions.
///
/// Draw order from the seed: all direction entries table-major, then
/// function, then coordinate; after that the `L x K` offset fractions in
/// table-major order. The static family's offset at width `w` is
/// `b = fraction * w`, so `b` is uniform in `[0, w)` for every width.
#[derive(Debug, Clone, PartialEq)]
pub struct HashFamily {
    dim: usize,
    k: usize,
    l: usize,
    seed: Option<u64>,
    directions: Vec<f64>,
    offset_fractions: Vec<f64>,
}

impl HashFamily {
    pub fn generate(seed: u64, l: usize, k: usize, dim: usize) -> Result<Self> {
        check_shape(l, k, dim)?;
        let mut stream = GaussianStream::new(seed);
        let directions = (0..l * k * dim).map(|_| stream.next_gaussian()).collect();
        let offset_fractions = (0..l * k).map(|_| stream.next_uniform()).collect();
        Ok(HashFamily {
            dim,
            k,
            l,
            seed: Some(seed),
            directions,
            offset_fractions,
        })
    }

    /// A family with explicit directions (`l*k*dim`, table-major) and offset
    /// fractions (`l*k`, each in `[0, 1)`).
    pub fn from_parts(
        l: usize,
        k: usize,
        dim: usize,
        directions: Vec<f64>,
        offset_fractions: Vec<f64>,
    ) -> Result<Self> {
        check_shape(l, k, dim)?;
        if directions.len() != l * k * dim {
            return Err(Error::param(format!(
                "expected {} direction entries, got {}",
                l * k * dim,
                directions.len()
            )));
        }
        if offset_fractions.len() != l * k {
            return Err(Error::param(format!(
                "expected {} offsets, got {}",
                l * k,
                offset_fractions.len()
            )));
        }
        if directions.iter().any(|v| !v.is_finite()) {
            return Err(Error::param("direction entries must be finite"));
        }
        if offset_fractions.iter().any(|f| !(0.0..1.0).contains(f)) {
            return Err(Error::param("offset fractions must lie in [0, 1)"));
        }
        Ok(HashFamily {
            dim,
            k,
            l,
            seed: None,
            directions,
            offset_fractions,
        })
    }

    /// Records the seed a family read back from storage was drawn from.
    pub(crate) fn with_seed(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn l(&self) -> usize {
        self.l
    }

    /// The seed the family was drawn from, `None` for hand-built families.
    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    pub fn directions(&self) -> &[f64] {
        &self.directions
    }

    pub fn offset_fractions(&self) -> &[f64] {
        &self.offset_fractions
    }

    /// Direction `a_ij`.
    pub fn direction(&self, table: usize, func: usize) -> &[f64] {
        let start = (table * self.k + func) * self.dim;
        &self.directions[start..start + self.dim]
    }

    /// Static offset `b_ij` at bucket width `w`.
    pub fn offset(&self, table: usize, func: usize, w: f64) -> f64 {
        self.offset_fractions[table * self.k + func] * w
    }

    fn check_point(&self, o: &[f64]) -> Result<()> {
        if o.len() != self.dim {
            return Err(Error::DimensionMismatch {
                record: 0,
                expected: self.dim,
                found: o.len(),
            });
        }
        Ok(())
    }

    /// `G_i(o)` for one table, written into `out` (length `k`).
    pub fn project_table_into(&self, table: usize, o: &[f64], out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.k);
        for (func, slot) in out.iter_mut().enumerate() {
            *slot = dot(self.direction(table, func), o);
        }
    }

    /// All `L` projections flattened table-major into `out` (length `l*k`).
    pub fn project_into(&self, o: &[f64], out: &mut [f64]) -> Result<()> {
        self.check_point(o)?;
        if out.len() != self.l * self.k {
            return Err(Error::param("projection buffer has the wrong length"));
        }
        for (table, chunk) in out.chunks_exact_mut(self.k).enumerate() {
            self.project_table_into(table, o, chunk);
        }
        Ok(())
    }

    /// `[G_1(o), ..., G_L(o)]` with `G_i(o) = (a_i1 · o, ..., a_iK · o)`.
    pub fn project(&self, o: &[f64]) -> Result<Vec<Vec<f64>>> {
        self.check_point(o)?;
        Ok((0..self.l)
            .map(|table| {
                let mut g = vec![0.0; self.k];
                self.project_table_into(table, o, &mut g);
                g
            })
            .collect())
    }

    /// Static bucket indices `floor((a_ij · o + b_ij) / w)` for every table.
    pub fn quantize(&self, o: &[f64], w: f64) -> Result<Vec<Vec<i64>>> {
        if !(w > 0.0 && w.is_finite()) {
            return Err(Error::domain(format!(
                "bucket width must be positive, got {w}"
            )));
        }
        let projected = self.project(o)?;
        Ok(projected
            .iter()
            .enumerate()
            .map(|(table, g)| {
                g.iter()
                    .enumerate()
                    .map(|(func, &v)| static_bucket(v, self.offset(table, func, w), w))
                    .collect()
            })
            .collect())
    }
}

fn check_shape(l: usize, k: usize, dim: usize) -> Result<()> {
    if l == 0 || k == 0 || dim == 0 {
        return Err(Error::param(format!(
            "hash family shape must be positive (L = {l}, K = {k}, dim = {dim})"
        )));
    }
    Ok(())
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `floor((projection + offset) / w)`.
#[inline]
pub fn static_bucket(projection: f64, offset: f64, w: f64) -> i64 {
    ((projection + offset) / w).floor() as i64
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{prop_assert, proptest};

    #[test]
    fn regeneration_is_bit_identical() {
        let a = HashFamily::generate(11, 3, 4, 7).unwrap();
        let b = HashFamily::generate(11, 3, 4, 7).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.directions().len(), 3 * 4 * 7);
        assert_eq!(a.offset_fractions().len(), 12);
        let c = HashFamily::generate(12, 3, 4, 7).unwrap();
        assert_ne!(a.directions(), c.directions());
    }

    #[test]
    fn stream_prefix_is_shared() {
        // table-major order: a smaller L is a prefix of a larger one
        let small = HashFamily::generate(5, 2, 3, 4).unwrap();
        let large = HashFamily::generate(5, 4, 3, 4).unwrap();
        assert_eq!(
            small.directions(),
            &large.directions()[..small.directions().len()]
        );
    }

    #[test]
    fn gaussian_moments() {
        let mut s = GaussianStream::new(3);
        let n = 200_000;
        let xs: Vec<f64> = (0..n).map(|_| s.next_gaussian()).collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
        assert!(mean.abs() < 0.01, "{mean}");
        assert!((var - 1.0).abs() < 0.01, "{var}");
    }

    #[test]
    fn zero_vector_projects_to_zero() {
        let fam = HashFamily::generate(1, 2, 3, 5).unwrap();
        for g in fam.project(&[0.0; 5]).unwrap() {
            assert!(g.iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn entry_matches_direct_dot_product() {
        let fam = HashFamily::generate(9, 2, 3, 6).unwrap();
        let o = [0.3, -1.2, 4.0, 0.5, 2.2, -0.7];
        let a = fam.direction(0, 0);
        let mut expected = 0.0;
        for i in 0..6 {
            expected += a[i] * o[i];
        }
        let g = fam.project(&o).unwrap();
        assert!((g[0][0] - expected).abs() < 1e-12);
    }

    #[test]
    fn dimension_mismatch() {
        let fam = HashFamily::generate(1, 2, 3, 5).unwrap();
        assert!(matches!(
            fam.project(&[0.0; 4]),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(fam.quantize(&[0.0; 6], 1.0).is_err());
        assert!(fam.quantize(&[0.0; 5], 0.0).is_err());
    }

    #[test]
    fn floor_at_zero_and_offset_shift() {
        assert_eq!(static_bucket(0.0, 0.0, 2.0), 0);
        assert_eq!(static_bucket(-0.5, 0.5, 2.0), 0);
        for (p, b, w) in [(0.3, 0.2, 1.0), (-3.7, 1.1, 2.5), (12.0, 0.0, 4.0)] {
            assert_eq!(static_bucket(p, b + w, w), static_bucket(p, b, w) + 1);
        }
    }

    #[test]
    fn from_parts_validates() {
        assert!(HashFamily::from_parts(1, 1, 2, vec![1.0, 0.0], vec![0.0]).is_ok());
        assert!(HashFamily::from_parts(1, 1, 2, vec![1.0], vec![0.0]).is_err());
        assert!(HashFamily::from_parts(1, 1, 2, vec![1.0, 0.0], vec![1.0]).is_err());
        assert!(HashFamily::from_parts(0, 1, 2, vec![], vec![]).is_err());
    }

    #[test]
    #[allow(clippy::needless_range_loop)]
    fn quantize_agrees_with_scalar_reference() {
        let fam = HashFamily::generate(21, 3, 4, 8).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let w = 2.7;
        for _ in 0..100 {
            let o: Vec<f64> = (0..8).map(|_| rng.random_range(-5.0..5.0)).collect();
            let hashed = fam.quantize(&o, w).unwrap();
            for table in 0..3 {
                for func in 0..4 {
                    let a = &fam.directions()[(table * 4 + func) * 8..(table * 4 + func + 1) * 8];
                    let mut proj = 0.0;
                    for i in 0..8 {
                        proj += a[i] * o[i];
                    }
                    let b = fam.offset_fractions()[table * 4 + func] * w;
                    let expected = ((proj + b) / w).floor() as i64;
                    assert_eq!(hashed[table][func], expected);
                }
            }
        }
    }

    proptest! {
        #[test]
        fn projection_is_linear(
            x in proptest::collection::vec(-100.0f64..100.0, 6),
            y in proptest::collection::vec(-100.0f64..100.0, 6),
        ) {
            let fam = HashFamily::generate(4, 2, 3, 6).unwrap();
            let sum: Vec<f64> = x.iter().zip(&y).map(|(a, b)| a + b).collect();
            let gx = fam.project(&x).unwrap();
            let gy = fam.project(&y).unwrap();
            let gs = fam.project(&sum).unwrap();
            for t in 0..2 {
                for f in 0..3 {
                    let lhs = gs[t][f];
                    let rhs = gx[t][f] + gy[t][f];
                    prop_assert!((lhs - rhs).abs() <= 1e-9 * (1.0 + lhs.abs()));
                }
            }
        }
    }
}
