//! Sensing operators: `y = A D s` forward and the exact adjoint `A^T z`.
//!
//! The production operator picks `n` rows of a Sylvester Hadamard matrix of
//! size `M = 2^ceil(log2 m)`, scaled by `1/sqrt(n)` so every logical column
//! has unit 2-norm; forward and adjoint both run in `O(M log M)` through the
//! fast Walsh-Hadamard transform. A dense Gaussian operator with normalized
//! columns serves as the reference at small sizes.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// In-place fast Walsh-Hadamard transform (Sylvester / natural order).
/// Unnormalized: applying it twice multiplies by `len`.
pub fn fwht(data: &mut [f64]) {
    let n = data.len();
    assert!(n.is_power_of_two(), "FWHT length must be a power of two");
    let mut h = 1;
    while h < n {
        for block in (0..n).step_by(2 * h) {
            for i in block..block + h {
                let u = data[i];
                let v = data[i + h];
                data[i] = u + v;
                data[i + h] = u - v;
            }
        }
        h *= 2;
    }
}

/// Per-section amplitudes `d_l = sqrt(n P_l)`, constant within a section.
#[derive(Debug, Clone)]
pub struct AmplitudeDiagonal {
    d: Vec<f64>,
}

impl AmplitudeDiagonal {
    pub fn new(d: Vec<f64>) -> Self {
        assert!(
            d.iter().all(|&x| x >= 0.0),
            "amplitudes must be non-negative"
        );
        Self { d }
    }

    /// Equal power split `P_l = P / L` across `num_sections` sections.
    pub fn equal_power(total_power: f64, n: usize, num_sections: usize) -> Self {
        let d = (n as f64 * total_power / num_sections as f64).sqrt();
        Self {
            d: vec![d; num_sections],
        }
    }

    pub fn amplitude(&self, section: usize) -> f64 {
        self.d[section]
    }

    pub fn amplitudes(&self) -> &[f64] {
        &self.d
    }

    pub fn max_amplitude(&self) -> f64 {
        self.d.iter().cloned().fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OperatorKind {
    SubsampledHadamard,
    DenseGaussian,
}

/// A sensing matrix with matched forward/adjoint maps.
///
/// Immutable after construction; `forward`/`adjoint` are reentrant.
#[derive(Debug, Clone)]
pub struct SensingOperator {
    n: usize,
    m: usize,
    kind: OperatorKind,
    /// Hadamard kind: selected row indices within the padded transform.
    rows: Vec<usize>,
    /// Padded transform size (power of two >= m).
    padded: usize,
    /// Gaussian kind: dense column-major matrix, columns unit norm.
    dense: Vec<f64>,
    seed: u64,
}

/// Construct an operator. The Hadamard kind excludes the all-ones row zero
/// from selection; when `m` is not a power of two the logical columns are the
/// first `m` coordinates of the padded transform.
pub fn build_operator(
    kind: OperatorKind,
    n: usize,
    m: usize,
    seed: u64,
) -> Result<SensingOperator> {
    if n == 0 || m == 0 || n > m {
        return Err(Error::Config(format!("need 0 < n <= m, got n={n} m={m}")));
    }
    match kind {
        OperatorKind::SubsampledHadamard => {
            let padded = m.next_power_of_two();
            if n > padded - 1 {
                return Err(Error::Config(format!(
                    "cannot pick {n} distinct non-DC rows from a {padded}-row Hadamard matrix"
                )));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut all: Vec<usize> = (1..padded).collect();
            all.shuffle(&mut rng);
            let mut rows = all[..n].to_vec();
            rows.sort_unstable();
            Ok(SensingOperator {
                n,
                m,
                kind,
                rows,
                padded,
                dense: Vec::new(),
                seed,
            })
        }
        OperatorKind::DenseGaussian => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut dense = vec![0.0f64; n * m];
            for col in 0..m {
                let mut norm_sq = 0.0;
                for row in 0..n {
                    let g: f64 = rng.sample(StandardNormal);
                    dense[col * n + row] = g;
                    norm_sq += g * g;
                }
                let scale = 1.0 / norm_sq.sqrt();
                for row in 0..n {
                    dense[col * n + row] *= scale;
                }
            }
            Ok(SensingOperator {
                n,
                m,
                kind,
                rows: Vec::new(),
                padded: 0,
                dense,
                seed,
            })
        }
    }
}

impl SensingOperator {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn kind(&self) -> OperatorKind {
        self.kind
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Selected Hadamard rows (empty for the dense kind).
    pub fn selected_rows(&self) -> &[usize] {
        &self.rows
    }

    /// `A x`.
    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.m, "forward dimension mismatch");
        match self.kind {
            OperatorKind::SubsampledHadamard => {
                let mut buf = vec![0.0f64; self.padded];
                buf[..self.m].copy_from_slice(x);
                fwht(&mut buf);
                let scale = 1.0 / (self.n as f64).sqrt();
                self.rows.iter().map(|&r| buf[r] * scale).collect()
            }
            OperatorKind::DenseGaussian => {
                let mut y = vec![0.0f64; self.n];
                for (col, &xc) in x.iter().enumerate() {
                    if xc != 0.0 {
                        let base = col * self.n;
                        for row in 0..self.n {
                            y[row] += self.dense[base + row] * xc;
                        }
                    }
                }
                y
            }
        }
    }

    /// `A^T z`; exact transpose of [`SensingOperator::forward`].
    pub fn adjoint(&self, z: &[f64]) -> Vec<f64> {
        assert_eq!(z.len(), self.n, "adjoint dimension mismatch");
        match self.kind {
            OperatorKind::SubsampledHadamard => {
                let mut buf = vec![0.0f64; self.padded];
                let scale = 1.0 / (self.n as f64).sqrt();
                for (&r, &zr) in self.rows.iter().zip(z) {
                    buf[r] = zr * scale;
                }
                fwht(&mut buf);
                buf.truncate(self.m);
                buf
            }
            OperatorKind::DenseGaussian => {
                let mut x = vec![0.0f64; self.m];
                for (col, xc) in x.iter_mut().enumerate() {
                    let base = col * self.n;
                    let mut acc = 0.0;
                    for (row, &zr) in z.iter().enumerate() {
                        acc += self.dense[base + row] * zr;
                    }
                    *xc = acc;
                }
                x
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dot(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| x * y).sum()
    }

    fn unit(m: usize, j: usize) -> Vec<f64> {
        let mut e = vec![0.0; m];
        e[j] = 1.0;
        e
    }

    #[test]
    fn full_sampling_is_orthogonal() {
        // All rows kept (n = m = M, DC row included so the map is the full
        // orthogonal transform scaled by 1/sqrt(n)).
        let n = 64;
        let mut op = build_operator(OperatorKind::SubsampledHadamard, n - 1, n, 5).unwrap();
        op.n = n;
        op.rows = (0..n).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x: Vec<f64> = (0..n)
            .map(|_| rng.sample::<f64, _>(StandardNormal))
            .collect();
        let y = op.forward(&x);
        let back = op.adjoint(&y);
        for (a, b) in x.iter().zip(&back) {
            assert!((a - b).abs() < 1e-12, "adjoint o forward = identity");
        }
        let e0 = op.forward(&unit(n, 3));
        let back = op.adjoint(&e0);
        assert!((back[3] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_maps_to_zero_and_columns_unit_norm() {
        for kind in [
            OperatorKind::SubsampledHadamard,
            OperatorKind::DenseGaussian,
        ] {
            let op = build_operator(kind, 48, 96, 7).unwrap();
            assert!(op.forward(&vec![0.0; 96]).iter().all(|&v| v == 0.0));
            for j in [0usize, 1, 40, 95] {
                let col = op.forward(&unit(96, j));
                let norm = dot(&col, &col).sqrt();
                assert!(
                    (norm - 1.0).abs() < 1e-12,
                    "{kind:?} column {j} norm {norm}"
                );
            }
        }
    }

    #[test]
    fn fast_path_matches_dense_submatrix() {
        // Explicit Hadamard submatrix oracle, including the padded case.
        for (n, m) in [(64usize, 128usize), (40, 100), (96, 256)] {
            let op = build_operator(OperatorKind::SubsampledHadamard, n, m, 11).unwrap();
            let pad = m.next_power_of_two();
            let had = |r: usize, c: usize| -> f64 {
                if (r & c).count_ones() % 2 == 0 {
                    1.0
                } else {
                    -1.0
                }
            };
            let mut rng = ChaCha8Rng::seed_from_u64(3);
            let x: Vec<f64> = (0..m)
                .map(|_| rng.sample::<f64, _>(StandardNormal))
                .collect();
            let y = op.forward(&x);
            let scale = 1.0 / (n as f64).sqrt();
            for (i, &r) in op.selected_rows().iter().enumerate() {
                let want: f64 = (0..m).map(|c| had(r, c) * x[c]).sum::<f64>() * scale;
                assert!((y[i] - want).abs() < 1e-9, "row {r} of {pad}");
            }
        }
    }

    #[test]
    fn adjoint_identity_on_random_pairs() {
        for kind in [
            OperatorKind::SubsampledHadamard,
            OperatorKind::DenseGaussian,
        ] {
            let (n, m) = (80usize, 192usize);
            let op = build_operator(kind, n, m, 13).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(4);
            for _ in 0..1000 {
                let x: Vec<f64> = (0..m)
                    .map(|_| rng.sample::<f64, _>(StandardNormal))
                    .collect();
                let z: Vec<f64> = (0..n)
                    .map(|_| rng.sample::<f64, _>(StandardNormal))
                    .collect();
                let lhs = dot(&op.forward(&x), &z);
                let rhs = dot(&x, &op.adjoint(&z));
                let scale = lhs.abs().max(rhs.abs()).max(1e-30);
                assert!(
                    (lhs - rhs).abs() / scale < 1e-9,
                    "{kind:?}: <Ax,z>={lhs} vs <x,Atz>={rhs}"
                );
            }
        }
    }

    #[test]
    fn row_selection_is_deterministic_and_excludes_dc() {
        let a = build_operator(OperatorKind::SubsampledHadamard, 100, 4096, 99).unwrap();
        let b = build_operator(OperatorKind::SubsampledHadamard, 100, 4096, 99).unwrap();
        assert_eq!(a.selected_rows(), b.selected_rows());
        assert!(!a.selected_rows().contains(&0), "DC row excluded");
        let c = build_operator(OperatorKind::SubsampledHadamard, 100, 4096, 100).unwrap();
        assert_ne!(a.selected_rows(), c.selected_rows());
    }

    #[test]
    fn rejects_bad_dimensions() {
        assert!(build_operator(OperatorKind::SubsampledHadamard, 10, 5, 0).is_err());
        assert!(build_operator(OperatorKind::DenseGaussian, 0, 5, 0).is_err());
    }

    #[test]
    fn equal_power_amplitudes() {
        let d = AmplitudeDiagonal::equal_power(0.016, 38400, 16);
        let expect = (38400.0 * 0.016 / 16.0f64).sqrt();
        for l in 0..16 {
            assert!((d.amplitude(l) - expect).abs() < 1e-12);
        }
        assert!((d.max_amplitude() - expect).abs() < 1e-12);
    }
}
