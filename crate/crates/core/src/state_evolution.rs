//! State evolution: the deterministic `(sigma_t, tau_t)` recursion that
//! predicts the effective noise level of the composite iteration, for both
//! the uninformative-prior denoiser (closed-form expectations via
//! Gauss-Hermite quadrature) and the BP-informed denoiser (Monte-Carlo over
//! full factor-graph draws).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::amp::pme;
use crate::bp::{init_lambda, precompute_masks, run_bp, ParityMaskTable};
use crate::error::{Error, Result};
use crate::sensing::AmplitudeDiagonal;
use crate::tree_code::{encode, CodeDesign, IndexVector, Payload};

pub mod quadrature {
    //! Gauss-Hermite nodes and weights for integrals against `exp(-x^2)`,
    //! computed by Newton iteration on the orthonormal Hermite recurrence.

    /// Nodes and weights of the `n`-point rule: `∫ f(x) e^{-x^2} dx ≈ Σ w_i f(x_i)`.
    pub fn gauss_hermite(n: usize) -> (Vec<f64>, Vec<f64>) {
        assert!(n >= 2);
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        let m = (n + 1) / 2;
        let mut z = 0.0f64;
        for i in 0..m {
            z = match i {
                0 => {
                    (2.0 * n as f64 + 1.0).sqrt()
                        - 1.85575 * (2.0 * n as f64 + 1.0).powf(-1.0 / 6.0)
                }
                1 => z - 1.14 * (n as f64).powf(0.426) / z,
                2 => 1.86 * z - 0.86 * nodes[0],
                3 => 1.91 * z - 0.91 * nodes[1],
                _ => 2.0 * z - nodes[i - 2],
            };
            let mut pp = 0.0;
            for _ in 0..200 {
                let mut p1 = std::f64::consts::PI.powf(-0.25);
                let mut p2 = 0.0f64;
                for j in 1..=n {
                    let p3 = p2;
                    p2 = p1;
                    p1 = z * (2.0 / j as f64).sqrt() * p2
                        - ((j as f64 - 1.0) / j as f64).sqrt() * p3;
                }
                pp = (2.0 * n as f64).sqrt() * p2;
                let dz = p1 / pp;
                z -= dz;
                if dz.abs() < 1e-15 {
                    break;
                }
            }
            nodes[i] = z;
            nodes[n - 1 - i] = -z;
            weights[i] = 2.0 / (pp * pp);
            weights[n - 1 - i] = weights[i];
        }
        (nodes, weights)
    }

    /// Expectation of `f(zeta)` for standard normal `zeta` under the cached
    /// 127-point rule.
    pub fn normal_expectation(f: impl Fn(f64) -> f64) -> f64 {
        use std::sync::OnceLock;
        static RULE: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
        let (nodes, weights) = RULE.get_or_init(|| gauss_hermite(127));
        let scale = 1.0 / std::f64::consts::PI.sqrt();
        nodes
            .iter()
            .zip(weights)
            .map(|(&x, &w)| w * f(std::f64::consts::SQRT_2 * x))
            .sum::<f64>()
            * scale
    }
}

/// Inputs of the state-evolution recursion.
#[derive(Debug, Clone)]
pub struct SeParams {
    pub k_a: usize,
    pub design: CodeDesign,
    pub amplitudes: AmplitudeDiagonal,
    /// Channel noise variance (unit for the standard model).
    pub sigma_sq: f64,
    pub n: usize,
    /// Monte-Carlo factor-graph draws per dynamic step.
    pub mc_samples: usize,
}

/// The `(tau_t^2, sigma_t^2)` sequences of one recursion run.
#[derive(Debug, Clone)]
pub struct SeTrajectory {
    pub tau_sq: Vec<f64>,
    pub sigma_sq: Vec<f64>,
}

/// Which denoiser the recursion models.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SeDenoiser {
    Original,
    Dynamic,
}

/// `tau_0^2 = sigma^2 + K_a * sum_l d_l^2 / n`, the large-system limit of
/// `||y||^2 / n`.
pub fn tau0_sq(params: &SeParams) -> f64 {
    let signal: f64 = (0..params.design.num_sections())
        .map(|l| {
            let d = params.amplitudes.amplitude(l);
            d * d
        })
        .sum();
    params.sigma_sq + params.k_a as f64 * signal / params.n as f64
}

/// One step of the original-denoiser recursion: closed-form split of the
/// squared-error expectation over the support and its complement, each a
/// one-dimensional Gaussian expectation evaluated by quadrature.
pub fn se_step_original(tau: f64, params: &SeParams) -> f64 {
    assert!(tau > 0.0);
    let mut sigma_next = 0.0;
    for l in 0..params.design.num_sections() {
        let m = params.design.layout().section_size(l) as f64;
        let d = params.amplitudes.amplitude(l);
        let q = 1.0 - (1.0 - 1.0 / m).powi(params.k_a as i32);
        let miss = quadrature::normal_expectation(|z| {
            let s = pme(q, d + tau * z, d, tau);
            (1.0 - s) * (1.0 - s)
        });
        let false_alarm = quadrature::normal_expectation(|z| {
            let s = pme(q, tau * z, d, tau);
            s * s
        });
        sigma_next += d * d * (params.k_a as f64 * miss + (m - params.k_a as f64) * false_alarm);
    }
    sigma_next / params.n as f64
}

/// Estimate plus its Monte-Carlo standard error.
#[derive(Debug, Clone, Copy)]
pub struct SeStepEstimate {
    pub sigma_sq: f64,
    pub std_err: f64,
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Draw `K_a` codewords whose index vectors are collision-free in every
/// section, by rejection, so each section's support has exactly `K_a` ones.
fn plant_collision_free(design: &CodeDesign, k_a: usize, rng: &mut ChaCha8Rng) -> Vec<IndexVector> {
    'outer: loop {
        let ivs: Vec<IndexVector> = (0..k_a)
            .map(|_| encode(design, &Payload::random(design.payload_bits(), rng)))
            .collect();
        for l in 0..design.num_sections() {
            let mut seen = std::collections::HashSet::with_capacity(k_a);
            for iv in &ivs {
                if !seen.insert(iv.k[l]) {
                    continue 'outer;
                }
            }
        }
        return ivs;
    }
}

fn se_dynamic_sample(
    params: &SeParams,
    table: &ParityMaskTable,
    tau: f64,
    sample_seed: u64,
    force_uninformative: bool,
) -> f64 {
    let design = &params.design;
    let mut rng = ChaCha8Rng::seed_from_u64(sample_seed);
    let ivs = plant_collision_free(design, params.k_a, &mut rng);
    let total = design.layout().total_len();
    let mut support = vec![false; total];
    for iv in &ivs {
        for (l, &k) in iv.k.iter().enumerate() {
            support[design.layout().range(l).start + k as usize] = true;
        }
    }
    let mut r = Vec::with_capacity(total);
    for l in 0..design.num_sections() {
        let d = params.amplitudes.amplitude(l);
        for i in design.layout().range(l) {
            let z: f64 = rng.sample(StandardNormal);
            r.push(if support[i] { d } else { 0.0 } + tau * z);
        }
    }

    let mut err = 0.0;
    if force_uninformative {
        for l in 0..design.num_sections() {
            let m = design.layout().section_size(l) as f64;
            let d = params.amplitudes.amplitude(l);
            let q = 1.0 - (1.0 - 1.0 / m).powi(params.k_a as i32);
            for i in design.layout().range(l) {
                let s_hat = pme(q, r[i], d, tau);
                let s = if support[i] { 1.0 } else { 0.0 };
                err += d * d * (s_hat - s) * (s_hat - s);
            }
        }
    } else {
        let lambda = init_lambda(&r, tau, design, &params.amplitudes, params.k_a);
        let q = run_bp(design, table, &lambda, 1, params.k_a)
            .expect("BP on normalized local estimates");
        for l in 0..design.num_sections() {
            let d = params.amplitudes.amplitude(l);
            let range = design.layout().range(l);
            for (k, i) in range.enumerate() {
                let s_hat = pme(q[l][k], r[i], d, tau);
                let s = if support[i] { 1.0 } else { 0.0 };
                err += d * d * (s_hat - s) * (s_hat - s);
            }
        }
    }
    err / params.n as f64
}

fn se_step_dynamic_impl(
    tau: f64,
    params: &SeParams,
    seed: u64,
    force_uninformative: bool,
) -> SeStepEstimate {
    assert!(tau > 0.0);
    let table = precompute_masks(&params.design);
    let samples = params.mc_samples.max(1);
    // Fixed-size blocks summed in index order keep the reduction independent
    // of the worker count.
    const BLOCK: usize = 16;
    let blocks = samples.div_ceil(BLOCK);
    let partials: Vec<(f64, f64)> = (0..blocks)
        .into_par_iter()
        .map(|b| {
            let lo = b * BLOCK;
            let hi = ((b + 1) * BLOCK).min(samples);
            let mut sum = 0.0;
            let mut sum_sq = 0.0;
            for s in lo..hi {
                let x = se_dynamic_sample(
                    params,
                    &table,
                    tau,
                    splitmix64(seed ^ splitmix64(s as u64)),
                    force_uninformative,
                );
                sum += x;
                sum_sq += x * x;
            }
            (sum, sum_sq)
        })
        .collect();
    let sum: f64 = partials.iter().map(|p| p.0).sum();
    let sum_sq: f64 = partials.iter().map(|p| p.1).sum();
    let mean = sum / samples as f64;
    let var = (sum_sq / samples as f64 - mean * mean).max(0.0);
    SeStepEstimate {
        sigma_sq: mean,
        std_err: (var / samples as f64).sqrt(),
    }
}

/// One step of the dynamic-denoiser recursion: Monte-Carlo draws of the full
/// factor graph (collision-free planted codewords, fresh Gaussian effective
/// noise), one BP round to form the extrinsic priors, and the squared-error
/// average of the resulting posterior mean estimates.
pub fn se_step_dynamic(tau: f64, params: &SeParams, seed: u64) -> f64 {
    se_step_dynamic_impl(tau, params, seed, false).sigma_sq
}

/// Like [`se_step_dynamic`] but also reports the Monte-Carlo standard error.
pub fn se_step_dynamic_with_err(tau: f64, params: &SeParams, seed: u64) -> SeStepEstimate {
    se_step_dynamic_impl(tau, params, seed, false)
}

/// Run the recursion for `t_max` steps, recording both variance sequences.
pub fn run_se(
    params: &SeParams,
    t_max: usize,
    denoiser: SeDenoiser,
    seed: u64,
) -> Result<SeTrajectory> {
    if denoiser == SeDenoiser::Dynamic && 2 >= params.design.girth() {
        return Err(Error::Config(
            "design girth too small for one BP round".into(),
        ));
    }
    let t0 = tau0_sq(params);
    let mut traj = SeTrajectory {
        tau_sq: vec![t0],
        sigma_sq: vec![t0 - params.sigma_sq],
    };
    for t in 0..t_max {
        let tau = traj.tau_sq[t].sqrt();
        let sigma_next = match denoiser {
            SeDenoiser::Original => se_step_original(tau, params),
            SeDenoiser::Dynamic => {
                se_step_dynamic(tau, params, splitmix64(seed ^ splitmix64(t as u64)))
            }
        };
        traj.sigma_sq.push(sigma_next);
        traj.tau_sq.push(params.sigma_sq + sigma_next);
    }
    Ok(traj)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tree_code::make_triadic_design;

    /// Reference system from the experiments: w = 128, v = 16, n = 38400.
    fn full_scale_params(k_a: usize, ebn0_db: f64, mc_samples: usize) -> SeParams {
        let design = make_triadic_design(128, 16, 0, 1).unwrap();
        let n = 38400;
        let total_power = 2.0 * 128.0 * 10f64.powf(ebn0_db / 10.0) / n as f64;
        let amplitudes = AmplitudeDiagonal::equal_power(total_power, n, design.num_sections());
        SeParams {
            k_a,
            design,
            amplitudes,
            sigma_sq: 1.0,
            n,
            mc_samples,
        }
    }

    #[test]
    fn gauss_hermite_moments() {
        for n in [31usize, 64, 127] {
            let one = quadrature::normal_expectation(|_| 1.0);
            assert!((one - 1.0).abs() < 1e-13);
            let (nodes, weights) = quadrature::gauss_hermite(n);
            let total: f64 = weights.iter().sum();
            assert!((total - std::f64::consts::PI.sqrt()).abs() < 1e-12, "n={n}");
            let m2: f64 = nodes.iter().zip(&weights).map(|(x, w)| w * x * x).sum();
            assert!((m2 - std::f64::consts::PI.sqrt() / 2.0).abs() < 1e-12);
        }
        let m4 = quadrature::normal_expectation(|z| z.powi(4));
        assert!((m4 - 3.0).abs() < 1e-11);
        let m6 = quadrature::normal_expectation(|z| z.powi(6));
        assert!((m6 - 15.0).abs() < 1e-10);
    }

    #[test]
    fn gauss_hermite_matches_dense_trapezoid_on_logistic_tails() {
        // The SE integrands are squared logistics of an affine argument; check
        // the quadrature against a brute-force grid on a hard case.
        let f = |z: f64| {
            let s = 1.0 / (1.0 + (19.8 - 4.9 * z).exp());
            s * s
        };
        let quad = quadrature::normal_expectation(f);
        let (lo, hi, steps) = (-14.0f64, 14.0f64, 2_000_000usize);
        let h = (hi - lo) / steps as f64;
        let mut brute = 0.0;
        for i in 0..=steps {
            let z = lo + i as f64 * h;
            let w = if i == 0 || i == steps { 0.5 } else { 1.0 };
            brute += w * h * (-z * z / 2.0).exp() / (2.0 * std::f64::consts::PI).sqrt() * f(z);
        }
        // A fixed 127-point rule resolves this transition-at-4-sigma case to
        // a few 1e-5 relative; the recursion tolerances need only 1e-2.
        assert!(
            (quad - brute).abs() / brute < 1e-4,
            "quadrature {quad} vs trapezoid {brute}"
        );
    }

    #[test]
    fn tau0_closed_forms() {
        let mut p = full_scale_params(25, 3.0, 1);
        assert!((tau0_sq(&p) - 1.332_543_7).abs() < 1e-6);
        p.k_a = 0;
        assert_eq!(tau0_sq(&p), 1.0);
        let p150 = full_scale_params(150, 4.0, 1);
        assert!((tau0_sq(&p150) - 3.511_886_4).abs() < 1e-6);
    }

    #[test]
    fn original_step_limits() {
        let mut p = full_scale_params(25, 3.0, 1);
        // Vanishing amplitudes: no signal energy, no error energy.
        p.amplitudes = AmplitudeDiagonal::new(vec![1e-9; p.design.num_sections()]);
        let s = se_step_original(1.0, &p);
        assert!(s < 1e-12, "sigma^2 -> 0 as d -> 0, got {s}");
    }

    #[test]
    fn original_trajectory_matches_independent_quadrature_oracle() {
        // Frozen values from an adaptive-quadrature evaluation of the same
        // expectations (independent tooling).
        let p = full_scale_params(25, 3.0, 1);
        let traj = run_se(&p, 5, SeDenoiser::Original, 0).unwrap();
        let oracle = [1.332_544, 1.071_64, 1.036_88, 1.032_83, 1.032_34, 1.032_28];
        for (got, want) in traj.tau_sq.iter().zip(&oracle) {
            assert!(
                (got - want).abs() / want < 1e-3,
                "trajectory {:?} vs oracle {:?}",
                traj.tau_sq,
                oracle
            );
        }
        let p150 = full_scale_params(150, 4.0, 1);
        let traj = run_se(&p150, 3, SeDenoiser::Original, 0).unwrap();
        let oracle = [3.511_886, 2.349_2, 1.731_3, 1.354_3];
        for (got, want) in traj.tau_sq.iter().zip(&oracle) {
            assert!((got - want).abs() / want < 1e-3);
        }
    }

    #[test]
    fn zero_steps_trajectory_is_just_the_origin() {
        let p = full_scale_params(25, 3.0, 1);
        let traj = run_se(&p, 0, SeDenoiser::Original, 0).unwrap();
        assert_eq!(traj.tau_sq.len(), 1);
        assert!((traj.tau_sq[0] - tau0_sq(&p)).abs() < 1e-15);
    }

    fn mini_params(k_a: usize, mc_samples: usize) -> SeParams {
        // v = 6 miniature triadic design at moderate SNR.
        let design = make_triadic_design(24, 6, 0, 5).unwrap();
        let n = 2048;
        let total_power = 2.0 * 24.0 * 10f64.powf(0.3) / n as f64 * 8.0;
        let amplitudes = AmplitudeDiagonal::equal_power(total_power, n, design.num_sections());
        SeParams {
            k_a,
            design,
            amplitudes,
            sigma_sq: 1.0,
            n,
            mc_samples,
        }
    }

    #[test]
    fn dynamic_step_forced_uninformative_reduces_to_original() {
        let p = mini_params(3, 600);
        let tau = tau0_sq(&p).sqrt();
        let closed = se_step_original(tau, &p);
        let est = se_step_dynamic_impl(tau, &p, 42, true);
        assert!(
            (est.sigma_sq - closed).abs() <= 4.0 * est.std_err.max(1e-12),
            "MC {} +/- {} vs quadrature {closed}",
            est.sigma_sq,
            est.std_err
        );
    }

    #[test]
    fn dynamic_step_independent_seeds_agree() {
        let p = mini_params(3, 500);
        let tau = tau0_sq(&p).sqrt();
        let a = se_step_dynamic_with_err(tau, &p, 1000);
        let b = se_step_dynamic_with_err(tau, &p, 2000);
        let tol = 3.0 * (a.std_err * a.std_err + b.std_err * b.std_err).sqrt();
        assert!(
            (a.sigma_sq - b.sigma_sq).abs() <= tol,
            "{} vs {} (3 sigma {tol})",
            a.sigma_sq,
            b.sigma_sq
        );
    }

    #[test]
    fn dynamic_step_is_deterministic_given_seed() {
        let p = mini_params(2, 64);
        let tau = tau0_sq(&p).sqrt();
        let a = se_step_dynamic(tau, &p, 7);
        let b = se_step_dynamic(tau, &p, 7);
        assert_eq!(a, b);
    }

    #[test]
    fn dynamic_improves_on_original_at_moderate_load() {
        let p = mini_params(3, 400);
        let tau = tau0_sq(&p).sqrt();
        let dyn_est = se_step_dynamic_with_err(tau, &p, 11);
        let orig = se_step_original(tau, &p);
        assert!(
            dyn_est.sigma_sq <= orig + 3.0 * dyn_est.std_err,
            "dynamic {} should not exceed original {orig}",
            dyn_est.sigma_sq
        );
    }

    #[test]
    fn planting_is_collision_free() {
        let design = make_triadic_design(16, 4, 0, 9).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let ivs = plant_collision_free(&design, 6, &mut rng);
        assert_eq!(ivs.len(), 6);
        for l in 0..design.num_sections() {
            let mut seen = std::collections::HashSet::new();
            for iv in &ivs {
                assert!(seen.insert(iv.k[l]), "collision in section {l}");
            }
        }
    }
}
