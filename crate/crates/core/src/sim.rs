//! End-to-end link simulation: random user payloads over the unsourced
//! Gaussian multiple-access channel, AMP decoding with belief thresholding
//! and hard stitching, two-pass interference cancellation, and per-user
//! error-rate accounting across trials.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::time::Instant;

use crate::amp::{run_amp, AmpContext, AmpState, AmpTrace, DenoiserKind};
use crate::bp::{init_lambda, precompute_masks, run_bp_state, ParityMaskTable};
use crate::error::{Error, Result};
use crate::sensing::{build_operator, AmplitudeDiagonal, OperatorKind, SensingOperator};
use crate::state_evolution::{run_se, SeDenoiser, SeParams, SeTrajectory};
use crate::tree_code::{
    encode, hard_stitch, make_triadic_design, CodeDesign, IndexVector, Payload,
};

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

// ─── Configuration ───────────────────────────────────────────────────────────

/// Independent seed streams for the random objects of an experiment.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq)]
pub struct Seeds {
    pub design: u64,
    pub matrix: u64,
    pub noise: u64,
    pub messages: u64,
}

impl Seeds {
    /// Derive the four streams from one master seed.
    pub fn from_master(master: u64) -> Self {
        Self {
            design: splitmix64(master ^ 1),
            matrix: splitmix64(master ^ 2),
            noise: splitmix64(master ^ 3),
            messages: splitmix64(master ^ 4),
        }
    }
}

fn default_trials() -> usize {
    50
}
fn default_amp_iters() -> usize {
    15
}
fn default_bp_rounds() -> usize {
    1
}
fn default_target_pupe() -> f64 {
    0.05
}
fn default_sic() -> bool {
    true
}
fn default_denoiser() -> DenoiserKind {
    DenoiserKind::Dynamic { bp_rounds: 1 }
}
fn default_operator() -> OperatorKind {
    OperatorKind::SubsampledHadamard
}
fn default_seeds() -> Seeds {
    Seeds::from_master(0)
}
fn default_mc_samples() -> usize {
    10_000
}

/// Full experiment description; serializable as the `--config` JSON file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimConfig {
    pub k_a: usize,
    pub n: usize,
    /// Payload width in bits.
    pub w: usize,
    /// Per-section width in bits.
    pub v: u32,
    /// Extra cross parities beyond the base triadic layout; `None` picks the
    /// experiment convention (two when `k_a >= 200`, else zero).
    #[serde(default)]
    pub extra_parity_sections: Option<usize>,
    pub ebn0_db: f64,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default = "default_amp_iters")]
    pub amp_iters: usize,
    #[serde(default = "default_bp_rounds")]
    pub bp_rounds: usize,
    /// Messages deferred to the second decoding pass; `None` means
    /// `max(1, ceil(k_a / 10))`.
    #[serde(default)]
    pub sic_delta: Option<usize>,
    #[serde(default = "default_sic")]
    pub sic_enabled: bool,
    #[serde(default = "default_target_pupe")]
    pub target_pupe: f64,
    #[serde(default = "default_seeds")]
    pub seeds: Seeds,
    #[serde(default = "default_denoiser")]
    pub denoiser: DenoiserKind,
    #[serde(default = "default_operator")]
    pub operator: OperatorKind,
    /// Monte-Carlo draws per dynamic state-evolution step.
    #[serde(default = "default_mc_samples")]
    pub mc_samples: usize,
    #[serde(default)]
    pub out: Option<String>,
}

impl SimConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: SimConfig =
            serde_json::from_str(text).map_err(|e| Error::Config(format!("config JSON: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.k_a == 0 {
            return Err(Error::Config("k_a must be positive".into()));
        }
        if let Some(delta) = self.sic_delta {
            if delta > self.k_a {
                return Err(Error::Config("sic_delta cannot exceed k_a".into()));
            }
        }
        if !(0.0..1.0).contains(&self.target_pupe) || self.target_pupe == 0.0 {
            return Err(Error::Config("target_pupe must lie in (0, 1)".into()));
        }
        if self.amp_iters == 0 {
            return Err(Error::Config("amp_iters must be positive".into()));
        }
        Ok(())
    }

    /// Total transmit power implied by the Eb/N0 convention
    /// `Eb/N0 = n P / (2 w)` with unit-variance real noise.
    pub fn total_power(&self) -> f64 {
        2.0 * self.w as f64 * 10f64.powf(self.ebn0_db / 10.0) / self.n as f64
    }

    pub fn extra_parities(&self) -> usize {
        self.extra_parity_sections
            .unwrap_or(if self.k_a >= 200 { 2 } else { 0 })
    }

    pub fn delta(&self) -> usize {
        self.sic_delta
            .unwrap_or_else(|| (self.k_a.div_ceil(5)).max(1))
    }

    pub fn build_design(&self) -> Result<CodeDesign> {
        make_triadic_design(self.w, self.v, self.extra_parities(), self.seeds.design)
    }
}

// ─── Scene generation ────────────────────────────────────────────────────────

/// One realized channel use: payloads, their codewords, the aggregate sparse
/// vector, and the noisy observation.
pub struct Scene {
    pub payloads: Vec<Payload>,
    pub index_vectors: Vec<IndexVector>,
    pub s: Vec<f64>,
    pub y: Vec<f64>,
}

/// Draw `k_a` distinct payloads, superpose their codewords, and pass the sum
/// through the sensing operator plus unit-variance Gaussian noise.
pub fn generate_scene(
    design: &CodeDesign,
    amplitudes: &AmplitudeDiagonal,
    op: &SensingOperator,
    k_a: usize,
    message_seed: u64,
    noise_seed: u64,
) -> Scene {
    let mut rng = ChaCha8Rng::seed_from_u64(message_seed);
    let mut payloads: Vec<Payload> = Vec::with_capacity(k_a);
    while payloads.len() < k_a {
        let p = Payload::random(design.payload_bits(), &mut rng);
        if !payloads.contains(&p) {
            payloads.push(p);
        }
    }
    let index_vectors: Vec<IndexVector> = payloads.iter().map(|p| encode(design, p)).collect();
    let mut s = vec![0.0f64; design.layout().total_len()];
    for iv in &index_vectors {
        for (l, &k) in iv.k.iter().enumerate() {
            s[design.layout().range(l).start + k as usize] += 1.0;
        }
    }
    let mut ds = s.clone();
    for l in 0..design.num_sections() {
        let d = amplitudes.amplitude(l);
        for x in &mut ds[design.layout().range(l)] {
            *x *= d;
        }
    }
    let mut y = op.forward(&ds);
    let mut noise_rng = ChaCha8Rng::seed_from_u64(noise_seed);
    for v in y.iter_mut() {
        let z: f64 = noise_rng.sample(StandardNormal);
        *v += z;
    }
    Scene {
        payloads,
        index_vectors,
        s,
        y,
    }
}

// ─── Decoding ────────────────────────────────────────────────────────────────

/// Immutable objects shared by every trial of an experiment.
pub struct DecoderContext {
    pub design: CodeDesign,
    pub table: ParityMaskTable,
    pub amplitudes: AmplitudeDiagonal,
    pub k_a: usize,
    pub amp_iters: usize,
    pub bp_rounds: usize,
    pub denoiser: DenoiserKind,
    pub sic_enabled: bool,
    pub delta: usize,
}

impl DecoderContext {
    pub fn from_config(config: &SimConfig) -> Result<Self> {
        let design = config.build_design()?;
        let table = precompute_masks(&design);
        let amplitudes =
            AmplitudeDiagonal::equal_power(config.total_power(), config.n, design.num_sections());
        Ok(Self {
            design,
            table,
            amplitudes,
            k_a: config.k_a,
            amp_iters: config.amp_iters,
            bp_rounds: config.bp_rounds,
            denoiser: config.denoiser,
            sic_enabled: config.sic_enabled,
            delta: config.delta().min(config.k_a),
        })
    }
}

/// Decoded messages with their likelihood scores, best first.
pub struct DecodeResult {
    pub recovered: Vec<(IndexVector, f64)>,
    pub tau_trace: Vec<f64>,
}

/// Candidate lists for stitching: per section, the `4 K` indices with the
/// largest final beliefs, each scored by the log of its local channel
/// evidence.
///
/// Selection is by belief rank rather than an absolute mass cut because a
/// weak user's marginal sits far below `1/K` once stronger users absorb the
/// section mass. Scores intentionally use the intrinsic estimates only: the
/// marginal re-counts a faded section through its graph neighbors, deflating
/// genuine weak users, while parity-domain mixing sums (which pass boundary
/// checks by construction) carry inflated marginals but no channel evidence.
fn threshold_candidates(
    posteriors: &[Vec<f64>],
    lambda: &[Vec<f64>],
    k: usize,
) -> Vec<Vec<(u32, f64)>> {
    let cap = 4 * k.max(1);
    posteriors
        .iter()
        .zip(lambda)
        .map(|(p, lam)| {
            let mut list: Vec<(u32, f64)> =
                p.iter().enumerate().map(|(i, &v)| (i as u32, v)).collect();
            list.sort_by(|a, b| b.1.total_cmp(&a.1));
            list.truncate(cap);
            list.into_iter()
                .map(|(i, _)| (i, lam[i as usize].max(f64::MIN_POSITIVE).ln()))
                .collect()
        })
        .collect()
}

/// Output of one AMP-plus-stitch pass.
struct PassOutput {
    /// Stitched messages with log-likelihood scores, best first.
    messages: Vec<(IndexVector, f64)>,
    /// Final effective observation, for confidence checks.
    r: Vec<f64>,
    tau_trace: Vec<f64>,
}

/// One AMP pass followed by belief thresholding and hard stitching, returning
/// at most `list_size` messages.
fn decode_pass(
    ctx: &DecoderContext,
    y: &[f64],
    op: &SensingOperator,
    k_active: usize,
    list_size: usize,
) -> Result<PassOutput> {
    let mut amp_ctx = AmpContext::new(
        &ctx.design,
        &ctx.table,
        &ctx.amplitudes,
        op,
        k_active,
        ctx.denoiser,
    );
    if let DenoiserKind::Dynamic { .. } = ctx.denoiser {
        amp_ctx.denoiser = DenoiserKind::Dynamic {
            bp_rounds: ctx.bp_rounds,
        };
    }
    let (state, trace): (AmpState, AmpTrace) = run_amp(y, &amp_ctx, ctx.amp_iters, None)?;
    let tau_trace: Vec<f64> = trace.rows.iter().map(|row| row.tau_sq).collect();

    // Final marginals: BP on the converged effective observation for the
    // dynamic pipeline, plain local estimates for the original one.
    let lambda = init_lambda(&state.r, state.tau, &ctx.design, &ctx.amplitudes, k_active);
    let posteriors = match ctx.denoiser {
        DenoiserKind::Dynamic { .. } => {
            let bp = run_bp_state(&ctx.design, &ctx.table, &lambda, ctx.bp_rounds, k_active)?;
            bp.marginals(&ctx.table)
        }
        DenoiserKind::Original => lambda.clone(),
    };
    let lists = threshold_candidates(&posteriors, &lambda, k_active);
    let stitched = hard_stitch(&ctx.design, &lists, list_size, None);
    Ok(PassOutput {
        messages: stitched.into_iter().map(|s| (s.indices, s.score)).collect(),
        r: state.r,
        tau_trace,
    })
}

/// Sections of a message whose effective observation carries less than half
/// the nominal amplitude. A genuine message rarely fades in more than one
/// section, whereas a stitched hybrid has a couple of parity sections sitting
/// on pure noise.
fn weak_sections(ctx: &DecoderContext, r: &[f64], iv: &IndexVector) -> usize {
    (0..ctx.design.num_sections())
        .filter(|&l| {
            let idx = ctx.design.layout().range(l).start + iv.k[l] as usize;
            r[idx] < 0.5 * ctx.amplitudes.amplitude(l)
        })
        .count()
}

/// Subtract re-encoded messages from the observation.
fn cancel_messages(
    ctx: &DecoderContext,
    op: &SensingOperator,
    y: &[f64],
    messages: &[(IndexVector, f64)],
) -> Vec<f64> {
    let mut ds = vec![0.0f64; ctx.design.layout().total_len()];
    for (iv, _) in messages {
        for (l, &k) in iv.k.iter().enumerate() {
            ds[ctx.design.layout().range(l).start + k as usize] += ctx.amplitudes.amplitude(l);
        }
    }
    let contribution = op.forward(&ds);
    y.iter().zip(&contribution).map(|(a, b)| a - b).collect()
}

/// Full receiver: one AMP+stitch pass, interference cancellation of the
/// highest-likelihood confidently-decoded messages, a second pass on the
/// residual for the remainder, and a final list capped at `k_a`.
pub fn decode(ctx: &DecoderContext, y: &[f64], op: &SensingOperator) -> Result<DecodeResult> {
    let pass1 = decode_pass(ctx, y, op, ctx.k_a, ctx.k_a)?;
    if !ctx.sic_enabled {
        return Ok(DecodeResult {
            recovered: pass1.messages,
            tau_trace: pass1.tau_trace,
        });
    }
    // Subtract at most k_a - delta messages, and only those whose sections
    // are all backed by the observation; the rest stay for the second pass.
    let keep_target = ctx.k_a.saturating_sub(ctx.delta);
    let mut kept: Vec<(IndexVector, f64)> = Vec::with_capacity(keep_target);
    let mut leftovers: Vec<(IndexVector, f64)> = Vec::new();
    for (iv, score) in pass1.messages {
        if kept.len() < keep_target && weak_sections(ctx, &pass1.r, &iv) <= 1 {
            kept.push((iv, score));
        } else {
            leftovers.push((iv, score));
        }
    }
    let residual = cancel_messages(ctx, op, y, &kept);
    let remaining = ctx.k_a - kept.len();
    let mut recovered = kept;
    if remaining > 0 {
        let pass2 = decode_pass(ctx, &residual, op, remaining, remaining)?;
        for (iv, score) in pass2.messages {
            if !recovered.iter().any(|(seen, _)| seen == &iv) {
                recovered.push((iv, score));
            }
        }
    }
    // Fill any spare capacity with unsubtracted first-pass candidates.
    for (iv, score) in leftovers {
        if recovered.len() >= ctx.k_a {
            break;
        }
        if !recovered.iter().any(|(seen, _)| seen == &iv) {
            recovered.push((iv, score));
        }
    }
    recovered.truncate(ctx.k_a);
    Ok(DecodeResult {
        recovered,
        tau_trace: pass1.tau_trace,
    })
}

// ─── Experiments ─────────────────────────────────────────────────────────────

/// Outcome of one trial.
#[derive(Debug, Clone)]
pub struct TrialResult {
    pub trial: usize,
    pub seed: u64,
    /// Fraction of transmitted payloads missing from the decoded list; NaN
    /// when the trial failed numerically.
    pub pupe: f64,
    /// Number of decoded messages.
    pub detected: usize,
    pub runtime_s: f64,
    pub tau_trace: Vec<f64>,
    pub error: Option<String>,
}

/// Exact set-membership per-user error rate.
pub fn pupe(transmitted: &[Payload], recovered: &[Payload]) -> f64 {
    let missing = transmitted
        .iter()
        .filter(|p| !recovered.contains(p))
        .count();
    missing as f64 / transmitted.len() as f64
}

/// Run one seeded trial end to end.
pub fn run_trial(
    config: &SimConfig,
    ctx: &DecoderContext,
    op: &SensingOperator,
    trial: usize,
) -> TrialResult {
    let start = Instant::now();
    let message_seed = splitmix64(config.seeds.messages ^ splitmix64(trial as u64));
    let noise_seed = splitmix64(config.seeds.noise ^ splitmix64(trial as u64));
    let scene = generate_scene(
        &ctx.design,
        &ctx.amplitudes,
        op,
        config.k_a,
        message_seed,
        noise_seed,
    );
    match decode(ctx, &scene.y, op) {
        Ok(result) => {
            let recovered: Vec<Payload> = result
                .recovered
                .iter()
                .map(|(iv, _)| iv.payload(&ctx.design))
                .collect();
            TrialResult {
                trial,
                seed: message_seed,
                pupe: pupe(&scene.payloads, &recovered),
                detected: recovered.len(),
                runtime_s: start.elapsed().as_secs_f64(),
                tau_trace: result.tau_trace,
                error: None,
            }
        }
        Err(e) => TrialResult {
            trial,
            seed: message_seed,
            pupe: f64::NAN,
            detected: 0,
            runtime_s: start.elapsed().as_secs_f64(),
            tau_trace: Vec::new(),
            error: Some(e.to_string()),
        },
    }
}

/// Aggregate of an experiment.
#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub trials: Vec<TrialResult>,
    pub mean_pupe: f64,
    pub std_err: f64,
    pub mean_runtime_s: f64,
}

impl ExperimentResult {
    /// CSV rows `trial,seed,pupe,detected,runtime_s` plus an aggregate line.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "trial,seed,pupe,detected,runtime_s")?;
        for t in &self.trials {
            writeln!(
                w,
                "{},{},{},{},{}",
                t.trial, t.seed, t.pupe, t.detected, t.runtime_s
            )?;
        }
        writeln!(
            w,
            "aggregate,,{},{},{}",
            self.mean_pupe, self.std_err, self.mean_runtime_s
        )?;
        Ok(())
    }
}

/// Run `config.trials` independent trials in parallel; failures are recorded
/// per row and excluded from the aggregate.
pub fn run_experiment(config: &SimConfig) -> Result<ExperimentResult> {
    config.validate()?;
    if config.trials == 0 {
        return Err(Error::Config("need at least one trial".into()));
    }
    let ctx = DecoderContext::from_config(config)?;
    let op = build_operator(
        config.operator,
        config.n,
        ctx.design.layout().total_len(),
        config.seeds.matrix,
    )?;
    let mut trials: Vec<TrialResult> = (0..config.trials)
        .into_par_iter()
        .map(|t| run_trial(config, &ctx, &op, t))
        .collect();
    trials.sort_by_key(|t| t.trial);
    let ok: Vec<&TrialResult> = trials.iter().filter(|t| t.error.is_none()).collect();
    let mean_pupe = ok.iter().map(|t| t.pupe).sum::<f64>() / ok.len().max(1) as f64;
    let var = ok
        .iter()
        .map(|t| (t.pupe - mean_pupe) * (t.pupe - mean_pupe))
        .sum::<f64>()
        / ok.len().max(1) as f64;
    let std_err = (var / ok.len().max(1) as f64).sqrt();
    let mean_runtime_s = trials.iter().map(|t| t.runtime_s).sum::<f64>() / trials.len() as f64;
    Ok(ExperimentResult {
        trials,
        mean_pupe,
        std_err,
        mean_runtime_s,
    })
}

/// State-evolution and (optionally) empirical mean `tau_t^2` trajectories for
/// the configured system; rows `t,tau_sq_se,tau_sq_empirical`.
pub struct SeComparison {
    pub se: SeTrajectory,
    pub empirical: Vec<f64>,
}

impl SeComparison {
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "t,tau_sq_se,tau_sq_empirical")?;
        for (t, &se) in self.se.tau_sq.iter().enumerate() {
            match self.empirical.get(t) {
                Some(e) => writeln!(w, "{t},{se},{e}")?,
                None => writeln!(w, "{t},{se},")?,
            }
        }
        Ok(())
    }
}

/// Compute the SE trajectory for `t_max` steps and, when `config.trials > 0`,
/// the empirical mean `||z_t||^2 / n` over that many single runs.
pub fn se_comparison(config: &SimConfig, t_max: usize) -> Result<SeComparison> {
    let ctx = DecoderContext::from_config(config)?;
    let params = SeParams {
        k_a: config.k_a,
        design: ctx.design.clone(),
        amplitudes: ctx.amplitudes.clone(),
        sigma_sq: 1.0,
        n: config.n,
        mc_samples: config.mc_samples,
    };
    let kind = match config.denoiser {
        DenoiserKind::Original => SeDenoiser::Original,
        DenoiserKind::Dynamic { .. } => SeDenoiser::Dynamic,
    };
    let se = run_se(&params, t_max, kind, config.seeds.design)?;

    let mut empirical = Vec::new();
    if config.trials > 0 {
        let op = build_operator(
            config.operator,
            config.n,
            ctx.design.layout().total_len(),
            config.seeds.matrix,
        )?;
        let traces: Vec<Vec<f64>> = (0..config.trials)
            .into_par_iter()
            .map(|t| {
                let message_seed = splitmix64(config.seeds.messages ^ splitmix64(t as u64));
                let noise_seed = splitmix64(config.seeds.noise ^ splitmix64(t as u64));
                let scene = generate_scene(
                    &ctx.design,
                    &ctx.amplitudes,
                    &op,
                    config.k_a,
                    message_seed,
                    noise_seed,
                );
                let amp_ctx = AmpContext::new(
                    &ctx.design,
                    &ctx.table,
                    &ctx.amplitudes,
                    &op,
                    config.k_a,
                    config.denoiser,
                );
                // Fixed iteration count, no early stop, to line up with SE.
                let mut state = AmpState::initial(&scene.y, &op);
                let mut trace = vec![state.tau * state.tau];
                for _ in 0..t_max {
                    state = crate::amp::amp_iterate(&state, &scene.y, &amp_ctx)
                        .expect("AMP trajectory");
                    trace.push(state.tau * state.tau);
                }
                trace
            })
            .collect();
        for t in 0..=t_max {
            empirical.push(traces.iter().map(|tr| tr[t]).sum::<f64>() / traces.len() as f64);
        }
    }
    Ok(SeComparison { se, empirical })
}

// ─── Threshold search ────────────────────────────────────────────────────────

/// Result of the minimum-Eb/N0 search.
#[derive(Debug, Clone)]
pub struct MinEbn0Result {
    /// Smallest tested Eb/N0 meeting the target error rate.
    pub threshold_db: f64,
    /// Bracketing pair: largest failing and smallest passing values tested.
    pub bracket: (f64, f64),
    /// Every `(ebn0_db, mean_pupe)` point evaluated.
    pub points: Vec<(f64, f64)>,
}

/// Bisect for the smallest Eb/N0 whose mean PUPE meets `epsilon`, assuming
/// monotone error rate over the bracket. `eval` maps Eb/N0 in dB to a mean
/// PUPE; exposed so searches can be tested without hour-long simulations.
pub fn min_ebn0_with(
    mut eval: impl FnMut(f64) -> f64,
    lo_db: f64,
    hi_db: f64,
    resolution_db: f64,
    epsilon: f64,
) -> Result<MinEbn0Result> {
    if !(lo_db < hi_db) || resolution_db <= 0.0 {
        return Err(Error::Config(
            "need lo_db < hi_db and a positive resolution".into(),
        ));
    }
    let mut points = Vec::new();
    let p_lo = eval(lo_db);
    points.push((lo_db, p_lo));
    let p_hi = eval(hi_db);
    points.push((hi_db, p_hi));
    if p_lo <= epsilon || p_hi > epsilon {
        return Err(Error::Config(format!(
            "bracket does not straddle the target: pupe({lo_db} dB) = {p_lo}, \
             pupe({hi_db} dB) = {p_hi}, target {epsilon}"
        )));
    }
    let (mut lo, mut hi) = (lo_db, hi_db);
    while hi - lo > resolution_db {
        let mid = 0.5 * (lo + hi);
        let p = eval(mid);
        points.push((mid, p));
        if p <= epsilon {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(MinEbn0Result {
        threshold_db: hi,
        bracket: (lo, hi),
        points,
    })
}

/// [`min_ebn0_with`] backed by real experiments at each probed operating
/// point.
pub fn min_ebn0(
    config: &SimConfig,
    lo_db: f64,
    hi_db: f64,
    resolution_db: f64,
) -> Result<MinEbn0Result> {
    let mut failure: Option<Error> = None;
    let result = min_ebn0_with(
        |ebn0| {
            let mut point = config.clone();
            point.ebn0_db = ebn0;
            match run_experiment(&point) {
                Ok(r) => r.mean_pupe,
                Err(e) => {
                    failure = Some(e);
                    f64::NAN
                }
            }
        },
        lo_db,
        hi_db,
        resolution_db,
        config.target_pupe,
    );
    match failure {
        Some(e) => Err(e),
        None => result,
    }
}
