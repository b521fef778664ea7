//! Belief propagation on the tree-code factor graph.
//!
//! Check updates exploit the circular-convolution structure of the parity
//! precursors: per-section messages are aggregated into the precursor domain
//! `Z/2^{v_p}Z`, convolved with length-`2^{v_p}` FFTs, and read back through
//! the precursor maps. Messages and local estimates are kept normalized to
//! unit 1-norm, with entries floored at [`MESSAGE_FLOOR`] so exact zeros never
//! annihilate downstream products.

use realfft::{ComplexToReal, RealFftPlanner, RealToComplex};
use rustfft::num_complex::Complex;
use std::collections::HashMap;
use std::io::Write;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::sensing::AmplitudeDiagonal;
use crate::tree_code::CodeDesign;

/// Lower clamp applied to message entries before normalization.
pub const MESSAGE_FLOOR: f64 = 1e-300;

// ─── Mask table ──────────────────────────────────────────────────────────────

/// Precursor map of one factor edge: `pi[k] = [v(k) G]` in `Z/2^{v_p}Z`, plus
/// its preimage buckets in compressed form.
#[derive(Debug, Clone)]
pub struct EdgeMask {
    /// Section index this edge comes from.
    pub section: usize,
    /// Forward map from section index to parity precursor.
    pub pi: Vec<u32>,
    bucket_offsets: Vec<u32>,
    bucket_indices: Vec<u32>,
    /// Reciprocal bucket size per precursor (zero for empty buckets).
    inv_occupancy: Vec<f64>,
    /// The parity section's own edge `G_{p,p} = -I` is index negation, which
    /// aggregates and gathers sequentially.
    is_negation: bool,
}

impl EdgeMask {
    fn from_map(section: usize, pi: Vec<u32>, precursor_count: usize) -> Self {
        let mut counts = vec![0u32; precursor_count + 1];
        for &g in &pi {
            counts[g as usize + 1] += 1;
        }
        for i in 1..counts.len() {
            counts[i] += counts[i - 1];
        }
        let mut cursor = counts.clone();
        let mut indices = vec![0u32; pi.len()];
        for (k, &g) in pi.iter().enumerate() {
            indices[cursor[g as usize] as usize] = k as u32;
            cursor[g as usize] += 1;
        }
        let inv_occupancy: Vec<f64> = (0..precursor_count)
            .map(|g| {
                let n = counts[g + 1] - counts[g];
                if n == 0 {
                    0.0
                } else {
                    1.0 / n as f64
                }
            })
            .collect();
        let is_negation = pi.len() == precursor_count
            && pi
                .iter()
                .enumerate()
                .all(|(k, &g)| g as usize == (precursor_count - k) % precursor_count);
        Self {
            section,
            pi,
            bucket_offsets: counts,
            bucket_indices: indices,
            inv_occupancy,
            is_negation,
        }
    }

    /// Indices whose precursor equals `g`; buckets partition `[0, m_j)`.
    pub fn bucket(&self, g: u32) -> &[u32] {
        let lo = self.bucket_offsets[g as usize] as usize;
        let hi = self.bucket_offsets[g as usize + 1] as usize;
        &self.bucket_indices[lo..hi]
    }

    /// Bucket size `||g^{(g)}||_0`.
    #[inline]
    pub fn occupancy(&self, g: u32) -> usize {
        (self.bucket_offsets[g as usize + 1] - self.bucket_offsets[g as usize]) as usize
    }

    /// Number of distinct precursor values.
    pub fn precursor_count(&self) -> usize {
        self.bucket_offsets.len() - 1
    }
}

type FftPlanPair = (Arc<dyn RealToComplex<f64>>, Arc<dyn ComplexToReal<f64>>);

/// All factor edges of a design with their precursor maps, preimage buckets,
/// and cached FFT plans. Immutable and shareable across threads.
pub struct ParityMaskTable {
    /// Per factor: one mask per neighbor, `W_p` order then the parity section.
    factors: Vec<Vec<EdgeMask>>,
    /// Per section: (factor, neighbor position) pairs.
    section_edges: Vec<Vec<(usize, usize)>>,
    /// Real-input FFT plans keyed by transform length.
    plans: HashMap<usize, FftPlanPair>,
}

impl ParityMaskTable {
    pub fn factor_masks(&self, f: usize) -> &[EdgeMask] {
        &self.factors[f]
    }

    /// Edges `(factor, position)` adjacent to section `l`.
    pub fn section_edges(&self, l: usize) -> &[(usize, usize)] {
        &self.section_edges[l]
    }
}

/// Build the mask table: generator maps for information edges and the negation
/// map (the implicit `G_{p,p} = -I`) for each parity section's own edge.
pub fn precompute_masks(design: &CodeDesign) -> ParityMaskTable {
    let mut planner = RealFftPlanner::new();
    let mut plans: HashMap<usize, FftPlanPair> = HashMap::new();
    let mut factors = Vec::with_capacity(design.num_factors());
    let mut section_edges = vec![Vec::new(); design.num_sections()];
    for f in 0..design.num_factors() {
        let p = design.factor_parity_section(f);
        let mp = design.layout().section_size(p);
        plans
            .entry(mp)
            .or_insert_with(|| (planner.plan_fft_forward(mp), planner.plan_fft_inverse(mp)));
        let mut masks = Vec::new();
        for &j in design.factor_info_sections(f) {
            let mj = design.layout().section_size(j);
            let pi: Vec<u32> = (0..mj as u32).map(|k| design.precursor(f, j, k)).collect();
            section_edges[j].push((f, masks.len()));
            masks.push(EdgeMask::from_map(j, pi, mp));
        }
        let pi_p: Vec<u32> = (0..mp as u32)
            .map(|k| (mp as u32 - k) % mp as u32)
            .collect();
        section_edges[p].push((f, masks.len()));
        masks.push(EdgeMask::from_map(p, pi_p, mp));
        factors.push(masks);
    }
    ParityMaskTable {
        factors,
        section_edges,
        plans,
    }
}

// ─── Message updates ─────────────────────────────────────────────────────────

fn floor_normalize(v: &mut [f64]) {
    let mut sum = 0.0;
    for x in v.iter_mut() {
        if *x < MESSAGE_FLOOR {
            *x = MESSAGE_FLOOR;
        }
        sum += *x;
    }
    let inv = 1.0 / sum;
    for x in v.iter_mut() {
        *x *= inv;
    }
}

fn degenerate_if_zero(msg: &[f64], what: &str) -> Result<()> {
    if msg.iter().all(|&x| x == 0.0) {
        return Err(Error::Numerical {
            iteration: 0,
            message: format!("degenerate all-zero {what} message"),
        });
    }
    Ok(())
}

/// Reusable buffers for the per-factor transforms.
struct FactorScratch {
    real: Vec<f64>,
    spectra: Vec<Vec<Complex<f64>>>,
    prod: Vec<Complex<f64>>,
    inverse: Vec<f64>,
}

impl FactorScratch {
    fn new() -> Self {
        Self {
            real: Vec::new(),
            spectra: Vec::new(),
            prod: Vec::new(),
            inverse: Vec::new(),
        }
    }

    fn reserve(&mut self, mp: usize, deg: usize) {
        let bins = mp / 2 + 1;
        self.real.resize(mp, 0.0);
        if self.spectra.len() < deg {
            self.spectra.resize(deg, Vec::new());
        }
        for s in self.spectra.iter_mut().take(deg) {
            s.resize(bins, Complex::new(0.0, 0.0));
        }
        self.prod.resize(bins, Complex::new(0.0, 0.0));
        self.inverse.resize(mp, 0.0);
    }
}

/// Aggregate a section message into the precursor domain:
/// `L(g) = <msg, bucket(g)>`.
fn aggregate(mask: &EdgeMask, msg: &[f64], out: &mut [f64]) {
    if mask.is_negation {
        out[0] = msg[0];
        for (slot, &v) in out[1..].iter_mut().rev().zip(&msg[1..]) {
            *slot = v;
        }
        return;
    }
    out.fill(0.0);
    for (k, &g) in mask.pi.iter().enumerate() {
        out[g as usize] += msg[k];
    }
}

/// Read a convolution result back through the target's precursor map: value
/// at `-pi(k)`, split evenly across the bucket, clamped non-negative.
fn gather_target(mask: &EdgeMask, h: &[f64], scale: f64, out: &mut Vec<f64>) {
    let mp = h.len();
    out.clear();
    out.reserve(mask.pi.len());
    if mask.is_negation {
        // -pi(k) = k, occupancy one: a straight scaled copy.
        out.extend(h.iter().map(|&v| (v * scale).max(0.0)));
    } else {
        out.extend(mask.pi.iter().map(|&g| {
            let v = h[(mp - g as usize) % mp] * scale * mask.inv_occupancy[g as usize];
            v.max(0.0)
        }));
    }
    floor_normalize(out);
}

/// All outgoing messages of one factor at once; shares the forward transforms
/// across targets. `incoming[i]` is the message from neighbor `i` in mask
/// order; `skip` suppresses targets whose message is not needed.
fn factor_messages_into(
    design: &CodeDesign,
    table: &ParityMaskTable,
    f: usize,
    incoming: &[&[f64]],
    scratch: &mut FactorScratch,
    out: &mut [Vec<f64>],
) -> Result<()> {
    let masks = table.factor_masks(f);
    assert_eq!(incoming.len(), masks.len());
    let p = design.factor_parity_section(f);
    let mp = design.layout().section_size(p);
    let (fft, ifft) = &table.plans[&mp];
    let deg = masks.len();
    scratch.reserve(mp, deg);

    for ((mask, msg), spectrum) in masks.iter().zip(incoming).zip(&mut scratch.spectra) {
        assert_eq!(msg.len(), mask.pi.len(), "message length mismatch");
        degenerate_if_zero(msg, "incoming")?;
        aggregate(mask, msg, &mut scratch.real);
        fft.process(&mut scratch.real, spectrum)
            .expect("forward FFT");
    }

    let scale = 1.0 / mp as f64;
    for (i, tmask) in masks.iter().enumerate() {
        scratch.prod.fill(Complex::new(1.0, 0.0));
        for (j, spectrum) in scratch.spectra.iter().enumerate().take(deg) {
            if j == i {
                continue;
            }
            for (a, b) in scratch.prod.iter_mut().zip(spectrum) {
                *a *= *b;
            }
        }
        ifft.process(&mut scratch.prod, &mut scratch.inverse)
            .expect("inverse FFT");
        gather_target(tmask, &scratch.inverse, scale, &mut out[i]);
    }
    Ok(())
}

/// Message from check node `a_p` to one target section.
///
/// `incoming` holds the messages from the other neighbors of the factor, in
/// the order of [`ParityMaskTable::factor_masks`] minus the target. The
/// aggregated weights are circularly convolved with an FFT, the result is read
/// at each index's precursor, divided by the bucket occupancy, and normalized.
pub fn check_to_variable(
    design: &CodeDesign,
    table: &ParityMaskTable,
    f: usize,
    target: usize,
    incoming: &[&[f64]],
) -> Result<Vec<f64>> {
    let masks = table.factor_masks(f);
    let target_pos = masks
        .iter()
        .position(|m| m.section == target)
        .expect("target section is not adjacent to this factor");
    assert_eq!(
        incoming.len(),
        masks.len() - 1,
        "need one message per other neighbor"
    );

    let p = design.factor_parity_section(f);
    let mp = design.layout().section_size(p);
    let (fft, ifft) = &table.plans[&mp];
    let bins = mp / 2 + 1;
    let mut real = vec![0.0f64; mp];
    let mut spectrum = vec![Complex::new(0.0, 0.0); bins];
    let mut acc = vec![Complex::new(1.0, 0.0); bins];
    let mut inc = incoming.iter();
    for (pos, mask) in masks.iter().enumerate() {
        if pos == target_pos {
            continue;
        }
        let msg = inc.next().unwrap();
        assert_eq!(msg.len(), mask.pi.len(), "message length mismatch");
        degenerate_if_zero(msg, "incoming")?;
        aggregate(mask, msg, &mut real);
        fft.process(&mut real, &mut spectrum).expect("forward FFT");
        for (a, b) in acc.iter_mut().zip(&spectrum) {
            *a *= *b;
        }
    }
    let mut h = vec![0.0f64; mp];
    ifft.process(&mut acc, &mut h).expect("inverse FFT");
    let mut out = Vec::new();
    gather_target(&masks[target_pos], &h, 1.0 / mp as f64, &mut out);
    Ok(out)
}

/// Message from variable node `s_l` to check node `a`: the local estimate
/// times the product of the check messages from the *other* adjoining
/// factors, normalized. An empty `other_checks` (degree-one parity section)
/// returns the normalized local estimate.
pub fn variable_to_check(lambda_l: &[f64], other_checks: &[&[f64]]) -> Result<Vec<f64>> {
    degenerate_if_zero(lambda_l, "local estimate")?;
    let mut out = lambda_l.to_vec();
    for msg in other_checks {
        assert_eq!(msg.len(), out.len(), "message length mismatch");
        for (o, &m) in out.iter_mut().zip(msg.iter()) {
            *o *= m;
        }
    }
    floor_normalize(&mut out);
    Ok(out)
}

// ─── BP driver ───────────────────────────────────────────────────────────────

/// Message state after running belief propagation.
pub struct BeliefState {
    /// Normalized local estimates, one per section.
    pub lambda: Vec<Vec<f64>>,
    /// Final check-to-variable messages, indexed `[factor][neighbor position]`.
    pub msg_av: Vec<Vec<Vec<f64>>>,
    /// Extrinsic prior vectors `q(l, k)`, one per section.
    pub q: Vec<Vec<f64>>,
}

impl BeliefState {
    /// Extrinsic belief `mu_{s_l}` (unnormalized product of check messages).
    pub fn extrinsic(&self, table: &ParityMaskTable, l: usize) -> Vec<f64> {
        let m = self.lambda[l].len();
        let mut mu = vec![1.0; m];
        for &(f, pos) in table.section_edges(l) {
            for (x, &v) in mu.iter_mut().zip(&self.msg_av[f][pos]) {
                *x *= v;
            }
        }
        mu
    }

    /// Posterior marginals `p_{s_l} ∝ lambda_l * mu_{s_l}`, normalized.
    pub fn marginals(&self, table: &ParityMaskTable) -> Vec<Vec<f64>> {
        (0..self.lambda.len())
            .map(|l| {
                let mut p = self.extrinsic(table, l);
                for (x, &lam) in p.iter_mut().zip(&self.lambda[l]) {
                    *x *= lam;
                }
                floor_normalize(&mut p);
                p
            })
            .collect()
    }
}

/// Run `b` flooding rounds of sum-product message passing and return the full
/// message state. Requires `b >= 1` and `2b < girth` so the extrinsic priors
/// never absorb a section's own observation.
pub fn run_bp_state(
    design: &CodeDesign,
    table: &ParityMaskTable,
    lambda: &[Vec<f64>],
    b: usize,
    k_a: usize,
) -> Result<BeliefState> {
    if b < 1 {
        return Err(Error::Config(
            "belief propagation needs at least one round".into(),
        ));
    }
    if 2 * b >= design.girth() {
        return Err(Error::Config(format!(
            "{b} BP rounds on a girth-{} graph would leak intrinsic information",
            design.girth()
        )));
    }
    assert_eq!(lambda.len(), design.num_sections());
    let mut lambda = lambda.to_vec();
    for (l, lam) in lambda.iter_mut().enumerate() {
        assert_eq!(
            lam.len(),
            design.layout().section_size(l),
            "lambda {l} length"
        );
        degenerate_if_zero(lam, "local estimate")?;
        floor_normalize(lam);
    }

    let num_factors = design.num_factors();
    let mut msg_av: Vec<Vec<Vec<f64>>> = (0..num_factors)
        .map(|f| {
            table
                .factor_masks(f)
                .iter()
                .map(|m| vec![1.0; m.pi.len()])
                .collect()
        })
        .collect();
    let mut msg_va: Vec<Vec<Vec<f64>>> = msg_av.clone();
    let mut scratch = FactorScratch::new();

    for round in 0..b {
        // Variable to check, from a frozen snapshot of check messages. In the
        // first round all check messages are flat, so the update is just the
        // normalized local estimate.
        for f in 0..num_factors {
            for (pos, mask) in table.factor_masks(f).iter().enumerate() {
                let l = mask.section;
                let out = &mut msg_va[f][pos];
                out.copy_from_slice(&lambda[l]);
                if round > 0 {
                    for &(fa, fpos) in table.section_edges(l) {
                        if fa == f {
                            continue;
                        }
                        for (o, &m) in out.iter_mut().zip(&msg_av[fa][fpos]) {
                            *o *= m;
                        }
                    }
                    floor_normalize(out);
                }
            }
        }
        // Check to variable.
        for f in 0..num_factors {
            let incoming: Vec<&[f64]> = msg_va[f].iter().map(|v| v.as_slice()).collect();
            factor_messages_into(design, table, f, &incoming, &mut scratch, &mut msg_av[f])?;
        }
    }

    let mut state = BeliefState {
        lambda,
        msg_av,
        q: Vec::new(),
    };
    state.q = (0..design.num_sections())
        .map(|l| {
            let mut mu = state.extrinsic(table, l);
            let sum: f64 = mu.iter().sum();
            let inv = 1.0 / sum;
            for x in mu.iter_mut() {
                *x = 1.0 - (1.0 - *x * inv).powi(k_a as i32);
            }
            mu
        })
        .collect();
    Ok(state)
}

/// Extrinsic prior vectors `q(l, k) = 1 - (1 - mu_{s_l}(k)/||mu_{s_l}||_1)^{K_a}`
/// after `b` BP rounds.
pub fn run_bp(
    design: &CodeDesign,
    table: &ParityMaskTable,
    lambda: &[Vec<f64>],
    b: usize,
    k_a: usize,
) -> Result<Vec<Vec<f64>>> {
    Ok(run_bp_state(design, table, lambda, b, k_a)?.q)
}

/// Local estimates from the effective observation: a scalar posterior mean
/// per entry under the uninformative prior `q_l = 1 - (1 - 1/m_l)^{K_a}`,
/// normalized per section.
pub fn init_lambda(
    r: &[f64],
    tau: f64,
    design: &CodeDesign,
    amplitudes: &AmplitudeDiagonal,
    k_a: usize,
) -> Vec<Vec<f64>> {
    assert!(tau > 0.0, "tau must be positive");
    assert_eq!(r.len(), design.layout().total_len());
    (0..design.num_sections())
        .map(|l| {
            let m = design.layout().section_size(l);
            let q = 1.0 - (1.0 - 1.0 / m as f64).powi(k_a as i32);
            let d = amplitudes.amplitude(l);
            // Same logistic form as `pme`, with the prior term hoisted out of
            // the per-entry loop.
            let ln_ratio = ((1.0 - q) / q).ln();
            let half_inv_var = 1.0 / (2.0 * tau * tau);
            let d_sq = d * d;
            let mut lam: Vec<f64> = r[design.layout().range(l)]
                .iter()
                .map(|&x| {
                    let w = ln_ratio + (d_sq - 2.0 * x * d) * half_inv_var;
                    if w >= 0.0 {
                        let e = (-w).exp();
                        e / (1.0 + e)
                    } else {
                        1.0 / (1.0 + w.exp())
                    }
                })
                .collect();
            floor_normalize(&mut lam);
            lam
        })
        .collect()
}

/// Debug dump of per-section belief vectors, one CSV row per section.
pub fn write_beliefs_csv<W: Write>(mut w: W, vectors: &[Vec<f64>]) -> std::io::Result<()> {
    for (l, v) in vectors.iter().enumerate() {
        write!(w, "{l}")?;
        for x in v {
            write!(w, ",{x}")?;
        }
        writeln!(w)?;
    }
    Ok(())
}
