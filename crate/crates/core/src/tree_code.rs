//! Outer tree code: section layout, parity generation over quotient rings,
//! consistency checking, and hard stitching of decoded fragments.
//!
//! A codeword is split into `L` sections of `v_l` bits each. Every section is
//! either pure information or pure parity. A parity section `p` constrains a
//! set of information sections `W_p`: its value is the sum, in the ring of
//! integers modulo `2^{v_p}`, of the binary matrix products `v(j) * G_{j,p}`
//! taken over `F_2` and read back as integers. The induced factor graph is
//! what the belief-propagation stage of the decoder operates on.
//!
//! Bit order is MSB-first throughout: the leftmost bit of a fragment is the
//! most significant bit of its integer index.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

use crate::error::{Error, Result};

// ─── Bit/index conversions ──────────────────────────────────────────────────

/// Interpret `bits` (each 0 or 1, MSB first) as an integer.
pub fn bits_to_index(bits: &[u8]) -> u32 {
    debug_assert!(bits.len() <= 32);
    bits.iter()
        .fold(0u32, |acc, &b| (acc << 1) | u32::from(b & 1))
}

/// Expand `k` into `width` bits, MSB first.
pub fn index_to_bits(k: u32, width: usize) -> Vec<u8> {
    (0..width)
        .map(|i| ((k >> (width - 1 - i)) & 1) as u8)
        .collect()
}

/// Multiply the `width`-bit row vector `k` by a binary matrix over `F_2`.
///
/// Row `r` of the matrix is packed MSB-first in `rows[r]`, so the product is
/// the XOR of the rows selected by the bits of `k`.
#[inline]
pub fn apply_generator(rows: &[u32], width: usize, k: u32) -> u32 {
    let mut acc = 0u32;
    for (r, &row) in rows.iter().enumerate().take(width) {
        if (k >> (width - 1 - r)) & 1 == 1 {
            acc ^= row;
        }
    }
    acc
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Stable per-edge RNG seed so generators are reproducible across platforms.
fn edge_seed(seed: u64, info_section: usize, parity_section: usize) -> u64 {
    splitmix64(seed ^ splitmix64(((info_section as u64) << 32) | parity_section as u64))
}

// ─── Section layout ──────────────────────────────────────────────────────────

/// Per-section bit widths and the offsets of each section inside the flat
/// length-`m` state vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SectionLayout {
    bits: Vec<u32>,
    offsets: Vec<usize>,
    total: usize,
}

impl SectionLayout {
    pub fn new(bits: Vec<u32>) -> Self {
        let mut offsets = Vec::with_capacity(bits.len());
        let mut total = 0usize;
        for &v in &bits {
            offsets.push(total);
            total += 1usize << v;
        }
        Self {
            bits,
            offsets,
            total,
        }
    }

    pub fn num_sections(&self) -> usize {
        self.bits.len()
    }

    /// Bit width `v_l` of section `l`.
    pub fn section_bits(&self, l: usize) -> u32 {
        self.bits[l]
    }

    /// Number of entries `m_l = 2^{v_l}` in section `l`.
    pub fn section_size(&self, l: usize) -> usize {
        1usize << self.bits[l]
    }

    /// Range of section `l` inside the flat state vector.
    pub fn range(&self, l: usize) -> std::ops::Range<usize> {
        self.offsets[l]..self.offsets[l] + self.section_size(l)
    }

    /// Total length `m` of the flat state vector.
    pub fn total_len(&self) -> usize {
        self.total
    }
}

// ─── Code design ─────────────────────────────────────────────────────────────

/// Serialized form of a design. Generators are regenerated from `seed`,
/// never stored.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct DesignSchema {
    num_sections: usize,
    section_bits: Vec<u32>,
    info_sections: Vec<usize>,
    factor_neighbors: BTreeMap<String, Vec<usize>>,
    seed: u64,
}

/// An outer tree code: homogeneous info/parity sections, one check factor per
/// parity section, and seeded Rademacher generator matrices on every edge.
///
/// Immutable after construction; safe to share across threads.
#[derive(Debug, Clone)]
pub struct CodeDesign {
    layout: SectionLayout,
    info_sections: Vec<usize>,
    parity_sections: Vec<usize>,
    /// Per factor: the information sections it constrains (`W_p`).
    factor_info: Vec<Vec<usize>>,
    /// Per factor: its parity section.
    factor_parity: Vec<usize>,
    /// Per section: the factors it participates in (`N(s_l)`).
    var_factors: Vec<Vec<usize>>,
    /// Per factor, per info neighbor (aligned with `factor_info`): packed rows.
    generators: Vec<Vec<Vec<u32>>>,
    seed: u64,
    girth: usize,
    payload_bits: usize,
}

impl CodeDesign {
    /// Assemble a design from explicit structure. Generators are sampled from
    /// `seed` unless `generators` supplies them (aligned with
    /// `factor_neighbors`).
    pub fn from_parts(
        section_bits: Vec<u32>,
        info_sections: Vec<usize>,
        factor_neighbors: Vec<(usize, Vec<usize>)>,
        generators: Option<Vec<Vec<Vec<u32>>>>,
        seed: u64,
    ) -> Result<Self> {
        let num_sections = section_bits.len();
        if section_bits.iter().any(|&v| v == 0 || v > 24) {
            return Err(Error::Config("section bit widths must be in 1..=24".into()));
        }
        let mut is_info = vec![false; num_sections];
        for &l in &info_sections {
            if l >= num_sections {
                return Err(Error::Config(format!("info section {l} out of range")));
            }
            if is_info[l] {
                return Err(Error::Config(format!("duplicate info section {l}")));
            }
            is_info[l] = true;
        }
        let parity_sections: Vec<usize> = (0..num_sections).filter(|&l| !is_info[l]).collect();
        if factor_neighbors.len() != parity_sections.len() {
            return Err(Error::Config(
                "every parity section needs exactly one factor".into(),
            ));
        }

        let mut factor_info = Vec::with_capacity(factor_neighbors.len());
        let mut factor_parity = Vec::with_capacity(factor_neighbors.len());
        let mut var_factors = vec![Vec::new(); num_sections];
        let mut seen_parity = vec![false; num_sections];
        for (f, (p, members)) in factor_neighbors.iter().enumerate() {
            let p = *p;
            if p >= num_sections || is_info[p] || seen_parity[p] {
                return Err(Error::Config(format!(
                    "bad parity section {p} in factor {f}"
                )));
            }
            seen_parity[p] = true;
            if members.is_empty() {
                return Err(Error::Config(format!("factor {f} constrains no sections")));
            }
            for &j in members {
                if j >= num_sections || !is_info[j] {
                    return Err(Error::Config(format!(
                        "factor {f} neighbor {j} is not an info section"
                    )));
                }
                var_factors[j].push(f);
            }
            var_factors[p].push(f);
            factor_info.push(members.clone());
            factor_parity.push(p);
        }

        let generators = match generators {
            Some(g) => {
                if g.len() != factor_info.len()
                    || g.iter()
                        .zip(&factor_info)
                        .any(|(gf, wf)| gf.len() != wf.len())
                {
                    return Err(Error::Config("generator table shape mismatch".into()));
                }
                g
            }
            None => sample_generators(&section_bits, &factor_info, &factor_parity, seed),
        };
        for (f, gf) in generators.iter().enumerate() {
            for (gi, &j) in gf.iter().zip(&factor_info[f]) {
                if gi.len() != section_bits[j] as usize {
                    return Err(Error::Config(format!(
                        "generator ({j},{}) row count",
                        factor_parity[f]
                    )));
                }
            }
        }

        let payload_bits = info_sections
            .iter()
            .map(|&l| section_bits[l] as usize)
            .sum();
        let layout = SectionLayout::new(section_bits);
        let girth = factor_graph_girth(num_sections, &factor_info, &factor_parity);
        Ok(Self {
            layout,
            info_sections,
            parity_sections,
            factor_info,
            factor_parity,
            var_factors,
            generators,
            seed,
            girth,
            payload_bits,
        })
    }

    pub fn layout(&self) -> &SectionLayout {
        &self.layout
    }

    pub fn num_sections(&self) -> usize {
        self.layout.num_sections()
    }

    /// Payload width `w` in bits.
    pub fn payload_bits(&self) -> usize {
        self.payload_bits
    }

    pub fn info_sections(&self) -> &[usize] {
        &self.info_sections
    }

    pub fn parity_sections(&self) -> &[usize] {
        &self.parity_sections
    }

    pub fn num_factors(&self) -> usize {
        self.factor_parity.len()
    }

    /// Information sections constrained by factor `f` (`W_p`).
    pub fn factor_info_sections(&self, f: usize) -> &[usize] {
        &self.factor_info[f]
    }

    /// Parity section owned by factor `f`.
    pub fn factor_parity_section(&self, f: usize) -> usize {
        self.factor_parity[f]
    }

    /// Factors adjacent to section `l` (`N(s_l)`).
    pub fn section_factors(&self, l: usize) -> &[usize] {
        &self.var_factors[l]
    }

    /// Packed generator rows for the edge from info neighbor `j` of factor `f`.
    pub fn generator(&self, f: usize, j: usize) -> &[u32] {
        let pos = self.factor_info[f]
            .iter()
            .position(|&x| x == j)
            .expect("section is not a neighbor of this factor");
        &self.generators[f][pos]
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Shortest cycle length of the factor graph, counted in edges.
    pub fn girth(&self) -> usize {
        self.girth
    }

    /// Parity precursor of index `k` from info section `j` at factor `f`:
    /// `[v(j) G_{j,p}]` as an element of `Z/2^{v_p}Z`.
    #[inline]
    pub fn precursor(&self, f: usize, j: usize, k: u32) -> u32 {
        let pos = self.factor_info[f].iter().position(|&x| x == j).unwrap();
        apply_generator(
            &self.generators[f][pos],
            self.layout.section_bits(j) as usize,
            k,
        )
    }

    /// Serialize the design structure (not the generators) as JSON.
    pub fn to_json(&self) -> String {
        let schema = DesignSchema {
            num_sections: self.num_sections(),
            section_bits: (0..self.num_sections())
                .map(|l| self.layout.section_bits(l))
                .collect(),
            info_sections: self.info_sections.clone(),
            factor_neighbors: self
                .factor_parity
                .iter()
                .zip(&self.factor_info)
                .map(|(&p, w)| (p.to_string(), w.clone()))
                .collect(),
            seed: self.seed,
        };
        serde_json::to_string_pretty(&schema).expect("design serialization")
    }

    /// Rebuild a design from [`CodeDesign::to_json`] output; generators are
    /// regenerated from the stored seed.
    pub fn from_json(text: &str) -> Result<Self> {
        let schema: DesignSchema =
            serde_json::from_str(text).map_err(|e| Error::Config(format!("design JSON: {e}")))?;
        if schema.section_bits.len() != schema.num_sections {
            return Err(Error::Config("section_bits length mismatch".into()));
        }
        let mut factors: Vec<(usize, Vec<usize>)> = Vec::new();
        for (p, w) in schema.factor_neighbors {
            let p: usize = p
                .parse()
                .map_err(|_| Error::Config(format!("bad parity section key {p:?}")))?;
            factors.push((p, w));
        }
        factors.sort_by_key(|(p, _)| *p);
        Self::from_parts(
            schema.section_bits,
            schema.info_sections,
            factors,
            None,
            schema.seed,
        )
    }
}

fn sample_generators(
    section_bits: &[u32],
    factor_info: &[Vec<usize>],
    factor_parity: &[usize],
    seed: u64,
) -> Vec<Vec<Vec<u32>>> {
    factor_info
        .iter()
        .zip(factor_parity)
        .map(|(members, &p)| {
            members
                .iter()
                .map(|&j| {
                    let mut rng = ChaCha8Rng::seed_from_u64(edge_seed(seed, j, p));
                    let mask = (1u64 << section_bits[p]) - 1;
                    (0..section_bits[j])
                        .map(|_| (rng.gen::<u64>() & mask) as u32)
                        .collect()
                })
                .collect()
        })
        .collect()
}

/// Shortest cycle of the bipartite section/factor graph, in edges.
/// Returns `usize::MAX` for forests.
fn factor_graph_girth(
    num_sections: usize,
    factor_info: &[Vec<usize>],
    factor_parity: &[usize],
) -> usize {
    // Nodes: sections [0, S), factors [S, S + F).
    let s = num_sections;
    let mut adj = vec![Vec::new(); s + factor_info.len()];
    for (f, members) in factor_info.iter().enumerate() {
        for &j in members.iter().chain(std::iter::once(&factor_parity[f])) {
            adj[j].push(s + f);
            adj[s + f].push(j);
        }
    }
    let mut best = usize::MAX;
    // For every edge (u, v): shortest u-v path avoiding that edge, plus one.
    for u in 0..adj.len() {
        for &v in &adj[u] {
            if v < u {
                continue;
            }
            let mut dist = vec![usize::MAX; adj.len()];
            dist[u] = 0;
            let mut queue = std::collections::VecDeque::from([u]);
            while let Some(x) = queue.pop_front() {
                for &y in &adj[x] {
                    if (x == u && y == v) || (x == v && y == u) {
                        continue;
                    }
                    if dist[y] == usize::MAX {
                        dist[y] = dist[x] + 1;
                        queue.push_back(y);
                    }
                }
            }
            if dist[v] != usize::MAX {
                best = best.min(dist[v] + 1);
            }
        }
    }
    best
}

// ─── Payload and index vector ────────────────────────────────────────────────

/// A `w`-bit message, stored one bit per byte (0 or 1), MSB of the first
/// fragment first.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Payload {
    pub bits: Vec<u8>,
}

impl Payload {
    pub fn new(bits: Vec<u8>) -> Self {
        Self { bits }
    }

    pub fn random<R: Rng>(width: usize, rng: &mut R) -> Self {
        Self {
            bits: (0..width).map(|_| rng.gen_range(0..2u8)).collect(),
        }
    }

    /// Split into per-info-section fragments in info-section order.
    pub fn fragments(&self, design: &CodeDesign) -> Vec<Vec<u8>> {
        let mut out = Vec::with_capacity(design.info_sections().len());
        let mut pos = 0usize;
        for &l in design.info_sections() {
            let v = design.layout().section_bits(l) as usize;
            out.push(self.bits[pos..pos + v].to_vec());
            pos += v;
        }
        out
    }
}

/// Per-section integer indices `(k_1, ..., k_L)` of a codeword.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct IndexVector {
    pub k: Vec<u32>,
}

impl IndexVector {
    /// Concatenated bit representation of the full codeword.
    pub fn to_bits(&self, design: &CodeDesign) -> Vec<u8> {
        let mut bits = Vec::new();
        for (l, &k) in self.k.iter().enumerate() {
            bits.extend(index_to_bits(k, design.layout().section_bits(l) as usize));
        }
        bits
    }

    /// Inverse of [`IndexVector::to_bits`].
    pub fn from_bits(design: &CodeDesign, bits: &[u8]) -> Self {
        let mut k = Vec::with_capacity(design.num_sections());
        let mut pos = 0usize;
        for l in 0..design.num_sections() {
            let v = design.layout().section_bits(l) as usize;
            k.push(bits_to_index(&bits[pos..pos + v]));
            pos += v;
        }
        Self { k }
    }

    /// Extract the payload bits carried by the information sections.
    pub fn payload(&self, design: &CodeDesign) -> Payload {
        let mut bits = Vec::with_capacity(design.payload_bits());
        for &l in design.info_sections() {
            bits.extend(index_to_bits(
                self.k[l],
                design.layout().section_bits(l) as usize,
            ));
        }
        Payload::new(bits)
    }
}

// ─── Operations ──────────────────────────────────────────────────────────────

/// Build the triadic design used throughout: info sections in consecutive
/// pairs, one local parity per pair, and cross parities chaining the pairs
/// into a single ring so every info section has degree exactly two.
///
/// `extra_cross` appends additional parity sections that pair info sections
/// from non-adjacent pairs (raising their degree to three); used to curb
/// oversized output lists at high user counts.
pub fn make_triadic_design(
    payload_bits: usize,
    section_bits: u32,
    extra_cross: usize,
    seed: u64,
) -> Result<CodeDesign> {
    let v = section_bits as usize;
    if v == 0 || payload_bits == 0 || payload_bits % v != 0 {
        return Err(Error::Config(format!(
            "payload width {payload_bits} is not a multiple of section width {v}"
        )));
    }
    let n_info = payload_bits / v;
    if n_info < 4 || n_info % 2 != 0 {
        return Err(Error::Config(format!(
            "triadic designs need an even number of info sections >= 4, got {n_info}"
        )));
    }
    let t = n_info / 2;
    if extra_cross > t / 2 {
        return Err(Error::Config(format!(
            "at most {} extra cross parities supported for {t} local pairs",
            t / 2
        )));
    }

    // Sections 3j, 3j+1 carry info pair j; 3j+2 is its local parity.
    let a = |j: usize| 3 * j;
    let b = |j: usize| 3 * j + 1;
    let num_sections = 3 * t + t + extra_cross;
    let bits = vec![section_bits; num_sections];
    let mut info = Vec::with_capacity(n_info);
    let mut factors = Vec::new();
    for j in 0..t {
        info.push(a(j));
        info.push(b(j));
        factors.push((3 * j + 2, vec![a(j), b(j)]));
    }
    for j in 0..t {
        factors.push((3 * t + j, vec![b(j), a((j + 1) % t)]));
    }
    for e in 0..extra_cross {
        factors.push((4 * t + e, vec![a(e), a(e + t / 2)]));
    }
    CodeDesign::from_parts(bits, info, factors, None, seed)
}

/// Encode a payload: info sections carry the payload fragments, each parity
/// section is the modular sum of its matrix-mixed precursors.
pub fn encode(design: &CodeDesign, payload: &Payload) -> IndexVector {
    assert_eq!(
        payload.bits.len(),
        design.payload_bits(),
        "payload width mismatch"
    );
    let mut k = vec![0u32; design.num_sections()];
    let mut pos = 0usize;
    for &l in design.info_sections() {
        let v = design.layout().section_bits(l) as usize;
        k[l] = bits_to_index(&payload.bits[pos..pos + v]);
        pos += v;
    }
    for f in 0..design.num_factors() {
        let p = design.factor_parity_section(f);
        let modulus = 1u64 << design.layout().section_bits(p);
        let mut sum = 0u64;
        for &j in design.factor_info_sections(f) {
            sum = (sum + u64::from(design.precursor(f, j, k[j]))) % modulus;
        }
        k[p] = sum as u32;
    }
    IndexVector { k }
}

/// Check one parity factor. `local` holds the indices of `W_p` in order,
/// followed by the parity section's own index.
pub fn parity_consistent(design: &CodeDesign, f: usize, local: &[u32]) -> bool {
    let members = design.factor_info_sections(f);
    assert_eq!(
        local.len(),
        members.len() + 1,
        "need |W_p| + 1 local indices"
    );
    let p = design.factor_parity_section(f);
    let modulus = 1u64 << design.layout().section_bits(p);
    let mut sum = 0u64;
    for (&j, &kj) in members.iter().zip(local) {
        sum = (sum + u64::from(design.precursor(f, j, kj))) % modulus;
    }
    sum as u32 == local[members.len()]
}

/// Check every factor of a full codeword.
pub fn codeword_consistent(design: &CodeDesign, iv: &IndexVector) -> bool {
    (0..design.num_factors()).all(|f| {
        let mut local: Vec<u32> = design
            .factor_info_sections(f)
            .iter()
            .map(|&j| iv.k[j])
            .collect();
        local.push(iv.k[design.factor_parity_section(f)]);
        parity_consistent(design, f, &local)
    })
}

/// A stitched codeword candidate with its summed score.
#[derive(Debug, Clone)]
pub struct Stitched {
    pub indices: IndexVector,
    pub score: f64,
}

/// Order sections so that parity factors close as early as possible while
/// extending paths; minimizes the unconstrained frontier during stitching.
fn stitch_order(design: &CodeDesign) -> Vec<usize> {
    let n = design.num_sections();
    let mut placed = vec![false; n];
    let mut order = Vec::with_capacity(n);
    let place = |l: usize, placed: &mut Vec<bool>, order: &mut Vec<usize>| {
        placed[l] = true;
        order.push(l);
    };
    let completes = |l: usize, placed: &[bool], design: &CodeDesign| -> usize {
        design
            .section_factors(l)
            .iter()
            .filter(|&&f| {
                design
                    .factor_info_sections(f)
                    .iter()
                    .chain(std::iter::once(&design.factor_parity_section(f)))
                    .all(|&x| x == l || placed[x])
            })
            .count()
    };
    let start = design.info_sections().first().copied().unwrap_or(0);
    place(start, &mut placed, &mut order);
    while order.len() < n {
        // Prefer the section that closes the most factors; tie-break on
        // adjacency to placed sections, then on index.
        let mut best: Option<(usize, usize, usize)> = None; // (completions, adjacency, !l)
        for l in 0..n {
            if placed[l] {
                continue;
            }
            let c = completes(l, &placed, design);
            let adj = design
                .section_factors(l)
                .iter()
                .filter(|&&f| {
                    design
                        .factor_info_sections(f)
                        .iter()
                        .chain(std::iter::once(&design.factor_parity_section(f)))
                        .any(|&x| placed[x])
                })
                .count();
            let key = (c, adj, n - l);
            if best.map_or(true, |(bc, ba, bl)| key > (bc, ba, bl)) {
                best = Some(key);
            }
        }
        let (_, _, inv) = best.unwrap();
        place(n - inv, &mut placed, &mut order);
    }
    order
}

/// Stitch per-section candidate lists into full codewords.
///
/// Sections are visited in an order that closes parity factors as soon as
/// possible; any partial path violating a fully-determined factor is dropped
/// immediately. After levels where at least one factor was checked, the
/// surviving frontier is capped at `beam` paths (default `4 * k_out`) ranked
/// by summed score. Returns at most `k_out` full paths, best first.
pub fn hard_stitch(
    design: &CodeDesign,
    candidates: &[Vec<(u32, f64)>],
    k_out: usize,
    beam: Option<usize>,
) -> Vec<Stitched> {
    assert_eq!(candidates.len(), design.num_sections());
    assert!(
        candidates.iter().all(|c| !c.is_empty()),
        "every section list must be non-empty"
    );
    let beam = beam.unwrap_or(4 * k_out.max(1));
    let order = stitch_order(design);
    let mut placed_at = vec![usize::MAX; design.num_sections()];
    for (pos, &l) in order.iter().enumerate() {
        placed_at[l] = pos;
    }
    // Factors to check at each level: those whose last member is placed there.
    let mut checks_at: Vec<Vec<usize>> = vec![Vec::new(); order.len()];
    for f in 0..design.num_factors() {
        let last = design
            .factor_info_sections(f)
            .iter()
            .chain(std::iter::once(&design.factor_parity_section(f)))
            .map(|&x| placed_at[x])
            .max()
            .unwrap();
        checks_at[last].push(f);
    }

    // Paths store indices in placement order.
    let mut paths: Vec<(Vec<u32>, f64)> = vec![(Vec::new(), 0.0)];
    for (level, &l) in order.iter().enumerate() {
        let mut next: Vec<(Vec<u32>, f64)> = Vec::with_capacity(paths.len() * candidates[l].len());
        for (prefix, score) in &paths {
            'cand: for &(k, s) in &candidates[l] {
                for &f in &checks_at[level] {
                    let p = design.factor_parity_section(f);
                    let mut local: Vec<u32> = design
                        .factor_info_sections(f)
                        .iter()
                        .map(|&j| if j == l { k } else { prefix[placed_at[j]] })
                        .collect();
                    local.push(if p == l { k } else { prefix[placed_at[p]] });
                    if !parity_consistent(design, f, &local) {
                        continue 'cand;
                    }
                }
                let mut np = prefix.clone();
                np.push(k);
                next.push((np, score + s));
            }
        }
        if !checks_at[level].is_empty() && next.len() > beam {
            next.sort_by(|a, b| b.1.total_cmp(&a.1));
            next.truncate(beam);
        }
        paths = next;
        if paths.is_empty() {
            return Vec::new();
        }
    }

    paths.sort_by(|a, b| b.1.total_cmp(&a.1));
    paths.truncate(k_out);
    paths
        .into_iter()
        .map(|(slots, score)| {
            let mut k = vec![0u32; design.num_sections()];
            for (pos, &l) in order.iter().enumerate() {
                k[l] = slots[pos];
            }
            Stitched {
                indices: IndexVector { k },
                score,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn identity_rows(v: u32) -> Vec<u32> {
        (0..v).map(|r| 1u32 << (v - 1 - r)).collect()
    }

    /// Bit-by-bit reference for `[v(j) G]` working on expanded boolean
    /// matrices; kept independent of the packed-XOR production path.
    fn precursor_reference(rows: &[u32], vj: usize, vp: usize, k: u32) -> u32 {
        let kbits = index_to_bits(k, vj);
        let mut out = vec![0u8; vp];
        for (r, &row) in rows.iter().enumerate() {
            let rbits = index_to_bits(row, vp);
            for c in 0..vp {
                out[c] ^= kbits[r] & rbits[c];
            }
        }
        bits_to_index(&out)
    }

    #[test]
    fn triadic_16_layout() {
        let d = make_triadic_design(128, 16, 0, 7).unwrap();
        assert_eq!(d.num_sections(), 16);
        assert_eq!(d.info_sections().len(), 8);
        assert_eq!(d.parity_sections().len(), 8);
        assert_eq!(d.payload_bits(), 128);
        assert_eq!(d.layout().total_len(), 16 << 16);
        for &l in d.info_sections() {
            assert_eq!(d.section_factors(l).len(), 2, "info section {l} degree");
        }
        for f in 0..d.num_factors() {
            assert_eq!(d.factor_info_sections(f).len(), 2, "factor {f} is triadic");
            assert_eq!(d.section_factors(d.factor_parity_section(f)).len(), 1);
        }
        assert_eq!(d.girth(), 16);
    }

    #[test]
    fn triadic_18_layout() {
        let d = make_triadic_design(128, 16, 2, 7).unwrap();
        assert_eq!(d.num_sections(), 18);
        assert_eq!(d.info_sections().len(), 8);
        assert_eq!(d.parity_sections().len(), 10);
        for &l in d.info_sections() {
            assert!(d.section_factors(l).len() <= 3);
        }
        assert!(d.girth() >= 8);
        assert!(d.girth() > 2, "one BP round stays below girth");
    }

    #[test]
    fn triadic_miniature_by_inspection() {
        let d = make_triadic_design(8, 2, 0, 3).unwrap();
        assert_eq!(d.num_sections(), 8);
        assert_eq!(d.info_sections(), &[0, 1, 3, 4]);
        assert_eq!(d.parity_sections(), &[2, 5, 6, 7]);
        for &l in d.info_sections() {
            assert_eq!(d.section_factors(l).len(), 2);
        }
        for f in 0..d.num_factors() {
            assert_eq!(d.factor_info_sections(f).len(), 2);
        }
        assert_eq!(d.girth(), 8);
    }

    #[test]
    fn triadic_rejects_bad_shapes() {
        assert!(make_triadic_design(10, 4, 0, 0).is_err());
        assert!(
            make_triadic_design(4, 2, 0, 0).is_err(),
            "only two info sections"
        );
        assert!(
            make_triadic_design(6, 2, 0, 0).is_err(),
            "odd info section count"
        );
        assert!(
            make_triadic_design(8, 2, 5, 0).is_err(),
            "too many extra parities"
        );
    }

    #[test]
    fn encode_identity_generators() {
        // Sections 0,1 info; section 2 parity with identity generators.
        let d = CodeDesign::from_parts(
            vec![2, 2, 2],
            vec![0, 1],
            vec![(2, vec![0, 1])],
            Some(vec![vec![identity_rows(2), identity_rows(2)]]),
            0,
        )
        .unwrap();
        let iv = encode(&d, &Payload::new(vec![0, 1, 1, 0]));
        assert_eq!(iv.k, vec![1, 2, 3], "k3 = (1 + 2) mod 4");
        let zero = encode(&d, &Payload::new(vec![0; 4]));
        assert_eq!(zero.k, vec![0, 0, 0]);
    }

    #[test]
    fn encode_matches_scalar_reference() {
        let d = make_triadic_design(16, 4, 0, 11).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let payload = Payload::random(16, &mut rng);
            let iv = encode(&d, &payload);
            for f in 0..d.num_factors() {
                let p = d.factor_parity_section(f);
                let vp = d.layout().section_bits(p) as usize;
                let modulus = 1u64 << vp;
                let mut sum = 0u64;
                for &j in d.factor_info_sections(f) {
                    let vj = d.layout().section_bits(j) as usize;
                    sum = (sum
                        + u64::from(precursor_reference(d.generator(f, j), vj, vp, iv.k[j])))
                        % modulus;
                }
                assert_eq!(iv.k[p], sum as u32, "factor {f}");
            }
        }
    }

    #[test]
    fn bit_index_bijection() {
        for width in [1usize, 3, 8, 12] {
            for k in 0..(1u32 << width) {
                assert_eq!(bits_to_index(&index_to_bits(k, width)), k);
            }
        }
        let d = make_triadic_design(8, 2, 0, 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..20 {
            let iv = encode(&d, &Payload::random(8, &mut rng));
            assert_eq!(IndexVector::from_bits(&d, &iv.to_bits(&d)), iv);
            assert_eq!(encode(&d, &iv.payload(&d)), iv);
        }
    }

    #[test]
    fn consistency_roundtrip_exhaustive_v2() {
        let d = make_triadic_design(8, 2, 0, 17).unwrap();
        for word in 0u32..256 {
            let payload = Payload::new(index_to_bits(word, 8));
            let iv = encode(&d, &payload);
            assert!(codeword_consistent(&d, &iv));
        }
    }

    #[test]
    fn consistency_roundtrip_random_v16() {
        let d = make_triadic_design(128, 16, 0, 23).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let iv = encode(&d, &Payload::random(128, &mut rng));
            assert!(codeword_consistent(&d, &iv));
        }
        let d18 = make_triadic_design(128, 16, 2, 23).unwrap();
        for _ in 0..20 {
            let iv = encode(&d18, &Payload::random(128, &mut rng));
            assert!(codeword_consistent(&d18, &iv));
        }
    }

    #[test]
    fn flipped_parity_bit_fails_its_factor() {
        let d = make_triadic_design(16, 4, 0, 29).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let iv = encode(&d, &Payload::random(16, &mut rng));
        for f in 0..d.num_factors() {
            let p = d.factor_parity_section(f);
            let mut bad = iv.clone();
            bad.k[p] ^= 1;
            let mut local: Vec<u32> = d
                .factor_info_sections(f)
                .iter()
                .map(|&j| bad.k[j])
                .collect();
            local.push(bad.k[p]);
            assert!(!parity_consistent(&d, f, &local));
        }
    }

    #[test]
    fn cross_splice_detection_rate() {
        // Splice one info section of another valid codeword; over resampled
        // generators the discriminating factor should accept with rate 2^-v.
        let v = 4u32;
        let trials = 2000;
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let pa = Payload::new(index_to_bits(0b1010_0110_0101_1001, 16));
        let pb = Payload::new(index_to_bits(0b0011_1100_1111_0000, 16));
        let mut hits = 0usize;
        for t in 0..trials {
            let d = make_triadic_design(16, v, 0, 1000 + t as u64).unwrap();
            let ia = encode(&d, &pa);
            let ib = encode(&d, &pb);
            // Swap the first info section; check a factor containing it.
            let j = d.info_sections()[0];
            let f = d.section_factors(j)[0];
            let p = d.factor_parity_section(f);
            let mut local: Vec<u32> = d
                .factor_info_sections(f)
                .iter()
                .map(|&x| if x == j { ib.k[j] } else { ia.k[x] })
                .collect();
            local.push(ia.k[p]);
            if parity_consistent(&d, f, &local) {
                hits += 1;
            }
            let _ = rng.gen::<u32>();
        }
        let rate = hits as f64 / trials as f64;
        let q = 2f64.powi(-(v as i32));
        let sigma = (q * (1.0 - q) / trials as f64).sqrt();
        assert!(
            (rate - q).abs() <= 3.0 * sigma + 1e-12,
            "splice acceptance rate {rate} vs {q} (3 sigma {:.2e})",
            3.0 * sigma
        );
    }

    #[test]
    fn parity_collision_frequency_appendix_bound() {
        // Fixed distinct fragments, generators resampled R times; matching
        // parity frequency must sit within 3 sigma of 2^-p.
        let p_bits = 4u32;
        let r_trials = 100_000usize;
        let k1 = 0b1011u32;
        let k2 = 0b0110u32;
        let mut hits = 0usize;
        for t in 0..r_trials {
            let mut rng = ChaCha8Rng::seed_from_u64(t as u64);
            let mask = (1u64 << p_bits) - 1;
            let rows: Vec<u32> = (0..p_bits)
                .map(|_| (rng.gen::<u64>() & mask) as u32)
                .collect();
            let g1 = apply_generator(&rows, p_bits as usize, k1);
            let g2 = apply_generator(&rows, p_bits as usize, k2);
            if g1 == g2 {
                hits += 1;
            }
        }
        let rate = hits as f64 / r_trials as f64;
        let q = 2f64.powi(-(p_bits as i32));
        let sigma = (q * (1.0 - q) / r_trials as f64).sqrt();
        assert!(
            (rate - q).abs() <= 3.0 * sigma,
            "collision rate {rate} vs {q} (3 sigma {:.2e})",
            3.0 * sigma
        );
    }

    #[test]
    fn stitch_recovers_planted_codewords() {
        let d = make_triadic_design(128, 16, 0, 41).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let k_users = 5;
        let ivs: Vec<IndexVector> = (0..k_users)
            .map(|_| encode(&d, &Payload::random(128, &mut rng)))
            .collect();
        let lists: Vec<Vec<(u32, f64)>> = (0..d.num_sections())
            .map(|l| ivs.iter().map(|iv| (iv.k[l], rng.gen::<f64>())).collect())
            .collect();
        let out = hard_stitch(&d, &lists, k_users, None);
        assert_eq!(out.len(), k_users);
        for iv in &ivs {
            assert!(
                out.iter().any(|s| &s.indices == iv),
                "planted codeword recovered"
            );
        }
        for s in &out {
            assert!(codeword_consistent(&d, &s.indices));
        }
        for w in out.windows(2) {
            assert!(w[0].score >= w[1].score, "sorted by descending score");
        }
    }

    #[test]
    fn stitch_corrupted_single_path_is_empty() {
        let d = make_triadic_design(16, 4, 0, 43).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let iv = encode(&d, &Payload::random(16, &mut rng));
        let mut lists: Vec<Vec<(u32, f64)>> = (0..d.num_sections())
            .map(|l| vec![(iv.k[l], 0.0)])
            .collect();
        let p = d.parity_sections()[0];
        lists[p][0].0 ^= 1;
        assert!(hard_stitch(&d, &lists, 1, None).is_empty());
    }

    #[test]
    fn stitch_matches_exhaustive_enumeration() {
        let d = make_triadic_design(8, 2, 0, 47).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let k_users = 3;
        let ivs: Vec<IndexVector> = (0..k_users)
            .map(|_| encode(&d, &Payload::random(8, &mut rng)))
            .collect();
        // Lists of size 2K: planted fragments plus random ones, random scores.
        let lists: Vec<Vec<(u32, f64)>> = (0..d.num_sections())
            .map(|l| {
                let mut list: Vec<(u32, f64)> =
                    ivs.iter().map(|iv| (iv.k[l], rng.gen::<f64>())).collect();
                while list.len() < 2 * k_users {
                    list.push((
                        rng.gen_range(0..d.layout().section_size(l) as u32),
                        rng.gen(),
                    ));
                }
                list
            })
            .collect();

        // Exhaustive oracle over all combinations.
        let mut oracle: Vec<(Vec<u32>, f64)> = Vec::new();
        let sizes: Vec<usize> = lists.iter().map(|l| l.len()).collect();
        let total: usize = sizes.iter().product();
        for mut idx in 0..total {
            let mut ks = Vec::with_capacity(lists.len());
            let mut score = 0.0;
            for (l, list) in lists.iter().enumerate() {
                let c = idx % sizes[l];
                idx /= sizes[l];
                ks.push(list[c].0);
                score += list[c].1;
            }
            let iv = IndexVector { k: ks };
            if codeword_consistent(&d, &iv) {
                oracle.push((iv.k, score));
            }
        }
        oracle.sort_by(|a, b| b.1.total_cmp(&a.1));
        oracle.truncate(k_users);

        let got = hard_stitch(&d, &lists, k_users, Some(1 << 20));
        assert_eq!(got.len(), oracle.len());
        for (g, o) in got.iter().zip(&oracle) {
            assert_eq!(g.indices.k, o.0);
            assert!((g.score - o.1).abs() < 1e-12);
        }
    }

    #[test]
    fn design_json_roundtrip() {
        let d = make_triadic_design(128, 16, 2, 99).unwrap();
        let text = d.to_json();
        assert!(!text.contains("generators"), "generators never serialized");
        let d2 = CodeDesign::from_json(&text).unwrap();
        assert_eq!(d2.num_sections(), d.num_sections());
        assert_eq!(d2.info_sections(), d.info_sections());
        assert_eq!(d2.girth(), d.girth());
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let payload = Payload::random(128, &mut rng);
        assert_eq!(
            encode(&d, &payload),
            encode(&d2, &payload),
            "generators regenerate from seed"
        );
    }
}
