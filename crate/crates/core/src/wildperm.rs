//! Wild permutations: block reversals built so that the rearranged product
//! `℘_σ(f₁, f₂) = P(f₁ · σ_* f₂)` outgrows `℘` of every earlier permutation.
//!
//! Given earlier permutations `S₀`, the boundaries of the new block reversal
//! follow
//!
//! ```text
//! b_ℓ     = max_{σ' ∈ S₀} ℘_σ'(ℓ)
//! a_ℓ     = min { n : g_{s_{ℓ−1} f₁, s_{ℓ−1} f₂}(n) ≥ ℓ · b_ℓ }
//! ℓ₁ = 1, ℓ_{ν+1} = ℓ_ν + a_{ℓ_ν}
//! ```
//!
//! where `g` is the min-product and `s` the shift. Blocks past the configured
//! depth are generated lazily whenever something evaluates the permutation
//! there.

use std::io::Write;
use std::sync::{Arc, Mutex};

use num_bigint::{BigInt, BigUint};
use num_rational::BigRational;
use num_traits::{One, ToPrimitive};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::permutation::{boundaries_from_strings, boundaries_to_strings, Permutation, PermutationKind};
use crate::rational::{from_biguint, symmetric_ratio};
use crate::weightfn::{
    min_product_threshold_index, product, rearrange_prefix, shift, DivergingSeq, MinProductSearch, Weight,
    WeightSpec,
};

/// Caps and strategies for the wild construction.
#[derive(Debug, Clone)]
pub struct WildConfig {
    /// Blocks generated eagerly by [`build_sigma`].
    pub depth: usize,
    /// Largest index scanned by any single search or rearrangement.
    pub scan_cap: u64,
    /// Hard limit on the number of boundaries of one permutation.
    pub max_boundaries: usize,
    pub search: MinProductSearch,
}

impl Default for WildConfig {
    fn default() -> Self {
        WildConfig { depth: 5, scan_cap: 1_000_000, max_boundaries: 64, search: MinProductSearch::Auto }
    }
}

/// First `m` values of `℘_σ(f₁, f₂)`.
pub fn wp_prefix(sigma: &Permutation, f1: &Weight, f2: &Weight, m: usize, cap: u64) -> Result<Vec<BigRational>> {
    if sigma.is_identity() {
        return product(f1, f2).prefix(m);
    }
    rearrange_prefix(&DivergingSeq::wp_integrand(f1, f2, sigma), m, cap)
}

fn wp_sequence(sigma: &Permutation, f1: &Weight, f2: &Weight, cap: u64) -> DivergingSeq {
    if sigma.is_identity() {
        product(f1, f2).into()
    } else {
        DivergingSeq::rearranged(&DivergingSeq::wp_integrand(f1, f2, sigma), cap)
    }
}

/// Quantities computed at one boundary `ℓ_ν`.
#[derive(Debug, Clone, PartialEq)]
pub struct RecursionRecord {
    pub ell: BigUint,
    pub b: BigRational,
    /// `ℓ · b_ℓ`
    pub threshold: BigRational,
    pub a: BigUint,
}

/// Sequential state of one run of the boundary recursion.
pub struct WildRecursionState {
    f1: Weight,
    f2: Weight,
    priors: Vec<DivergingSeq>,
    config: WildConfig,
    ell: Vec<BigUint>,
    records: Vec<RecursionRecord>,
}

impl WildRecursionState {
    /// `priors` are the memoized `℘` sequences of the permutations already in
    /// the set; there must be at least one.
    pub fn new(f1: &Weight, f2: &Weight, priors: Vec<DivergingSeq>, config: WildConfig) -> Result<Self> {
        if priors.is_empty() {
            return Err(Error::Precondition("the wild recursion needs a non-empty prior set".into()));
        }
        Ok(WildRecursionState {
            f1: f1.clone(),
            f2: f2.clone(),
            priors,
            config,
            ell: vec![BigUint::one()],
            records: Vec::new(),
        })
    }

    pub fn boundaries(&self) -> &[BigUint] {
        &self.ell
    }

    pub fn records(&self) -> &[RecursionRecord] {
        &self.records
    }

    /// `b_ℓ = max ℘_σ'(ℓ)` over the prior set.
    pub fn b_at(&self, ell: &BigUint) -> Result<BigRational> {
        let mut best: Option<BigRational> = None;
        for wp in &self.priors {
            let v = wp.eval(ell)?;
            if best.as_ref().is_none_or(|b| v > *b) {
                best = Some(v);
            }
        }
        Ok(best.expect("priors are non-empty"))
    }

    /// Appends and returns `ℓ_{ν+1} = ℓ_ν + a_{ℓ_ν}`.
    pub fn next_boundary(&mut self) -> Result<BigUint> {
        if self.ell.len() >= self.config.max_boundaries {
            return Err(Error::CapacityExceeded(format!(
                "wild recursion reached {} boundaries",
                self.config.max_boundaries
            )));
        }
        let ell = self.ell.last().expect("ℓ₁ = 1").clone();
        let b = self.b_at(&ell)?;
        let threshold = from_biguint(&ell) * &b;
        let offset = &ell - 1u32;
        let f1 = shift(&self.f1, &offset);
        let f2 = shift(&self.f2, &offset);
        let a = min_product_threshold_index(&f1, &f2, &threshold, self.config.scan_cap, self.config.search)?;
        let next = &ell + &a;
        log::debug!("wild recursion: ℓ = {ell}, a = {a}, next = {next}");
        self.records.push(RecursionRecord { ell, b, threshold, a });
        self.ell.push(next.clone());
        Ok(next)
    }

    fn ensure(&mut self, count: usize) -> Result<()> {
        while self.ell.len() < count {
            self.next_boundary()?;
        }
        Ok(())
    }
}

/// A member of a wild set: the permutation, its memoized `℘` sequence, and
/// the recursion that produced it (absent for the identity seed and for
/// imported generators).
#[derive(Clone)]
pub struct WildPermutation {
    sigma: Permutation,
    wp: DivergingSeq,
    state: Option<Arc<Mutex<WildRecursionState>>>,
}

impl std::fmt::Debug for WildPermutation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("WildPermutation").field("sigma", &self.sigma).finish()
    }
}

impl WildPermutation {
    /// The identity, `℘_id(f₁, f₂) = f₁ · f₂`.
    pub fn seed(f1: &Weight, f2: &Weight) -> Self {
        let sigma = Permutation::identity();
        WildPermutation { wp: wp_sequence(&sigma, f1, f2, 0), sigma, state: None }
    }

    /// Wraps a permutation that carries no construction record.
    pub fn from_permutation(sigma: Permutation, f1: &Weight, f2: &Weight, cap: u64) -> Self {
        WildPermutation { wp: wp_sequence(&sigma, f1, f2, cap), sigma, state: None }
    }

    pub fn permutation(&self) -> &Permutation {
        &self.sigma
    }

    /// Memoized `℘_σ(f₁, f₂)`.
    pub fn wp(&self) -> &DivergingSeq {
        &self.wp
    }

    pub fn boundaries(&self) -> Option<Vec<BigUint>> {
        self.sigma.boundaries()
    }

    pub fn is_constructed(&self) -> bool {
        self.state.is_some()
    }

    /// Recursion record at `ℓ_ν` (`ν ≥ 1`), extending the recursion if needed.
    pub fn record(&self, nu: usize) -> Result<RecursionRecord> {
        let state = self.state.as_ref().ok_or_else(|| {
            Error::Precondition("permutation carries no recursion state".into())
        })?;
        if nu == 0 {
            return Err(Error::IndexOutOfRange("block index ν starts at 1".into()));
        }
        let mut st = state.lock().unwrap();
        st.ensure(nu + 1)?;
        Ok(st.records[nu - 1].clone())
    }

    /// All records generated so far.
    pub fn records(&self) -> Vec<RecursionRecord> {
        match &self.state {
            Some(s) => s.lock().unwrap().records().to_vec(),
            None => Vec::new(),
        }
    }
}

/// Builds the next wild permutation over `wild_so_far`, with `depth` blocks
/// generated up front and later blocks produced on demand.
pub fn build_sigma(f1: &Weight, f2: &Weight, wild_so_far: &[WildPermutation], config: &WildConfig) -> Result<WildPermutation> {
    if config.depth == 0 {
        return Err(Error::Precondition("depth must be ≥ 1".into()));
    }
    let priors = wild_so_far.iter().map(|w| w.wp.clone()).collect();
    let mut state = WildRecursionState::new(f1, f2, priors, config.clone())?;
    state.ensure(config.depth + 1)?;
    let initial = state.boundaries().to_vec();
    let state = Arc::new(Mutex::new(state));
    let shared = Arc::clone(&state);
    let extender = move |current: &[BigUint]| -> Result<BigUint> {
        let mut st = shared.lock().unwrap();
        st.ensure(current.len() + 1)?;
        Ok(st.boundaries()[current.len()].clone())
    };
    let sigma = Permutation::block_reversal_with(initial, Box::new(extender), config.max_boundaries)?;
    Ok(WildPermutation { wp: wp_sequence(&sigma, f1, f2, config.scan_cap), sigma, state: Some(state) })
}

/// Outcome of a Step 4 or Step 5 check.
#[derive(Debug, Clone, PartialEq)]
pub struct StepCheck {
    pub holds: bool,
    /// `ℓ_ν · b_{ℓ_ν}`
    pub bound: BigRational,
    /// Smallest value seen (Step 4) or `℘_σ(ℓ_ν)` (Step 5).
    pub value: BigRational,
    /// First violating index and its value.
    pub witness: Option<(BigUint, BigRational)>,
}

/// Checks `f₁(k) · f₂(σ(k)) ≥ bound` for every `k ∈ [start, k_max]`.
pub fn check_step4(
    sigma: &Permutation,
    f1: &Weight,
    f2: &Weight,
    start: &BigUint,
    bound: &BigRational,
    k_max: &BigUint,
) -> Result<StepCheck> {
    if k_max < start {
        return Err(Error::Precondition(format!("k_max {k_max} is below ℓ_ν = {start}")));
    }
    let mut k = start.clone();
    let mut smallest: Option<BigRational> = None;
    while &k <= k_max {
        let v = f1.eval(&k)? * f2.eval(&sigma.apply(&k)?)?;
        if v < *bound {
            return Ok(StepCheck { holds: false, bound: bound.clone(), value: v.clone(), witness: Some((k, v)) });
        }
        if smallest.as_ref().is_none_or(|s| v < *s) {
            smallest = Some(v);
        }
        k += 1u32;
    }
    Ok(StepCheck { holds: true, bound: bound.clone(), value: smallest.expect("non-empty range"), witness: None })
}

/// Step 4 at block `ν`: `(f₁ · σ_* f₂)(k) ≥ ℓ_ν b_{ℓ_ν}` for `ℓ_ν ≤ k ≤ k_max`.
pub fn verify_step4(wp: &WildPermutation, f1: &Weight, f2: &Weight, nu: usize, k_max: u64) -> Result<StepCheck> {
    // read the record before evaluating σ: evaluation may extend the stream
    let record = wp.record(nu)?;
    check_step4(&wp.sigma, f1, f2, &record.ell, &record.threshold, &BigUint::from(k_max))
}

/// Step 5 at block `ν`: `℘_σ(f₁, f₂)(ℓ_ν) ≥ ℓ_ν b_{ℓ_ν}`.
pub fn verify_step5(wp: &WildPermutation, nu: usize) -> Result<StepCheck> {
    let record = wp.record(nu)?;
    let value = wp.wp.eval(&record.ell)?;
    let holds = value >= record.threshold;
    let witness = (!holds).then(|| (record.ell.clone(), value.clone()));
    Ok(StepCheck { holds, bound: record.threshold, value, witness })
}

/// Index at which two `℘` sequences differ by more than a factor `c`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    pub i: usize,
    pub j: usize,
    pub index: String,
    pub ratio_num: String,
    pub ratio_den: String,
}

impl Certificate {
    pub fn ratio(&self) -> Result<BigRational> {
        let parse = |s: &str| -> Result<BigInt> {
            s.parse().map_err(|_| Error::Parse(format!("bad certificate integer {s:?}")))
        };
        Ok(BigRational::new(parse(&self.ratio_num)?, parse(&self.ratio_den)?))
    }
}

/// Least `n ≤ cap` with `max(℘_σ(n)/℘_σ'(n), ℘_σ'(n)/℘_σ(n)) > c`.
pub fn divergence_witness(
    a: &WildPermutation,
    b: &WildPermutation,
    c: &BigRational,
    cap: u64,
) -> Result<(u64, BigRational)> {
    if a.sigma.same_as(&b.sigma) {
        return Err(Error::Precondition("divergence witness needs two different permutations".into()));
    }
    if *c < BigRational::one() {
        return Err(Error::Precondition("ratio threshold must be ≥ 1".into()));
    }
    let mut largest = BigRational::one();
    for n in 1..=cap {
        let r = symmetric_ratio(&a.wp.at(n)?, &b.wp.at(n)?);
        if r > *c {
            return Ok((n, r));
        }
        if r > largest {
            largest = r;
        }
    }
    Err(Error::WitnessNotFoundBelowCap { cap, largest_ratio: largest })
}

/// Pairwise certified wild set.
#[derive(Debug, Clone)]
pub struct WildSet {
    pub f1: Weight,
    pub f2: Weight,
    pub generators: Vec<WildPermutation>,
    pub certificates: Vec<Certificate>,
}

/// Seeds with the identity and adds permutations built over the current set
/// until `target_size` generators exist, certifying every pair with ratio
/// threshold `c` below `witness_cap`.
pub fn grow_wild_set(
    f1: &Weight,
    f2: &Weight,
    target_size: usize,
    config: &WildConfig,
    c: &BigRational,
    witness_cap: u64,
) -> Result<WildSet> {
    if target_size == 0 {
        return Err(Error::Precondition("target size must be ≥ 1".into()));
    }
    let mut generators = vec![WildPermutation::seed(f1, f2)];
    while generators.len() < target_size {
        let next = build_sigma(f1, f2, &generators, config)?;
        generators.push(next);
    }
    let mut certificates = Vec::new();
    for j in 1..generators.len() {
        for i in 0..j {
            let (index, ratio) = divergence_witness(&generators[i], &generators[j], c, witness_cap)?;
            certificates.push(Certificate {
                i,
                j,
                index: index.to_string(),
                ratio_num: ratio.numer().to_string(),
                ratio_den: ratio.denom().to_string(),
            });
        }
    }
    Ok(WildSet { f1: f1.clone(), f2: f2.clone(), generators, certificates })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorJson {
    pub kind: String,
    #[serde(default)]
    pub boundaries: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WildSetJson {
    pub f1: WeightSpec,
    pub f2: WeightSpec,
    pub generators: Vec<GeneratorJson>,
    pub certificates: Vec<Certificate>,
}

impl WildSet {
    /// JSON form with the boundaries generated so far.
    pub fn to_json(&self) -> WildSetJson {
        let generators = self
            .generators
            .iter()
            .map(|g| match g.sigma.kind() {
                PermutationKind::Identity => GeneratorJson { kind: "identity".into(), boundaries: Vec::new() },
                _ => GeneratorJson {
                    kind: "block_reversal".into(),
                    boundaries: boundaries_to_strings(&g.boundaries().unwrap_or_default()),
                },
            })
            .collect();
        WildSetJson {
            f1: self.f1.to_spec(),
            f2: self.f2.to_spec(),
            generators,
            certificates: self.certificates.clone(),
        }
    }

    /// Rebuilds a set from JSON. Block reversals come back with their
    /// recorded, finite boundary lists.
    pub fn from_json(json: &WildSetJson, cap: u64) -> Result<Self> {
        let f1 = Weight::from_spec(&json.f1)?;
        let f2 = Weight::from_spec(&json.f2)?;
        let generators = json
            .generators
            .iter()
            .map(|g| {
                let sigma = match g.kind.as_str() {
                    "identity" => Permutation::identity(),
                    "block_reversal" => Permutation::block_reversal(boundaries_from_strings(&g.boundaries)?)?,
                    other => return Err(Error::Parse(format!("unknown generator kind {other:?}"))),
                };
                Ok(WildPermutation::from_permutation(sigma, &f1, &f2, cap))
            })
            .collect::<Result<Vec<_>>>()?;
        for c in &json.certificates {
            if c.i >= generators.len() || c.j >= generators.len() || c.i == c.j {
                return Err(Error::Parse(format!("certificate refers to generators {} and {}", c.i, c.j)));
            }
            c.ratio()?;
        }
        Ok(WildSet { f1, f2, generators, certificates: json.certificates.clone() })
    }

    /// Writes `n, wp_0, wp_1, …` for `n = 1..=m` as CSV. Values are exact
    /// rationals.
    pub fn write_growth_csv<W: Write>(&self, m: usize, out: W) -> Result<()> {
        let mut columns = Vec::with_capacity(self.generators.len());
        for g in &self.generators {
            columns.push((1..=m as u64).map(|n| g.wp.at(n)).collect::<Result<Vec<_>>>()?);
        }
        let mut w = csv::Writer::from_writer(out);
        let io = |e: csv::Error| Error::CapacityExceeded(format!("writing CSV: {e}"));
        let mut header = vec!["n".to_string()];
        header.extend((0..self.generators.len()).map(|i| format!("wp_{i}")));
        w.write_record(&header).map_err(io)?;
        for n in 0..m {
            let mut row = vec![(n + 1).to_string()];
            row.extend(columns.iter().map(|c| c[n].to_string()));
            w.write_record(&row).map_err(io)?;
        }
        w.flush().map_err(|e| Error::CapacityExceeded(format!("writing CSV: {e}")))?;
        Ok(())
    }
}

/// `ℓ_{ν+1} − ℓ_ν = a_{ℓ_ν}` and strict growth, for a recorded run.
pub fn recursion_consistent(boundaries: &[BigUint], records: &[RecursionRecord]) -> bool {
    records.iter().enumerate().all(|(i, r)| {
        boundaries.get(i) == Some(&r.ell)
            && boundaries.get(i + 1).is_none_or(|next| *next == &r.ell + &r.a && *next > r.ell)
    })
}

/// Largest boundary index `ν` with `ℓ_ν ≤ limit`.
pub fn blocks_below(boundaries: &[BigUint], limit: u64) -> usize {
    boundaries.iter().take_while(|b| b.to_u64().is_some_and(|b| b <= limit)).count()
}
