//! Weight functions and the diverging sequences built from them.
//!
//! A [`Weight`] is a positive, monotone, unbounded rule on the positive
//! integers drawn from a closed symbolic family (powers, power·log,
//! exponentials, tables with a declared tail, and products and shifts of
//! those). All values are exact rationals. A [`DivergingSeq`] drops the
//! monotonicity requirement but carries a constructive tail lower bound, which
//! is what makes monotone rearrangement computable on finite prefixes.

use std::collections::BinaryHeap;
use std::fmt;
use std::sync::{Arc, RwLock};

use num_bigint::{BigInt, BigUint};
use num_integer::Integer;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::permutation::Permutation;
use crate::rational::{format_rational, from_biguint, parse_biguint, parse_rational, symmetric_ratio};

/// Largest index at which an exponential weight is evaluated.
const MAX_EXPONENTIAL_INDEX: u64 = 1 << 20;
/// Largest numerator/denominator allowed for power and log exponents.
const MAX_EXPONENT_PART: u32 = 1024;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TailRule {
    /// Continue the last increment of the prefix forever.
    Linear,
    /// Undefined beyond the prefix.
    Error,
}

#[derive(Clone, Debug)]
struct Table {
    prefix: Arc<[BigRational]>,
    /// `suffix_min[i] = min(prefix[i..])`
    suffix_min: Arc<[BigRational]>,
    tail: TailRule,
    step: BigRational,
}

impl Table {
    fn new(prefix: Vec<BigRational>, tail: TailRule) -> Result<Self> {
        if prefix.is_empty() {
            return Err(Error::InvalidWeight("table prefix is empty".into()));
        }
        if let Some(i) = prefix.iter().position(|v| !v.is_positive()) {
            return Err(Error::InvalidWeight(format!("table entry {} is not positive", i + 1)));
        }
        let len = prefix.len();
        let step = if len >= 2 {
            &prefix[len - 1] - &prefix[len - 2]
        } else {
            prefix[0].clone()
        };
        if tail == TailRule::Linear && !step.is_positive() {
            return Err(Error::InvalidWeight(
                "linear tail needs a strictly increasing last step; a constant tail does not diverge".into(),
            ));
        }
        let mut suffix_min = prefix.clone();
        for i in (0..len - 1).rev() {
            if suffix_min[i + 1] < suffix_min[i] {
                suffix_min[i] = suffix_min[i + 1].clone();
            }
        }
        Ok(Table { prefix: prefix.into(), suffix_min: suffix_min.into(), tail, step })
    }

    fn len(&self) -> usize {
        self.prefix.len()
    }

    fn is_nondecreasing(&self) -> bool {
        self.prefix.windows(2).all(|w| w[0] <= w[1])
    }

    fn eval(&self, n: &BigUint) -> Result<BigRational> {
        let len = self.len();
        if let Some(i) = n.to_usize() {
            if (1..=len).contains(&i) {
                return Ok(self.prefix[i - 1].clone());
            }
        }
        match self.tail {
            TailRule::Error => Err(Error::CapacityExceeded(format!(
                "table of length {len} evaluated at {n}"
            ))),
            TailRule::Linear => {
                let extra = from_biguint(&(n - BigUint::from(len)));
                Ok(&self.prefix[len - 1] + &self.step * extra)
            }
        }
    }

    /// Lower bound for every value at an index greater than `k`.
    fn tail_lower_bound(&self, k: &BigUint) -> Result<BigRational> {
        let len = self.len();
        if self.tail == TailRule::Error {
            return Err(Error::CapacityExceeded(format!(
                "table of length {len} has no tail to bound"
            )));
        }
        match k.to_usize() {
            Some(k) if k < len => {
                let tail_start = self.eval(&BigUint::from(len + 1))?;
                Ok(self.suffix_min[k].clone().min(tail_start))
            }
            _ => self.eval(&(k + 1u32)),
        }
    }
}

#[derive(Debug)]
enum WeightKind {
    /// `⌊(n^a · (1 + ⌊log₂ n⌋)^c)^(1/d)⌋`, i.e. `n^α (1+⌊log₂ n⌋)^γ` with
    /// `α = a/d`, `γ = c/d`; exact when `d = 1`.
    Power { alpha: BigRational, gamma: BigRational, a: u32, c: u32, d: u32 },
    Exponential { beta: BigRational },
    Table(Table),
    Product(Weight, Weight),
    Shift(Weight, BigUint),
}

#[derive(Debug)]
struct WeightInner {
    kind: WeightKind,
    unbounded: bool,
}

/// Monotone, positive rule on the positive integers.
#[derive(Clone)]
pub struct Weight {
    inner: Arc<WeightInner>,
}

impl fmt::Debug for Weight {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.inner.kind {
            WeightKind::Power { alpha, gamma, .. } if gamma.is_zero() => write!(f, "power({alpha})"),
            WeightKind::Power { alpha, gamma, .. } => write!(f, "power_log({alpha}, {gamma})"),
            WeightKind::Exponential { beta } => write!(f, "exp({beta})"),
            WeightKind::Table(t) => write!(f, "table(len={}, {:?})", t.len(), t.tail),
            WeightKind::Product(a, b) => write!(f, "({a:?} · {b:?})"),
            WeightKind::Shift(w, l) => write!(f, "shift({w:?}, {l})"),
        }
    }
}

/// Family tag of a weight.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Family {
    Power,
    PowerLog,
    Exponential,
    Table,
    Product,
    Shift,
}

/// Asymptotic class `β^n · n^α · (log n)^γ` of a symbolic weight. Two
/// symbolic weights are equivalent exactly when their signatures agree.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrowthSignature {
    pub exp_base: BigRational,
    pub power: BigRational,
    pub log_power: BigRational,
}

fn small_part(r: &BigInt, what: &str) -> Result<u32> {
    r.to_u32()
        .filter(|&v| v <= MAX_EXPONENT_PART)
        .ok_or_else(|| Error::InvalidWeight(format!("{what} too large for exact evaluation")))
}

impl Weight {
    fn from_kind(kind: WeightKind, unbounded: bool) -> Self {
        Weight { inner: Arc::new(WeightInner { kind, unbounded }) }
    }

    /// `n ↦ n^α`, `α > 0`. Non-integer exponents evaluate to `⌊n^α⌋`.
    pub fn power(alpha: BigRational) -> Result<Self> {
        if !alpha.is_positive() {
            return Err(Error::InvalidWeight(format!("power exponent must be positive, got {alpha}")));
        }
        Self::power_log(alpha, BigRational::zero())
    }

    pub fn power_int(alpha: u32) -> Self {
        Self::power(BigRational::from_integer(alpha.into())).expect("positive integer exponent")
    }

    /// `n ↦ n^α (1 + ⌊log₂ n⌋)^γ` with `α, γ ≥ 0` not both zero.
    pub fn power_log(alpha: BigRational, gamma: BigRational) -> Result<Self> {
        if alpha.is_negative() || gamma.is_negative() {
            return Err(Error::InvalidWeight("power_log exponents must be non-negative".into()));
        }
        if alpha.is_zero() && gamma.is_zero() {
            return Err(Error::InvalidWeight("power_log(0, 0) is constant, not unbounded".into()));
        }
        let d = alpha.denom().lcm(gamma.denom());
        let a = small_part(&(alpha.numer() * (&d / alpha.denom())), "power exponent")?;
        let c = small_part(&(gamma.numer() * (&d / gamma.denom())), "log exponent")?;
        let d = small_part(&d, "exponent denominator")?;
        Ok(Self::from_kind(WeightKind::Power { alpha, gamma, a, c, d }, true))
    }

    /// `n ↦ β^n`, `β > 1`.
    pub fn exponential(beta: BigRational) -> Result<Self> {
        if beta <= BigRational::one() {
            return Err(Error::InvalidWeight(format!("exponential base must exceed 1, got {beta}")));
        }
        Ok(Self::from_kind(WeightKind::Exponential { beta }, true))
    }

    pub fn exponential_int(beta: u32) -> Result<Self> {
        Self::exponential(BigRational::from_integer(beta.into()))
    }

    /// Table-backed weight. The prefix must be positive and nondecreasing.
    /// A `Linear` tail continues the last increment; an `Error` tail leaves
    /// the weight undefined beyond the prefix (no unbounded certificate).
    pub fn table(prefix: Vec<BigRational>, tail: TailRule) -> Result<Self> {
        let table = Table::new(prefix, tail)?;
        if !table.is_nondecreasing() {
            return Err(Error::InvalidWeight(
                "table prefix is not monotone; use DivergingSeq::table".into(),
            ));
        }
        Ok(Self::from_kind(WeightKind::Table(table), tail == TailRule::Linear))
    }

    pub fn table_u64(prefix: &[u64], tail: TailRule) -> Result<Self> {
        Self::table(prefix.iter().map(|&v| crate::rational::from_u64(v)).collect(), tail)
    }

    pub fn family(&self) -> Family {
        match &self.inner.kind {
            WeightKind::Power { gamma, .. } if gamma.is_zero() => Family::Power,
            WeightKind::Power { .. } => Family::PowerLog,
            WeightKind::Exponential { .. } => Family::Exponential,
            WeightKind::Table(_) => Family::Table,
            WeightKind::Product(..) => Family::Product,
            WeightKind::Shift(..) => Family::Shift,
        }
    }

    /// Every constructed weight is monotone; tables are checked on ingest.
    pub fn is_monotone(&self) -> bool {
        true
    }

    pub fn is_unbounded(&self) -> bool {
        self.inner.unbounded
    }

    /// True when `log w` extends to a concave function, so that
    /// `k ↦ w₁(k) w₂(c − k)` attains its minimum over an interval at an
    /// endpoint. Holds for integer powers, exponentials, and their products
    /// and shifts.
    pub fn is_log_concave(&self) -> bool {
        match &self.inner.kind {
            WeightKind::Power { c, d, .. } => *c == 0 && *d == 1,
            WeightKind::Exponential { .. } => true,
            WeightKind::Table(_) => false,
            WeightKind::Product(a, b) => a.is_log_concave() && b.is_log_concave(),
            WeightKind::Shift(w, _) => w.is_log_concave(),
        }
    }

    /// Asymptotic class for symbolic weights; `None` when a table is involved.
    pub fn signature(&self) -> Option<GrowthSignature> {
        match &self.inner.kind {
            WeightKind::Power { alpha, gamma, .. } => Some(GrowthSignature {
                exp_base: BigRational::one(),
                power: alpha.clone(),
                log_power: gamma.clone(),
            }),
            WeightKind::Exponential { beta } => Some(GrowthSignature {
                exp_base: beta.clone(),
                power: BigRational::zero(),
                log_power: BigRational::zero(),
            }),
            WeightKind::Table(_) => None,
            WeightKind::Product(a, b) => {
                let (a, b) = (a.signature()?, b.signature()?);
                Some(GrowthSignature {
                    exp_base: a.exp_base * b.exp_base,
                    power: a.power + b.power,
                    log_power: a.log_power + b.log_power,
                })
            }
            WeightKind::Shift(w, _) => w.signature(),
        }
    }

    /// `w(n)` for `n ≥ 1`.
    pub fn eval(&self, n: &BigUint) -> Result<BigRational> {
        if n.is_zero() {
            return Err(Error::IndexOutOfRange("weights are indexed from 1".into()));
        }
        match &self.inner.kind {
            WeightKind::Power { a, c, d, .. } => Ok(power_value(n, *a, *c, *d)),
            WeightKind::Exponential { beta } => {
                let e = n
                    .to_u64()
                    .filter(|&e| e <= MAX_EXPONENTIAL_INDEX)
                    .ok_or_else(|| {
                        Error::CapacityExceeded(format!("exponential weight evaluated at {n}"))
                    })?;
                Ok(num_traits::pow(beta.clone(), e as usize))
            }
            WeightKind::Table(t) => t.eval(n),
            WeightKind::Product(a, b) => Ok(a.eval(n)? * b.eval(n)?),
            WeightKind::Shift(w, l) => w.eval(&(n + l)),
        }
    }

    pub fn at(&self, n: u64) -> Result<BigRational> {
        self.eval(&BigUint::from(n))
    }

    /// First `len` values.
    pub fn prefix(&self, len: usize) -> Result<Vec<BigRational>> {
        (1..=len as u64).map(|n| self.at(n)).collect()
    }

    /// Least `n ≤ cap` with `w(n) ≥ r`.
    pub fn unbounded_witness(&self, r: &BigRational, cap: u64) -> Result<u64> {
        let n = least_index_at_least(|n| self.eval(n), r, Some(cap), "searching for an unbounded witness")?;
        Ok(n.to_u64().expect("bounded by cap"))
    }

    pub fn to_spec(&self) -> WeightSpec {
        let mut spec = WeightSpec::empty(match self.family() {
            Family::Power => "power",
            Family::PowerLog => "power_log",
            Family::Exponential => "exp",
            Family::Table => "table",
            Family::Product => "product",
            Family::Shift => "shift",
        });
        match &self.inner.kind {
            WeightKind::Power { alpha, gamma, .. } => {
                spec.alpha = Some(format_rational(alpha));
                if !gamma.is_zero() {
                    spec.gamma = Some(format_rational(gamma));
                }
            }
            WeightKind::Exponential { beta } => spec.beta = Some(format_rational(beta)),
            WeightKind::Table(t) => {
                spec.prefix = Some(t.prefix.iter().map(format_rational).collect());
                spec.tail_rule = Some(t.tail);
            }
            WeightKind::Product(a, b) => {
                let mut factors = Vec::new();
                for w in [a, b] {
                    match &w.inner.kind {
                        WeightKind::Product(..) => factors.extend(w.to_spec().factors.unwrap_or_default()),
                        _ => factors.push(w.to_spec()),
                    }
                }
                spec.factors = Some(factors);
            }
            WeightKind::Shift(w, l) => {
                spec.base = Some(Box::new(w.to_spec()));
                spec.shift = Some(l.to_string());
            }
        }
        spec
    }

    pub fn from_spec(spec: &WeightSpec) -> Result<Self> {
        let need = |field: &Option<String>, name: &str| -> Result<BigRational> {
            let s = field
                .as_ref()
                .ok_or_else(|| Error::Parse(format!("family {:?} needs field {name:?}", spec.family)))?;
            parse_rational(s)
        };
        match spec.family.as_str() {
            "power" => Self::power(need(&spec.alpha, "alpha")?),
            "power_log" => Self::power_log(
                need(&spec.alpha, "alpha")?,
                spec.gamma.as_deref().map(parse_rational).transpose()?.unwrap_or_else(BigRational::zero),
            ),
            "exp" | "exponential" => Self::exponential(need(&spec.beta, "beta")?),
            "table" => {
                let prefix = spec
                    .prefix
                    .as_ref()
                    .ok_or_else(|| Error::Parse("table needs a prefix".into()))?
                    .iter()
                    .map(|s| parse_rational(s))
                    .collect::<Result<Vec<_>>>()?;
                Self::table(prefix, spec.tail_rule.unwrap_or(TailRule::Linear))
            }
            "product" => {
                let factors = spec
                    .factors
                    .as_ref()
                    .filter(|f| !f.is_empty())
                    .ok_or_else(|| Error::Parse("product needs at least one factor".into()))?;
                let mut it = factors.iter().map(Self::from_spec);
                let first = it.next().expect("non-empty")?;
                it.try_fold(first, |acc, w| Ok(product(&acc, &w?)))
            }
            "shift" => {
                let base = spec.base.as_ref().ok_or_else(|| Error::Parse("shift needs a base".into()))?;
                let l = spec.shift.as_deref().map(parse_biguint).transpose()?.unwrap_or_default();
                Ok(shift(&Self::from_spec(base)?, &l))
            }
            other => Err(Error::Parse(format!("unknown weight family {other:?}"))),
        }
    }
}

fn power_value(n: &BigUint, a: u32, c: u32, d: u32) -> BigRational {
    let mut x = if a == 1 { n.clone() } else { num_traits::pow(n.clone(), a as usize) };
    if c > 0 {
        x *= num_traits::pow(BigUint::from(n.bits()), c as usize);
    }
    if d > 1 {
        x = x.nth_root(d);
    }
    BigRational::from_integer(BigInt::from(x))
}

/// JSON form of a weight. Rationals are strings (`"p/q"` or `"p"`).
///
/// Families `power`, `exp`, `power_log` and `table` are the base format;
/// `product` (with `factors`) and `shift` (with `base` and `shift`) describe
/// derived weights without loss.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightSpec {
    pub family: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prefix: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tail_rule: Option<TailRule>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub factors: Option<Vec<WeightSpec>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base: Option<Box<WeightSpec>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shift: Option<String>,
}

impl WeightSpec {
    fn empty(family: &str) -> Self {
        WeightSpec {
            family: family.to_string(),
            alpha: None,
            beta: None,
            gamma: None,
            prefix: None,
            tail_rule: None,
            factors: None,
            base: None,
            shift: None,
        }
    }
}

/// Pointwise product. Monotone and unbounded certificates propagate.
pub fn product(w1: &Weight, w2: &Weight) -> Weight {
    Weight::from_kind(
        WeightKind::Product(w1.clone(), w2.clone()),
        w1.is_unbounded() || w2.is_unbounded(),
    )
}

/// `n ↦ w(n + ℓ)`.
pub fn shift(w: &Weight, ell: &BigUint) -> Weight {
    if ell.is_zero() {
        return w.clone();
    }
    if let WeightKind::Shift(inner, l) = &w.inner.kind {
        return Weight::from_kind(WeightKind::Shift(inner.clone(), l + ell), w.is_unbounded());
    }
    Weight::from_kind(WeightKind::Shift(w.clone(), ell.clone()), w.is_unbounded())
}

/// `min { f₁(k) f₂(n+1−k) : 1 ≤ k ≤ n }`, by direct enumeration.
pub fn min_product(f1: &Weight, f2: &Weight, n: u64) -> Result<BigRational> {
    if n == 0 {
        return Err(Error::Precondition("min_product needs n ≥ 1".into()));
    }
    let mut best: Option<BigRational> = None;
    for k in 1..=n {
        let v = f1.at(k)? * f2.at(n + 1 - k)?;
        if best.as_ref().is_none_or(|b| v < *b) {
            best = Some(v);
        }
    }
    Ok(best.expect("n ≥ 1"))
}

/// How to find the least `n` with `min_product(f₁, f₂, n) ≥ t`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MinProductSearch {
    /// Endpoint formula for log-concave weights, otherwise `Incremental`.
    #[default]
    Auto,
    /// Exact pointer sweep over the monotone per-`k` thresholds.
    Incremental,
    /// Evaluate `min_product` at `n = 1, 2, …` (quadratic; small inputs only).
    Naive,
}

/// Least `n ≥ 1` with `min_product(f₁, f₂, n) ≥ threshold`.
///
/// `cap` bounds the indices that are scanned. The endpoint path for
/// log-concave weights only evaluates `O(log n)` points and is not capped.
pub fn min_product_threshold_index(
    f1: &Weight,
    f2: &Weight,
    threshold: &BigRational,
    cap: u64,
    search: MinProductSearch,
) -> Result<BigUint> {
    match search {
        MinProductSearch::Auto if f1.is_log_concave() && f2.is_log_concave() => {
            // g(n) = min(f₁(1) f₂(n), f₁(n) f₂(1)), and both terms are monotone
            let f1_1 = f1.at(1)?;
            let f2_1 = f2.at(1)?;
            let by_f2 = least_index_at_least(|n| Ok(&f1_1 * f2.eval(n)?), threshold, None, "")?;
            let by_f1 = least_index_at_least(|n| Ok(f1.eval(n)? * &f2_1), threshold, None, "")?;
            Ok(by_f2.max(by_f1))
        }
        MinProductSearch::Auto | MinProductSearch::Incremental => incremental_threshold(f1, f2, threshold, cap),
        MinProductSearch::Naive => {
            for n in 1..=cap {
                if min_product(f1, f2, n)? >= *threshold {
                    return Ok(BigUint::from(n));
                }
            }
            Err(Error::scan_cap(cap, "scanning min_product for its threshold index"))
        }
    }
}

// g(n) ≥ t iff n ≥ k − 1 + m_k for every k ≤ n, where m_k is the least j with
// f₁(k) f₂(j) ≥ t. m_k is nonincreasing, and m_k = 1 from k₀ on, so the answer
// is max(k₀, max_{k<k₀} (k − 1 + m_k)).
fn incremental_threshold(f1: &Weight, f2: &Weight, t: &BigRational, cap: u64) -> Result<BigUint> {
    let context = "searching for the min_product threshold index";
    let f1_1 = f1.at(1)?;
    let f2_1 = f2.at(1)?;
    let k0 = least_index_at_least(|k| Ok(f1.eval(k)? * &f2_1), t, Some(cap), context)?
        .to_u64()
        .expect("bounded by cap");
    if k0 == 1 {
        return Ok(BigUint::one());
    }
    let mut j = least_index_at_least(|j| Ok(&f1_1 * f2.eval(j)?), t, Some(cap), context)?
        .to_u64()
        .expect("bounded by cap");
    let mut worst = j;
    for k in 2..k0 {
        let fk = f1.at(k)?;
        while j > 1 && &fk * f2.at(j - 1)? >= *t {
            j -= 1;
        }
        worst = worst.max(k - 1 + j);
    }
    let answer = worst.max(k0);
    if answer > cap {
        return Err(Error::scan_cap(cap, context));
    }
    Ok(BigUint::from(answer))
}

/// Least `n ≥ 1` with `value(n) ≥ target` for a nondecreasing, unbounded
/// `value`, by doubling and bisection.
pub(crate) fn least_index_at_least<F>(
    mut value: F,
    target: &BigRational,
    cap: Option<u64>,
    context: &str,
) -> Result<BigUint>
where
    F: FnMut(&BigUint) -> Result<BigRational>,
{
    let one = BigUint::one();
    if value(&one)? >= *target {
        return Ok(one);
    }
    let cap = cap.map(BigUint::from);
    let mut lo = one.clone();
    let mut hi = BigUint::from(2u32);
    loop {
        if let Some(cap) = &cap {
            if &hi >= cap {
                if value(cap)? >= *target {
                    hi = cap.clone();
                    break;
                }
                return Err(Error::scan_cap(cap.to_u64().unwrap_or(u64::MAX), context));
            }
        }
        if value(&hi)? >= *target {
            break;
        }
        lo = hi.clone();
        hi <<= 1;
    }
    while &hi - &lo > one {
        let mid: BigUint = (&lo + &hi) >> 1;
        if value(&mid)? >= *target {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

/// Three-valued outcome of an equivalence test between two weights.
#[derive(Debug, Clone, PartialEq)]
pub enum EquivVerdict {
    /// `(1/c) w₁(n) ≤ w₂(n) ≤ c w₁(n)` for all `n ≤ window`; `c` is the
    /// least such constant.
    BoundedRatio { c: BigRational, window: u64 },
    /// `max(w₂/w₁, w₁/w₂)` at `index` equals `ratio` and exceeds the threshold.
    DivergenceWitness { index: u64, ratio: BigRational },
    /// Decided from the growth signatures of two symbolic weights.
    ExactDecision { equivalent: bool },
}

/// Decides `w₁ ∼ w₂` exactly for symbolic weights; otherwise scans
/// `n ∈ [1, window]` for a ratio above `c_threshold`.
pub fn equiv_check(w1: &Weight, w2: &Weight, window: u64, c_threshold: &BigRational) -> Result<EquivVerdict> {
    if window == 0 {
        return Err(Error::Precondition("window must be ≥ 1".into()));
    }
    if *c_threshold < BigRational::one() {
        return Err(Error::Precondition("ratio threshold must be ≥ 1".into()));
    }
    if let (Some(a), Some(b)) = (w1.signature(), w2.signature()) {
        return Ok(EquivVerdict::ExactDecision { equivalent: a == b });
    }
    let mut worst = BigRational::one();
    for n in 1..=window {
        let ratio = symmetric_ratio(&w1.at(n)?, &w2.at(n)?);
        if ratio > *c_threshold {
            return Ok(EquivVerdict::DivergenceWitness { index: n, ratio });
        }
        if ratio > worst {
            worst = ratio;
        }
    }
    Ok(EquivVerdict::BoundedRatio { c: worst, window })
}

/// Operator norm of the inclusion `ℓ²_f → ℓ²` minus its rank-`n` truncation,
/// `1/√f(n+1)`.
pub fn inclusion_tail_norm(f: &Weight, n: u64) -> Result<f64> {
    let v = crate::rational::to_f64(&f.at(n + 1)?);
    Ok(1.0 / v.sqrt())
}

/// Positive sequence diverging to infinity, with a constructive tail bound.
#[derive(Clone)]
pub struct DivergingSeq {
    kind: Arc<SeqKind>,
}

enum SeqKind {
    Weight(Weight),
    Table(Table),
    Product(DivergingSeq, DivergingSeq),
    Pushforward(Permutation, DivergingSeq),
    /// `f₁ · σ_* f₂` with both factors monotone.
    WpIntegrand { f1: Weight, f2: Weight, sigma: Permutation },
    Rearranged(Rearranged),
}

impl fmt::Debug for DivergingSeq {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &*self.kind {
            SeqKind::Weight(w) => write!(f, "{w:?}"),
            SeqKind::Table(t) => write!(f, "table(len={})", t.len()),
            SeqKind::Product(a, b) => write!(f, "({a:?} · {b:?})"),
            SeqKind::Pushforward(s, u) => write!(f, "{s:?}_*{u:?}"),
            SeqKind::WpIntegrand { f1, f2, sigma } => write!(f, "({f1:?} · {sigma:?}_*{f2:?})"),
            SeqKind::Rearranged(r) => write!(f, "P({:?})", r.source),
        }
    }
}

impl From<Weight> for DivergingSeq {
    fn from(w: Weight) -> Self {
        DivergingSeq { kind: Arc::new(SeqKind::Weight(w)) }
    }
}

impl From<&Weight> for DivergingSeq {
    fn from(w: &Weight) -> Self {
        w.clone().into()
    }
}

impl DivergingSeq {
    fn new(kind: SeqKind) -> Self {
        DivergingSeq { kind: Arc::new(kind) }
    }

    /// Table-backed sequence with an arbitrary positive prefix. Only
    /// divergent (linear) tails are accepted.
    pub fn table(prefix: Vec<BigRational>, tail: TailRule) -> Result<Self> {
        if tail != TailRule::Linear {
            return Err(Error::InvalidWeight(
                "a diverging sequence needs a divergent tail rule".into(),
            ));
        }
        Ok(Self::new(SeqKind::Table(Table::new(prefix, tail)?)))
    }

    pub fn table_u64(prefix: &[u64]) -> Result<Self> {
        Self::table(prefix.iter().map(|&v| crate::rational::from_u64(v)).collect(), TailRule::Linear)
    }

    pub fn product(a: &DivergingSeq, b: &DivergingSeq) -> Self {
        Self::new(SeqKind::Product(a.clone(), b.clone()))
    }

    /// `f₁ · σ_* f₂`, the sequence whose rearrangement is `℘_σ(f₁, f₂)`.
    pub fn wp_integrand(f1: &Weight, f2: &Weight, sigma: &Permutation) -> Self {
        Self::new(SeqKind::WpIntegrand { f1: f1.clone(), f2: f2.clone(), sigma: sigma.clone() })
    }

    /// Lazily evaluated monotone rearrangement `P(u)`; each value is
    /// certified by [`rearrange_prefix`] with the given scan cap.
    pub fn rearranged(u: &DivergingSeq, cap: u64) -> Self {
        Self::new(SeqKind::Rearranged(Rearranged {
            source: u.clone(),
            cap,
            cache: RwLock::new(Vec::new()),
            ceiling: RwLock::new(usize::MAX),
        }))
    }

    pub fn as_weight(&self) -> Option<&Weight> {
        match &*self.kind {
            SeqKind::Weight(w) => Some(w),
            _ => None,
        }
    }

    pub fn eval(&self, n: &BigUint) -> Result<BigRational> {
        if n.is_zero() {
            return Err(Error::IndexOutOfRange("sequences are indexed from 1".into()));
        }
        match &*self.kind {
            SeqKind::Weight(w) => w.eval(n),
            SeqKind::Table(t) => t.eval(n),
            SeqKind::Product(a, b) => Ok(a.eval(n)? * b.eval(n)?),
            SeqKind::Pushforward(s, u) => u.eval(&s.apply(n)?),
            SeqKind::WpIntegrand { f1, f2, sigma } => Ok(f1.eval(n)? * f2.eval(&sigma.apply(n)?)?),
            SeqKind::Rearranged(r) => {
                let n = n
                    .to_usize()
                    .ok_or_else(|| Error::CapacityExceeded(format!("rearrangement evaluated at {n}")))?;
                r.value(n)
            }
        }
    }

    pub fn at(&self, n: u64) -> Result<BigRational> {
        self.eval(&BigUint::from(n))
    }

    /// A value `≤ u(k')` for every `k' > k`; nondecreasing in `k` and
    /// diverging.
    pub fn tail_lower_bound(&self, k: &BigUint) -> Result<BigRational> {
        match &*self.kind {
            SeqKind::Weight(w) => w.eval(&(k + 1u32)),
            SeqKind::Table(t) => t.tail_lower_bound(k),
            SeqKind::Product(a, b) => Ok(a.tail_lower_bound(k)? * b.tail_lower_bound(k)?),
            SeqKind::Pushforward(s, u) => {
                // every index beyond k is sent to at least the floor
                let floor = s.tail_floor(k)?;
                u.tail_lower_bound(&(floor - 1u32))
            }
            SeqKind::WpIntegrand { f1, f2, sigma } => wp_tail_lower_bound(f1, f2, sigma, k),
            SeqKind::Rearranged(_) => self.eval(&(k + 1u32)),
        }
    }

    /// Least `K ≤ cap` whose tail bound reaches `r`: every value beyond `K`
    /// is at least `r`.
    pub fn divergence_index(&self, r: &BigRational, cap: u64) -> Result<u64> {
        // search over K + 1 ≥ 1, the bound is monotone in K
        let k1 = least_index_at_least(
            |k1| self.tail_lower_bound(&(k1 - 1u32)),
            r,
            Some(cap.saturating_add(1)),
            "searching for a divergence index",
        )?;
        Ok(k1.to_u64().expect("bounded by cap") - 1)
    }
}

fn wp_tail_lower_bound(f1: &Weight, f2: &Weight, sigma: &Permutation, k: &BigUint) -> Result<BigRational> {
    let next = k + 1u32;
    let Some((lo, hi)) = sigma.block_containing(&next)? else {
        let floor = sigma.tail_floor(k)?;
        return Ok(f1.eval(&next)? * f2.eval(&floor)?);
    };
    // remaining part [k+1, hi−1] of the current block
    let last = &hi - 1u32;
    let segment = if f1.is_log_concave() && f2.is_log_concave() {
        // log-concave in k: the minimum over a segment sits at an endpoint
        let value = |j: &BigUint| -> Result<BigRational> { Ok(f1.eval(j)? * f2.eval(&(&lo + &last - j))?) };
        value(&next)?.min(value(&last)?)
    } else {
        f1.eval(&next)? * f2.eval(&lo)?
    };
    // all later blocks: both k' and σ(k') are at least hi
    let later = f1.eval(&hi)? * f2.eval(&hi)?;
    Ok(segment.min(later))
}

struct Rearranged {
    source: DivergingSeq,
    cap: u64,
    cache: RwLock<Vec<BigRational>>,
    /// Smallest prefix length whose certification has failed.
    ceiling: RwLock<usize>,
}

impl Rearranged {
    fn value(&self, n: usize) -> Result<BigRational> {
        if let Some(v) = self.cache.read().unwrap().get(n - 1) {
            return Ok(v.clone());
        }
        let have = self.cache.read().unwrap().len();
        let ceiling = *self.ceiling.read().unwrap();
        // grow geometrically so that sequential access stays linear
        let want = n.max((2 * have).max(16).min(ceiling.saturating_sub(1)));
        let computed = match rearrange_prefix(&self.source, want, self.cap) {
            Ok(v) => v,
            Err(_) if want > n => {
                let mut c = self.ceiling.write().unwrap();
                *c = (*c).min(want);
                drop(c);
                rearrange_prefix(&self.source, n, self.cap)?
            }
            Err(e) => return Err(e),
        };
        let mut cache = self.cache.write().unwrap();
        if computed.len() > cache.len() {
            *cache = computed;
        }
        Ok(cache[n - 1].clone())
    }
}

/// `σ_* u`, i.e. `n ↦ u(σ(n))`. Composes contravariantly:
/// `pushforward(τ, pushforward(σ, u)) = pushforward(σ ∘ τ, u)`.
pub fn pushforward(sigma: &Permutation, u: &DivergingSeq) -> DivergingSeq {
    if sigma.is_identity() {
        return u.clone();
    }
    DivergingSeq::new(SeqKind::Pushforward(sigma.clone(), u.clone()))
}

/// The `m` smallest values of `u` in nondecreasing order, i.e. the first
/// `m` values of the monotone rearrangement `P(u)`.
///
/// Indices are scanned in order while the `m` smallest values seen so far
/// are kept; the scan stops at the first `K` where all of them are bounded by
/// `u.tail_lower_bound(K)`. Fails with `ScanCapExceeded` if `K` would exceed
/// `cap`.
pub fn rearrange_prefix(u: &DivergingSeq, m: usize, cap: u64) -> Result<Vec<BigRational>> {
    if m == 0 {
        return Err(Error::Precondition("rearrange_prefix needs m ≥ 1".into()));
    }
    let mut heap: BinaryHeap<BigRational> = BinaryHeap::with_capacity(m + 1);
    let mut k: u64 = 0;
    loop {
        if heap.len() == m {
            let bound = u.tail_lower_bound(&BigUint::from(k))?;
            if *heap.peek().expect("non-empty") <= bound {
                break;
            }
        }
        if k >= cap {
            return Err(Error::scan_cap(cap, format!("certifying a rearranged prefix of length {m}")));
        }
        k += 1;
        let v = u.eval(&BigUint::from(k))?;
        if heap.len() < m {
            heap.push(v);
        } else if let Some(mut top) = heap.peek_mut() {
            if v < *top {
                *top = v;
            }
        }
    }
    Ok(heap.into_sorted_vec())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rational::from_u64;

    fn q(n: u64) -> BigRational {
        from_u64(n)
    }

    fn ratio(n: i64, d: i64) -> BigRational {
        BigRational::new(n.into(), d.into())
    }

    #[test]
    fn eval_families() {
        assert_eq!(Weight::power_int(1).at(7).unwrap(), q(7));
        assert_eq!(Weight::power_int(2).at(5).unwrap(), q(25));
        assert_eq!(Weight::exponential_int(2).unwrap().at(3).unwrap(), q(8));
        let half = Weight::power(ratio(1, 2)).unwrap();
        assert_eq!(half.at(10).unwrap(), q(3));
        let pl = Weight::power_log(q(1), q(2)).unwrap();
        // 8 · (1 + 3)²
        assert_eq!(pl.at(8).unwrap(), q(128));
        assert_eq!(Weight::power_log(q(1), q(0)).unwrap().family(), Family::Power);
        let t = DivergingSeq::table_u64(&[3, 1, 2]).unwrap();
        assert_eq!(t.at(1).unwrap(), q(3));
        assert_eq!(t.at(5).unwrap(), q(4));
    }

    #[test]
    fn rejects_degenerate_weights() {
        assert!(Weight::power(q(0)).is_err());
        assert!(Weight::exponential(q(1)).is_err());
        assert!(Weight::power_log(q(0), q(0)).is_err());
        assert!(matches!(
            Weight::table_u64(&[1, 1, 1], TailRule::Linear),
            Err(Error::InvalidWeight(_))
        ));
        assert!(Weight::table_u64(&[2, 1], TailRule::Error).is_err());
        assert!(DivergingSeq::table_u64(&[1, 0]).is_err());
    }

    #[test]
    fn error_tail_is_capacity_limited() {
        let w = Weight::table_u64(&[1, 2, 3], TailRule::Error).unwrap();
        assert!(!w.is_unbounded());
        assert_eq!(w.at(3).unwrap(), q(3));
        assert!(matches!(w.at(4), Err(Error::CapacityExceeded(_))));
    }

    #[test]
    fn product_and_shift() {
        let p = product(&Weight::power_int(1), &Weight::power_int(1));
        assert_eq!(p.at(9).unwrap(), q(81));
        let p = product(&Weight::power_int(2), &Weight::exponential_int(2).unwrap());
        assert_eq!(p.at(3).unwrap(), q(72));
        assert_eq!(shift(&Weight::power_int(2), &BigUint::from(1u32)).at(3).unwrap(), q(16));
        assert_eq!(shift(&Weight::power_int(1), &BigUint::from(4u32)).at(1).unwrap(), q(5));
        let w = Weight::power_int(3);
        let s0 = shift(&w, &BigUint::zero());
        for n in 1..20 {
            assert_eq!(s0.at(n).unwrap(), w.at(n).unwrap());
        }
    }

    #[test]
    fn min_product_examples() {
        let id = Weight::power_int(1);
        assert_eq!(min_product(&id, &id, 6).unwrap(), q(6));
        let f = Weight::power_int(3);
        assert_eq!(min_product(&f, &f, 1).unwrap(), q(1));
        let e = Weight::exponential_int(2).unwrap();
        assert_eq!(min_product(&Weight::power_int(2), &e, 4).unwrap(), q(16));
    }

    #[test]
    fn threshold_search_strategies_agree() {
        let weights = [
            Weight::power_int(1),
            Weight::power_int(2),
            Weight::exponential_int(3).unwrap(),
            Weight::power_log(q(1), q(1)).unwrap(),
            Weight::table_u64(&[1, 1, 4, 4, 9, 30, 31], TailRule::Linear).unwrap(),
        ];
        for f1 in &weights {
            for f2 in &weights {
                for t in [1u64, 7, 50, 333] {
                    let t = q(t);
                    let naive = min_product_threshold_index(f1, f2, &t, 5000, MinProductSearch::Naive).unwrap();
                    let inc =
                        min_product_threshold_index(f1, f2, &t, 5000, MinProductSearch::Incremental).unwrap();
                    let auto = min_product_threshold_index(f1, f2, &t, 5000, MinProductSearch::Auto).unwrap();
                    assert_eq!(naive, inc, "{f1:?} {f2:?} {t}");
                    assert_eq!(naive, auto, "{f1:?} {f2:?} {t}");
                }
            }
        }
    }

    #[test]
    fn threshold_search_respects_cap() {
        let id = Weight::power_int(1);
        let t = q(1_000_000);
        let err = min_product_threshold_index(&id, &id, &t, 100, MinProductSearch::Incremental);
        assert!(matches!(err, Err(Error::ScanCapExceeded { cap: 100, .. })));
    }

    #[test]
    fn equivalence_verdicts() {
        let c10 = q(10);
        let v = equiv_check(&Weight::power_int(1), &Weight::power_int(2), 50, &c10).unwrap();
        assert_eq!(v, EquivVerdict::ExactDecision { equivalent: false });
        let pl = Weight::power_log(q(2), q(0)).unwrap();
        let v = equiv_check(&Weight::power_int(2), &pl, 50, &c10).unwrap();
        assert_eq!(v, EquivVerdict::ExactDecision { equivalent: true });
        let shifted = shift(&Weight::exponential_int(2).unwrap(), &BigUint::from(3u32));
        let v = equiv_check(&Weight::exponential_int(2).unwrap(), &shifted, 50, &c10).unwrap();
        assert_eq!(v, EquivVerdict::ExactDecision { equivalent: true });

        let sq: Vec<u64> = (1..=100).map(|n| n * n).collect();
        let sq3: Vec<u64> = sq.iter().map(|v| 3 * v).collect();
        let a = Weight::table_u64(&sq, TailRule::Linear).unwrap();
        let b = Weight::table_u64(&sq3, TailRule::Linear).unwrap();
        let v = equiv_check(&a, &b, 100, &c10).unwrap();
        assert_eq!(v, EquivVerdict::BoundedRatio { c: q(3), window: 100 });

        let lin: Vec<u64> = (1..=200).collect();
        let quad: Vec<u64> = (1..=200).map(|n| n * n).collect();
        let a = Weight::table_u64(&lin, TailRule::Linear).unwrap();
        let b = Weight::table_u64(&quad, TailRule::Linear).unwrap();
        let v = equiv_check(&a, &b, 10_000, &q(100)).unwrap();
        assert_eq!(v, EquivVerdict::DivergenceWitness { index: 101, ratio: q(101) });
        assert!(equiv_check(&a, &b, 0, &c10).is_err());
        assert!(equiv_check(&a, &b, 10, &ratio(1, 2)).is_err());
    }

    #[test]
    fn tail_norm_values() {
        assert!((inclusion_tail_norm(&Weight::power_int(2), 4).unwrap() - 0.2).abs() < 1e-15);
        assert_eq!(inclusion_tail_norm(&Weight::power_int(1), 0).unwrap(), 1.0);
    }

    #[test]
    fn rearrange_small_cases() {
        let u = DivergingSeq::table_u64(&[3, 1, 2, 4, 5, 6]).unwrap();
        assert_eq!(rearrange_prefix(&u, 3, 100).unwrap(), vec![q(1), q(2), q(3)]);
        let w: DivergingSeq = Weight::power_int(2).into();
        assert_eq!(rearrange_prefix(&w, 4, 100).unwrap(), vec![q(1), q(4), q(9), q(16)]);
        // a large early value forces the scan into the tail
        let u = DivergingSeq::table_u64(&[50, 1, 2]).unwrap();
        let expect: Vec<BigRational> = (1..=5).map(q).collect();
        assert_eq!(rearrange_prefix(&u, 5, 100).unwrap(), expect);
        assert!(matches!(rearrange_prefix(&u, 5, 3), Err(Error::ScanCapExceeded { .. })));
        assert!(rearrange_prefix(&u, 0, 3).is_err());
    }

    #[test]
    fn rearranged_sequence_is_idempotent() {
        let u = DivergingSeq::table_u64(&[9, 3, 7, 1, 8, 2, 2, 6, 10]).unwrap();
        let p = DivergingSeq::rearranged(&u, 1000);
        let once = rearrange_prefix(&u, 12, 1000).unwrap();
        let twice = rearrange_prefix(&p, 12, 1000).unwrap();
        assert_eq!(once, twice);
    }

    #[test]
    fn pushforward_examples() {
        let id: DivergingSeq = Weight::power_int(1).into();
        let s = Permutation::block_reversal_u64(&[1, 2, 5]).unwrap();
        let pushed = pushforward(&s, &id);
        let vals: Vec<BigRational> = (2..=4).map(|k| pushed.at(k).unwrap()).collect();
        assert_eq!(vals, vec![q(4), q(3), q(2)]);
        let same = pushforward(&Permutation::identity(), &id);
        assert_eq!(same.at(17).unwrap(), q(17));
    }

    #[test]
    fn divergence_index_meets_bound() {
        let u = DivergingSeq::table_u64(&[40, 1, 2, 3]).unwrap();
        let k = u.divergence_index(&q(10), 1000).unwrap();
        for j in k + 1..k + 200 {
            assert!(u.at(j).unwrap() >= q(10));
        }
        assert!(u.tail_lower_bound(&BigUint::from(k)).unwrap() >= q(10));
        assert!(k == 0 || u.tail_lower_bound(&BigUint::from(k - 1)).unwrap() < q(10));
    }

    #[test]
    fn spec_round_trip() {
        let ws = [
            Weight::power(ratio(3, 2)).unwrap(),
            Weight::power_log(q(1), q(2)).unwrap(),
            Weight::exponential(ratio(5, 3)).unwrap(),
            Weight::table(vec![ratio(1, 2), q(1), ratio(7, 3)], TailRule::Linear).unwrap(),
            product(&Weight::power_int(1), &product(&Weight::power_int(2), &Weight::exponential_int(2).unwrap())),
            shift(&Weight::power_int(2), &BigUint::from(5u32)),
        ];
        for w in &ws {
            let json = serde_json::to_string(&w.to_spec()).unwrap();
            let back = Weight::from_spec(&serde_json::from_str(&json).unwrap()).unwrap();
            assert_eq!(serde_json::to_string(&back.to_spec()).unwrap(), json);
            for n in 1..30 {
                assert_eq!(back.at(n).unwrap(), w.at(n).unwrap());
            }
        }
        let spec: WeightSpec = serde_json::from_str(r#"{"family":"power","alpha":"1"}"#).unwrap();
        assert_eq!(Weight::from_spec(&spec).unwrap().at(4).unwrap(), q(4));
        let bad: WeightSpec = serde_json::from_str(r#"{"family":"power"}"#).unwrap();
        assert!(matches!(Weight::from_spec(&bad), Err(Error::Parse(_))));
    }
}
