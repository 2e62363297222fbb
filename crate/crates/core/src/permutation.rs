//! Bijections of the positive integers.
//!
//! Three structural kinds are supported: the identity, permutations with
//! finite support, and block reversals. A block reversal is described by a
//! strictly increasing boundary stream `ℓ₁ = 1 < ℓ₂ < …` and reverses every
//! block `[ℓ_ν, ℓ_{ν+1} − 1]`:
//!
//! ```text
//! σ(k) = ℓ_ν + ℓ_{ν+1} − k − 1,   ℓ_ν ≤ k ≤ ℓ_{ν+1} − 1
//! ```
//!
//! Boundaries can be generated on demand by a [`BoundaryExtender`], which is
//! how the wild construction hands out permutations whose later blocks are
//! only computed when something evaluates them. Composites of these kinds are
//! kept as a formal product so that group laws can be checked pointwise.
//!
//! Composition convention: `compose(σ, τ)(n) = σ(τ(n))`.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::{Arc, Mutex, RwLock};

use nalgebra::DMatrix;
use num_bigint::BigUint;
use num_traits::{One, ToPrimitive, Zero};

use crate::error::{Error, Result};
use crate::rational::parse_biguint;

/// Produces the next boundary of a block stream given all boundaries so far.
pub trait BoundaryExtender: Send {
    fn extend(&mut self, current: &[BigUint]) -> Result<BigUint>;
}

impl<F> BoundaryExtender for F
where
    F: FnMut(&[BigUint]) -> Result<BigUint> + Send,
{
    fn extend(&mut self, current: &[BigUint]) -> Result<BigUint> {
        self(current)
    }
}

/// Append-only boundary list shared by all clones of a block reversal.
pub struct BlockStream {
    boundaries: RwLock<Vec<BigUint>>,
    extender: Option<Mutex<Box<dyn BoundaryExtender>>>,
    max_boundaries: usize,
}

impl BlockStream {
    fn snapshot(&self) -> Vec<BigUint> {
        self.boundaries.read().unwrap().clone()
    }

    fn len(&self) -> usize {
        self.boundaries.read().unwrap().len()
    }

    /// Returns `(ℓ_ν, ℓ_{ν+1}, ν)` for the block containing `k ≥ 1`.
    fn block_of(&self, k: &BigUint) -> Result<(BigUint, BigUint, usize)> {
        loop {
            {
                let b = self.boundaries.read().unwrap();
                let count = b.partition_point(|x| x <= k);
                if count < b.len() {
                    return Ok((b[count - 1].clone(), b[count].clone(), count));
                }
            }
            self.extend_once()?;
        }
    }

    fn extend_once(&self) -> Result<()> {
        let Some(extender) = &self.extender else {
            let last = self.boundaries.read().unwrap().last().cloned().unwrap_or_default();
            return Err(Error::CapacityExceeded(format!(
                "block reversal has no boundary beyond {last} and no extender"
            )));
        };
        let mut extender = extender.lock().unwrap();
        // another thread may have extended while we waited for the lock
        let current = self.snapshot();
        if current.len() >= self.max_boundaries {
            return Err(Error::CapacityExceeded(format!(
                "block stream reached its cap of {} boundaries",
                self.max_boundaries
            )));
        }
        let next = extender.extend(&current)?;
        let last = current.last().expect("stream is never empty");
        if &next <= last {
            return Err(Error::InvalidBoundaries(format!(
                "extender produced {next} after {last}"
            )));
        }
        let mut b = self.boundaries.write().unwrap();
        if b.len() == current.len() {
            b.push(next);
        }
        Ok(())
    }
}

enum PermKind {
    Identity,
    /// Non-fixed points only.
    FiniteSupport(BTreeMap<u64, u64>),
    BlockReversal(BlockStream),
    /// `n ↦ outer(inner(n))`
    Composite { outer: Permutation, inner: Permutation },
}

/// Coarse classification of a [`Permutation`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PermutationKind {
    Identity,
    FiniteSupport,
    BlockReversal,
    Composite,
}

/// A bijection of the positive integers. Clones share lazily generated state.
#[derive(Clone)]
pub struct Permutation {
    kind: Arc<PermKind>,
}

impl fmt::Debug for Permutation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &*self.kind {
            PermKind::Identity => write!(f, "Identity"),
            PermKind::FiniteSupport(m) => f.debug_tuple("FiniteSupport").field(m).finish(),
            PermKind::BlockReversal(s) => {
                let b: Vec<String> = s.snapshot().iter().map(|x| x.to_string()).collect();
                write!(f, "BlockReversal([{}{}])", b.join(", "), if s.extender.is_some() { ", …" } else { "" })
            }
            PermKind::Composite { outer, inner } => write!(f, "({outer:?} ∘ {inner:?})"),
        }
    }
}

fn check_index(k: &BigUint) -> Result<()> {
    if k.is_zero() {
        Err(Error::IndexOutOfRange("permutations act on positive integers; got 0".into()))
    } else {
        Ok(())
    }
}

fn validate_boundaries(boundaries: &[BigUint]) -> Result<()> {
    match boundaries.first() {
        None => return Err(Error::InvalidBoundaries("empty boundary list".into())),
        Some(first) if !first.is_one() => {
            return Err(Error::InvalidBoundaries(format!("first boundary must be 1, got {first}")))
        }
        _ => {}
    }
    for w in boundaries.windows(2) {
        if w[1] <= w[0] {
            return Err(Error::InvalidBoundaries(format!(
                "boundaries must strictly increase ({} then {})",
                w[0], w[1]
            )));
        }
    }
    Ok(())
}

impl Permutation {
    pub fn identity() -> Self {
        Permutation { kind: Arc::new(PermKind::Identity) }
    }

    /// Permutation moving only the listed points. Pairs map `k ↦ σ(k)`;
    /// fixed points may be omitted.
    pub fn finite_support(pairs: impl IntoIterator<Item = (u64, u64)>) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (k, v) in pairs {
            if k == 0 || v == 0 {
                return Err(Error::IndexOutOfRange("finite support entries must be ≥ 1".into()));
            }
            if map.insert(k, v).is_some() {
                return Err(Error::Precondition(format!("index {k} listed twice")));
            }
        }
        map.retain(|k, v| k != v);
        let mut images: Vec<u64> = map.values().copied().collect();
        images.sort_unstable();
        let keys: Vec<u64> = map.keys().copied().collect();
        if images != keys {
            return Err(Error::Precondition(
                "finite support map is not a bijection of its support".into(),
            ));
        }
        if map.is_empty() {
            return Ok(Self::identity());
        }
        Ok(Permutation { kind: Arc::new(PermKind::FiniteSupport(map)) })
    }

    pub fn transposition(a: u64, b: u64) -> Result<Self> {
        Self::finite_support([(a, b), (b, a)])
    }

    /// Block reversal over a fixed, finite boundary list. Evaluating at or
    /// beyond the last boundary fails with `CapacityExceeded`.
    pub fn block_reversal(boundaries: Vec<BigUint>) -> Result<Self> {
        validate_boundaries(&boundaries)?;
        let max_boundaries = boundaries.len();
        Ok(Self::from_stream(BlockStream {
            boundaries: RwLock::new(boundaries),
            extender: None,
            max_boundaries,
        }))
    }

    pub fn block_reversal_u64(boundaries: &[u64]) -> Result<Self> {
        Self::block_reversal(boundaries.iter().map(|&b| BigUint::from(b)).collect())
    }

    /// Block reversal whose boundaries beyond `initial` are produced by
    /// `extender`, up to `max_boundaries` boundaries in total.
    pub fn block_reversal_with(
        initial: Vec<BigUint>,
        extender: Box<dyn BoundaryExtender>,
        max_boundaries: usize,
    ) -> Result<Self> {
        validate_boundaries(&initial)?;
        Ok(Self::from_stream(BlockStream {
            boundaries: RwLock::new(initial),
            extender: Some(Mutex::new(extender)),
            max_boundaries,
        }))
    }

    fn from_stream(stream: BlockStream) -> Self {
        Permutation { kind: Arc::new(PermKind::BlockReversal(stream)) }
    }

    pub fn kind(&self) -> PermutationKind {
        match &*self.kind {
            PermKind::Identity => PermutationKind::Identity,
            PermKind::FiniteSupport(_) => PermutationKind::FiniteSupport,
            PermKind::BlockReversal(_) => PermutationKind::BlockReversal,
            PermKind::Composite { .. } => PermutationKind::Composite,
        }
    }

    pub fn is_identity(&self) -> bool {
        matches!(&*self.kind, PermKind::Identity)
    }

    /// True when both handles denote the same permutation object (or both
    /// are the identity). Structurally distinct handles compare unequal.
    pub fn same_as(&self, other: &Permutation) -> bool {
        Arc::ptr_eq(&self.kind, &other.kind) || (self.is_identity() && other.is_identity())
    }

    pub fn apply(&self, k: &BigUint) -> Result<BigUint> {
        check_index(k)?;
        match &*self.kind {
            PermKind::Identity => Ok(k.clone()),
            PermKind::FiniteSupport(map) => Ok(k
                .to_u64()
                .and_then(|k| map.get(&k))
                .map(|&v| BigUint::from(v))
                .unwrap_or_else(|| k.clone())),
            PermKind::BlockReversal(stream) => {
                let (lo, hi, _) = stream.block_of(k)?;
                Ok(lo + hi - k - 1u32)
            }
            PermKind::Composite { outer, inner } => outer.apply(&inner.apply(k)?),
        }
    }

    pub fn apply_u64(&self, k: u64) -> Result<BigUint> {
        self.apply(&BigUint::from(k))
    }

    pub fn invert(&self) -> Permutation {
        match &*self.kind {
            PermKind::Identity | PermKind::BlockReversal(_) => self.clone(),
            PermKind::FiniteSupport(map) => Permutation {
                kind: Arc::new(PermKind::FiniteSupport(map.iter().map(|(&k, &v)| (v, k)).collect())),
            },
            PermKind::Composite { outer, inner } => Permutation {
                kind: Arc::new(PermKind::Composite { outer: inner.invert(), inner: outer.invert() }),
            },
        }
    }

    /// `compose(σ, τ)(n) = σ(τ(n))`.
    pub fn compose(outer: &Permutation, inner: &Permutation) -> Permutation {
        if outer.is_identity() {
            return inner.clone();
        }
        if inner.is_identity() {
            return outer.clone();
        }
        if let (PermKind::FiniteSupport(a), PermKind::FiniteSupport(b)) = (&*outer.kind, &*inner.kind) {
            let support: std::collections::BTreeSet<u64> = a.keys().chain(b.keys()).copied().collect();
            let pairs = support.into_iter().map(|n| {
                let mid = *b.get(&n).unwrap_or(&n);
                (n, *a.get(&mid).unwrap_or(&mid))
            });
            return Permutation::finite_support(pairs).expect("composition of bijections");
        }
        Permutation {
            kind: Arc::new(PermKind::Composite { outer: outer.clone(), inner: inner.clone() }),
        }
    }

    /// For a block reversal, the block `(ℓ_ν, ℓ_{ν+1})` containing `k`,
    /// extending the stream if needed. `None` for other kinds.
    pub fn block_containing(&self, k: &BigUint) -> Result<Option<(BigUint, BigUint)>> {
        check_index(k)?;
        match &*self.kind {
            PermKind::BlockReversal(stream) => stream.block_of(k).map(|(lo, hi, _)| Some((lo, hi))),
            _ => Ok(None),
        }
    }

    /// Boundaries generated so far (block reversals only).
    pub fn boundaries(&self) -> Option<Vec<BigUint>> {
        match &*self.kind {
            PermKind::BlockReversal(stream) => Some(stream.snapshot()),
            _ => None,
        }
    }

    /// Extends a block reversal until at least `count` boundaries exist.
    pub fn ensure_boundaries(&self, count: usize) -> Result<()> {
        if let PermKind::BlockReversal(stream) = &*self.kind {
            while stream.len() < count {
                stream.extend_once()?;
            }
        }
        Ok(())
    }

    /// `min { σ(j) : j > k }`, the smallest image of the tail beyond `k`.
    pub fn tail_floor(&self, k: &BigUint) -> Result<BigUint> {
        match &*self.kind {
            PermKind::Identity => Ok(k + 1u32),
            PermKind::FiniteSupport(map) => {
                let support_end = *map.keys().next_back().expect("non-empty support");
                match k.to_u64() {
                    Some(k) if k < support_end => {
                        let floor = (k + 1..=support_end)
                            .map(|j| *map.get(&j).unwrap_or(&j))
                            .min()
                            .expect("non-empty range");
                        Ok(BigUint::from(floor))
                    }
                    _ => Ok(k + 1u32),
                }
            }
            PermKind::BlockReversal(stream) => {
                let (lo, _, _) = stream.block_of(&(k + 1u32))?;
                Ok(lo)
            }
            PermKind::Composite { outer, inner } => {
                let t = inner.tail_floor(k)?;
                outer.tail_floor(&(t - 1u32))
            }
        }
    }
}

/// Permutation matrix of `ε_n ↦ ε_{σ(n)}` on the first `dim` coordinates:
/// entry `(σ(n), n)` is one (1-based).
pub fn jsigma_matrix(sigma: &Permutation, dim: usize) -> Result<DMatrix<f64>> {
    if dim == 0 {
        return Err(Error::Precondition("dimension must be ≥ 1".into()));
    }
    let mut m = DMatrix::zeros(dim, dim);
    for n in 1..=dim {
        let image = sigma.apply_u64(n as u64)?;
        let image = image
            .to_usize()
            .filter(|&i| i <= dim)
            .ok_or(Error::BlockOverflow { dim })?;
        m[(image - 1, n - 1)] = 1.0;
    }
    Ok(m)
}

/// Block boundaries as decimal strings, the JSON form used for export.
pub fn boundaries_to_strings(boundaries: &[BigUint]) -> Vec<String> {
    boundaries.iter().map(|b| b.to_string()).collect()
}

pub fn boundaries_from_strings(items: &[String]) -> Result<Vec<BigUint>> {
    let b = items.iter().map(|s| parse_biguint(s)).collect::<Result<Vec<_>>>()?;
    validate_boundaries(&b)?;
    Ok(b)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn big(n: u64) -> BigUint {
        BigUint::from(n)
    }

    #[test]
    fn block_formula_on_first_blocks() {
        let s = Permutation::block_reversal_u64(&[1, 2, 5]).unwrap();
        let images: Vec<u64> = (1..=4).map(|k| s.apply_u64(k).unwrap().to_u64().unwrap()).collect();
        assert_eq!(images, vec![1, 4, 3, 2]);
        assert!(matches!(s.apply_u64(5), Err(Error::CapacityExceeded(_))));
    }

    #[test]
    fn rejects_bad_boundaries() {
        assert!(matches!(
            Permutation::block_reversal_u64(&[1, 3, 3]),
            Err(Error::InvalidBoundaries(_))
        ));
        assert!(matches!(
            Permutation::block_reversal_u64(&[2, 3]),
            Err(Error::InvalidBoundaries(_))
        ));
        assert!(Permutation::block_reversal_u64(&[]).is_err());
    }

    #[test]
    fn extender_generates_blocks_on_demand() {
        let ext = |b: &[BigUint]| -> Result<BigUint> {
            let last = b.last().unwrap();
            Ok(last * last + 1u32)
        };
        let s = Permutation::block_reversal_with(vec![big(1)], Box::new(ext), 8).unwrap();
        assert_eq!(s.apply_u64(3).unwrap(), big(3));
        assert_eq!(s.boundaries().unwrap(), vec![big(1), big(2), big(5)]);
        assert_eq!(s.apply_u64(26).unwrap(), big(676));
        assert_eq!(s.boundaries().unwrap().len(), 5);
        // cap of 8 boundaries: ℓ₈ exists, asking beyond it fails
        s.ensure_boundaries(8).unwrap();
        assert!(matches!(s.ensure_boundaries(9), Err(Error::CapacityExceeded(_))));
    }

    #[test]
    fn block_reversal_is_an_involution() {
        let s = Permutation::block_reversal_u64(&[1, 2, 5, 26, 677, 10_001]).unwrap();
        for k in 1..=10_000u64 {
            let once = s.apply_u64(k).unwrap();
            assert_eq!(s.apply(&once).unwrap(), big(k));
        }
    }

    #[test]
    fn finite_support_inverse_and_compose() {
        let t = Permutation::transposition(1, 3).unwrap();
        let inv = t.invert();
        for k in 1..=5 {
            assert_eq!(t.apply_u64(k).unwrap(), inv.apply_u64(k).unwrap());
        }
        let c = Permutation::finite_support([(1, 2), (2, 3), (3, 1)]).unwrap();
        let id = Permutation::compose(&c, &c.invert());
        assert!(id.is_identity());
        assert!(Permutation::finite_support([(1, 2), (2, 2)]).is_err());
    }

    #[test]
    fn composite_group_laws() {
        let s = Permutation::block_reversal_u64(&[1, 2, 5, 26, 1001]).unwrap();
        let c = Permutation::finite_support([(1, 7), (7, 9), (9, 1)]).unwrap();
        let sc = Permutation::compose(&s, &c);
        let back = Permutation::compose(&sc, &sc.invert());
        for k in 1..=1000u64 {
            assert_eq!(back.apply_u64(k).unwrap(), big(k));
            let expect = s.apply(&c.apply_u64(k).unwrap()).unwrap();
            assert_eq!(sc.apply_u64(k).unwrap(), expect);
        }
        assert_eq!(Permutation::identity().apply_u64(42).unwrap(), big(42));
    }

    #[test]
    fn tail_floor_matches_brute_force() {
        let perms = [
            Permutation::block_reversal_u64(&[1, 2, 5, 26, 300]).unwrap(),
            Permutation::finite_support([(2, 9), (9, 4), (4, 2), (5, 6), (6, 5)]).unwrap(),
            Permutation::compose(
                &Permutation::block_reversal_u64(&[1, 3, 8, 300]).unwrap(),
                &Permutation::finite_support([(1, 5), (5, 1)]).unwrap(),
            ),
        ];
        for p in &perms {
            for k in 0..200u64 {
                let brute = (k + 1..250).map(|j| p.apply_u64(j).unwrap()).min().unwrap();
                let floor = p.tail_floor(&big(k)).unwrap();
                assert!(floor <= brute, "k={k} floor={floor} brute={brute}");
            }
        }
        let s = Permutation::block_reversal_u64(&[1, 2, 5, 26]).unwrap();
        assert_eq!(s.tail_floor(&big(2)).unwrap(), big(2));
        assert_eq!(s.tail_floor(&big(4)).unwrap(), big(5));
    }

    #[test]
    fn jsigma_is_orthogonal() {
        let s = Permutation::block_reversal_u64(&[1, 2, 5, 26, 677]).unwrap();
        let j = jsigma_matrix(&s, 4).unwrap();
        assert_eq!(j[(0, 0)], 1.0);
        assert_eq!(j[(3, 1)], 1.0);
        assert_eq!(j[(2, 2)], 1.0);
        assert_eq!(j[(1, 3)], 1.0);
        let j = jsigma_matrix(&s, 25).unwrap();
        assert_eq!(&j * j.transpose(), DMatrix::identity(25, 25));
        assert!(matches!(jsigma_matrix(&s, 3), Err(Error::BlockOverflow { dim: 3 })));
        assert_eq!(jsigma_matrix(&Permutation::identity(), 3).unwrap(), DMatrix::identity(3, 3));
    }

    #[test]
    fn boundary_strings_round_trip() {
        let b = vec![big(1), big(2), BigUint::parse_bytes(b"44127887745906175987802", 10).unwrap()];
        let s = boundaries_to_strings(&b);
        assert_eq!(boundaries_from_strings(&s).unwrap(), b);
    }
}
