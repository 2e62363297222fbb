//! Finite truncations of scale pairs and tuples.
//!
//! A pair `(H, W)` is represented by the Gram matrices of both inner
//! products on a common basis of `W`. Its canonical weight is `f(n) = 1/λ_n`
//! where `λ₁ ≥ λ₂ ≥ …` solve `G_H v = λ G_W v`. The pencil is reduced with a
//! Cholesky factor of `G_W` and the resulting symmetric matrix is
//! diagonalized by cyclic Jacobi sweeps.
//!
//! Tuples are stored in the coordinates of the innermost space. Diagonal
//! models additionally keep their exact weight prefixes, which gives an exact
//! rational path for the invariant table.

use std::collections::BTreeMap;
use std::io::Write;

use nalgebra::DMatrix;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive};

use crate::error::{Error, Result};
use crate::permutation::Permutation;
use crate::rational::{symmetric_ratio, to_f64};
use crate::weightfn::Weight;

/// Relative residual bound for every returned eigenpair.
pub const RESIDUAL_TOLERANCE: f64 = 1e-10;
const JACOBI_TOLERANCE: f64 = 1e-14;
const MAX_SWEEPS: usize = 100;

/// Gram matrices of `⟨·,·⟩_H` and `⟨·,·⟩_W` on one basis of `W`.
#[derive(Debug, Clone)]
pub struct GramPairTrunc {
    g_h: DMatrix<f64>,
    g_w: DMatrix<f64>,
    /// Exact diagonals `(h, w)` when the pair is diagonal.
    diagonal: Option<(Vec<BigRational>, Vec<BigRational>)>,
}

fn check_square(g: &DMatrix<f64>, what: &str) -> Result<()> {
    if g.nrows() != g.ncols() || g.nrows() == 0 {
        return Err(Error::Precondition(format!(
            "{what} must be a non-empty square matrix, got {}×{}",
            g.nrows(),
            g.ncols()
        )));
    }
    if g.iter().any(|v| !v.is_finite()) {
        return Err(Error::Precondition(format!("{what} has non-finite entries")));
    }
    Ok(())
}

/// `(G + Gᵀ)/2` together with the largest asymmetry `|G − Gᵀ|`.
pub fn symmetrize(g: &DMatrix<f64>) -> (DMatrix<f64>, f64) {
    let asym = (g - g.transpose()).amax();
    ((g + g.transpose()) * 0.5, asym)
}

impl GramPairTrunc {
    /// Symmetrizes both matrices and checks that they are positive definite.
    pub fn new(g_h: DMatrix<f64>, g_w: DMatrix<f64>) -> Result<Self> {
        check_square(&g_h, "G_H")?;
        check_square(&g_w, "G_W")?;
        if g_h.nrows() != g_w.nrows() {
            return Err(Error::Precondition(format!(
                "G_H is {0}×{0} but G_W is {1}×{1}",
                g_h.nrows(),
                g_w.nrows()
            )));
        }
        let (g_h, a) = symmetrize(&g_h);
        let (g_w, b) = symmetrize(&g_w);
        if a.max(b) > 1e-12 {
            log::warn!("gram pair asymmetric by {:e}; symmetrized", a.max(b));
        }
        cholesky(&g_h)?;
        cholesky(&g_w)?;
        Ok(GramPairTrunc { g_h, g_w, diagonal: None })
    }

    /// Diagonal pair `G_H = diag(h)`, `G_W = diag(w)` with exact entries.
    pub fn diagonal(h: Vec<BigRational>, w: Vec<BigRational>) -> Result<Self> {
        if h.len() != w.len() || h.is_empty() {
            return Err(Error::Precondition("diagonals must be non-empty and of equal length".into()));
        }
        if h.iter().chain(&w).any(|v| !v.is_positive()) {
            return Err(Error::NotPositiveDefinite { row: 0, pivot: 0.0 });
        }
        let g_h = DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(h.len(), h.iter().map(to_f64)));
        let g_w = DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(w.len(), w.iter().map(to_f64)));
        Ok(GramPairTrunc { g_h, g_w, diagonal: Some((h, w)) })
    }

    pub fn dim(&self) -> usize {
        self.g_h.nrows()
    }

    pub fn g_h(&self) -> &DMatrix<f64> {
        &self.g_h
    }

    pub fn g_w(&self) -> &DMatrix<f64> {
        &self.g_w
    }

    pub fn is_diagonal_model(&self) -> bool {
        self.diagonal.is_some()
    }

    /// `(Tᵀ G_H T, Tᵀ G_W T)`; drops the diagonal model.
    pub fn congruence(&self, t: &DMatrix<f64>) -> Result<Self> {
        if t.nrows() != self.dim() || t.ncols() != self.dim() {
            return Err(Error::Precondition("congruence matrix has the wrong shape".into()));
        }
        Self::new(t.transpose() * &self.g_h * t, t.transpose() * &self.g_w * t)
    }
}

/// The pair `(ℓ², ℓ²_f)` truncated to `n` coordinates, in the `W`-orthonormal
/// basis `ε_k / √f(k)`: `G_W = I`, `G_H = diag(1/f(k))`.
pub fn pair_gram(f: &Weight, n: usize) -> Result<GramPairTrunc> {
    if n == 0 {
        return Err(Error::Precondition("truncation dimension must be ≥ 1".into()));
    }
    let values = f.prefix(n)?;
    let h = values.iter().map(|v| v.recip()).collect();
    GramPairTrunc::diagonal(h, vec![BigRational::one(); n])
}

/// Lower Cholesky factor, failing on a non-positive pivot.
pub fn cholesky(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    let scale = (0..n).map(|i| a[(i, i)].abs()).fold(0.0, f64::max);
    let mut l = DMatrix::<f64>::zeros(n, n);
    for j in 0..n {
        let mut d = a[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if !(d > scale * f64::EPSILON * n as f64) {
            return Err(Error::NotPositiveDefinite { row: j, pivot: d });
        }
        let d = d.sqrt();
        l[(j, j)] = d;
        for i in j + 1..n {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / d;
        }
    }
    Ok(l)
}

/// `L⁻¹ B` for lower triangular `L`.
fn solve_lower(l: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let n = l.nrows();
    let mut x = b.clone();
    for c in 0..b.ncols() {
        for i in 0..n {
            let mut s = x[(i, c)];
            for k in 0..i {
                s -= l[(i, k)] * x[(k, c)];
            }
            x[(i, c)] = s / l[(i, i)];
        }
    }
    x
}

/// `L⁻ᵀ B` for lower triangular `L`.
fn solve_lower_transpose(l: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let n = l.nrows();
    let mut x = b.clone();
    for c in 0..b.ncols() {
        for i in (0..n).rev() {
            let mut s = x[(i, c)];
            for k in i + 1..n {
                s -= l[(k, i)] * x[(k, c)];
            }
            x[(i, c)] = s / l[(i, i)];
        }
    }
    x
}

fn off_norm(a: &[f64], n: usize) -> f64 {
    let mut s = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                s += a[i * n + j] * a[i * n + j];
            }
        }
    }
    s.sqrt()
}

/// Eigen-decomposition of a symmetric matrix by cyclic Jacobi sweeps.
/// Returns unsorted eigenvalues, the orthogonal eigenvector matrix (columns)
/// and the number of sweeps.
pub fn jacobi_eigen(a: &DMatrix<f64>) -> Result<(Vec<f64>, DMatrix<f64>, usize)> {
    let n = a.nrows();
    // row-major working copies
    let mut m: Vec<f64> = (0..n * n).map(|k| a[(k / n, k % n)]).collect();
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }
    let frob = a.norm();
    let target = JACOBI_TOLERANCE * frob;
    let mut sweeps = 0;
    loop {
        let off = off_norm(&m, n);
        if off <= target || frob == 0.0 {
            break;
        }
        if sweeps == MAX_SWEEPS {
            return Err(Error::ConvergenceFailure { sweeps, off_norm: off });
        }
        sweeps += 1;
        for p in 0..n {
            for q in p + 1..n {
                let apq = m[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let app = m[p * n + p];
                let aqq = m[q * n + q];
                if apq.abs() <= f64::EPSILON * (app * aqq).abs().sqrt() {
                    m[p * n + q] = 0.0;
                    m[q * n + p] = 0.0;
                    continue;
                }
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m[k * n + p];
                    let mkq = m[k * n + q];
                    m[k * n + p] = c * mkp - s * mkq;
                    m[k * n + q] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[p * n + k];
                    let mqk = m[q * n + k];
                    m[p * n + k] = c * mpk - s * mqk;
                    m[q * n + k] = s * mpk + c * mqk;
                }
                m[p * n + q] = 0.0;
                m[q * n + p] = 0.0;
                for k in 0..n {
                    let vkp = v[k * n + p];
                    let vkq = v[k * n + q];
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }
    let values = (0..n).map(|i| m[i * n + i]).collect();
    Ok((values, DMatrix::from_row_slice(n, n, &v), sweeps))
}

/// Solution of `G_H v = λ G_W v`, sorted by decreasing `λ`.
#[derive(Debug, Clone)]
pub struct GeneralizedEigen {
    pub lambda: Vec<f64>,
    /// `G_W`-orthonormal eigenvectors as columns.
    pub vectors: DMatrix<f64>,
    pub sweeps: usize,
    /// Largest `‖G_H v − λ G_W v‖ / ‖G_H‖` over unit-norm `v`.
    pub max_residual: f64,
}

pub fn generalized_eigen(g_h: &DMatrix<f64>, g_w: &DMatrix<f64>) -> Result<GeneralizedEigen> {
    let n = g_h.nrows();
    let l = cholesky(g_w)?;
    // C = L⁻¹ G_H L⁻ᵀ
    let x = solve_lower(&l, g_h);
    let c = solve_lower(&l, &x.transpose());
    let (c, _) = symmetrize(&c);
    let (values, q, sweeps) = jacobi_eigen(&c)?;
    let vectors = solve_lower_transpose(&l, &q);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]));
    let lambda: Vec<f64> = order.iter().map(|&i| values[i]).collect();
    let vectors = vectors.select_columns(&order);
    let h_norm = g_h.norm();
    let mut max_residual: f64 = 0.0;
    for (k, &lam) in lambda.iter().enumerate() {
        let v = vectors.column(k).normalize();
        let r = (g_h * &v - g_w * &v * lam).norm() / h_norm;
        max_residual = max_residual.max(r);
    }
    if max_residual > RESIDUAL_TOLERANCE {
        log::warn!("generalized eigen residual {max_residual:e} above {RESIDUAL_TOLERANCE:e}");
    }
    Ok(GeneralizedEigen { lambda, vectors, sweeps, max_residual })
}

/// Canonical weight prefix of a pair.
#[derive(Debug, Clone)]
pub struct CanonicalWeight {
    /// `1/λ_n`, nondecreasing.
    pub f: Vec<f64>,
    pub eigen: GeneralizedEigen,
    /// Constant spectrum: the pair is an isometric identification up to
    /// scaling, with no compactness at truncation.
    pub degenerate: bool,
}

pub fn canonical_weight(pair: &GramPairTrunc) -> Result<CanonicalWeight> {
    let eigen = generalized_eigen(&pair.g_h, &pair.g_w)?;
    if let Some(&last) = eigen.lambda.last() {
        if last <= 0.0 {
            return Err(Error::NotPositiveDefinite { row: eigen.lambda.len() - 1, pivot: last });
        }
    }
    let f: Vec<f64> = eigen.lambda.iter().map(|l| 1.0 / l).collect();
    let degenerate = eigen.lambda[0] <= eigen.lambda[eigen.lambda.len() - 1] * (1.0 + 1e-9);
    if degenerate {
        log::warn!("pair has a constant spectrum; degenerate as a scale pair");
    }
    Ok(CanonicalWeight { f, eigen, degenerate })
}

/// Exact canonical weight of a diagonal pair: the sorted ratios `w_k / h_k`.
pub fn canonical_weight_exact(pair: &GramPairTrunc) -> Option<Vec<BigRational>> {
    let (h, w) = pair.diagonal.as_ref()?;
    Some(sorted_ratios(w, h))
}

fn sorted_ratios(num: &[BigRational], den: &[BigRational]) -> Vec<BigRational> {
    let mut r: Vec<BigRational> = num.iter().zip(den).map(|(a, b)| a / b).collect();
    r.sort();
    r
}

/// `Φ = Λ^{1/2} Vᵀ G_W`. Satisfies `ΦᵀΦ = G_H` and `Φᵀ diag(f) Φ = G_W`: Φ
/// carries `(H, W)` onto `(ℓ², ℓ²_f)`. With repeated eigenvalues the solver's
/// eigenbasis is used; `f` is unique but `Φ` is not.
pub fn scale_isometry(pair: &GramPairTrunc) -> Result<(DMatrix<f64>, Vec<f64>)> {
    let cw = canonical_weight(pair)?;
    let mut phi = cw.eigen.vectors.transpose() * &pair.g_w;
    for (k, lam) in cw.eigen.lambda.iter().enumerate() {
        let s = lam.sqrt();
        phi.row_mut(k).scale_mut(s);
    }
    Ok((phi, cw.f))
}

/// Spectral norm by power iteration on `AᵀA`, stopping when successive
/// estimates agree to `tol` relative.
pub fn power_iteration_norm(a: &DMatrix<f64>, tol: f64, max_iter: usize) -> Result<f64> {
    let n = a.ncols();
    if n == 0 {
        return Ok(0.0);
    }
    let ata = a.transpose() * a;
    let mut x = nalgebra::DVector::from_element(n, 1.0 / (n as f64).sqrt());
    let mut estimate = 0.0;
    for _ in 0..max_iter {
        let y = &ata * &x;
        let norm = y.norm();
        if norm == 0.0 {
            return Ok(0.0);
        }
        let next = x.dot(&y).max(0.0).sqrt();
        x = y / norm;
        if (next - estimate).abs() <= tol * next {
            return Ok(next);
        }
        estimate = next;
    }
    Err(Error::ConvergenceFailure { sweeps: max_iter, off_norm: estimate })
}

/// Matrix of `I − I_n : ℓ²_f → ℓ²` on the first `dim` coordinates, in the
/// orthonormal basis `ε_k / √f(k)` of `ℓ²_f`.
pub fn inclusion_difference(f: &Weight, n: usize, dim: usize) -> Result<DMatrix<f64>> {
    let mut m = DMatrix::zeros(dim, dim);
    for k in n..dim {
        m[(k, k)] = 1.0 / to_f64(&f.at(k as u64 + 1)?).sqrt();
    }
    Ok(m)
}

/// Nested tuple of `n` inner products on one `N`-dimensional space, in the
/// coordinates of the innermost space.
#[derive(Debug, Clone)]
pub struct ScaleTupleTrunc {
    grams: Vec<DMatrix<f64>>,
    /// Exact diagonal weights `w₀ ≡ 1, w₁, …` when the tuple is diagonal.
    diagonal: Option<Vec<Vec<BigRational>>>,
}

impl ScaleTupleTrunc {
    pub fn from_grams(grams: Vec<DMatrix<f64>>) -> Result<Self> {
        if grams.len() < 2 {
            return Err(Error::Precondition("a tuple needs at least two levels".into()));
        }
        let n = grams[0].nrows();
        let mut out = Vec::with_capacity(grams.len());
        for (k, g) in grams.into_iter().enumerate() {
            check_square(&g, &format!("G_{k}"))?;
            if g.nrows() != n {
                return Err(Error::Precondition("all Gram matrices must share one dimension".into()));
            }
            let (g, asym) = symmetrize(&g);
            if asym > 1e-12 {
                log::warn!("G_{k} asymmetric by {asym:e}; symmetrized");
            }
            cholesky(&g)?;
            out.push(g);
        }
        Ok(ScaleTupleTrunc { grams: out, diagonal: None })
    }

    /// Diagonal tuple `w₀ ≡ 1, w₁, …, w_{n−1}` from the given level weights
    /// (`w₀` is implied).
    pub fn diagonal(levels: Vec<Vec<BigRational>>) -> Result<Self> {
        let Some(first) = levels.first() else {
            return Err(Error::Precondition("a tuple needs at least two levels".into()));
        };
        let dim = first.len();
        if dim == 0 || levels.iter().any(|l| l.len() != dim) {
            return Err(Error::Precondition("level weights must share a non-zero length".into()));
        }
        if levels.iter().flatten().any(|v| !v.is_positive()) {
            return Err(Error::InvalidWeight("level weights must be positive".into()));
        }
        let mut all = vec![vec![BigRational::one(); dim]];
        all.extend(levels);
        let grams = all
            .iter()
            .map(|w| DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(dim, w.iter().map(to_f64))))
            .collect();
        Ok(ScaleTupleTrunc { grams, diagonal: Some(all) })
    }

    /// Diagonal tuple with `w_k` the given weights evaluated on `1..=dim`.
    pub fn from_weights(weights: &[Weight], dim: usize) -> Result<Self> {
        let levels = weights.iter().map(|w| w.prefix(dim)).collect::<Result<Vec<_>>>()?;
        Self::diagonal(levels)
    }

    pub fn len(&self) -> usize {
        self.grams.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grams.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.grams[0].nrows()
    }

    pub fn grams(&self) -> &[DMatrix<f64>] {
        &self.grams
    }

    /// Exact level weights including `w₀ ≡ 1`, for diagonal models.
    pub fn diagonal_model(&self) -> Option<&[Vec<BigRational>]> {
        self.diagonal.as_deref()
    }

    /// The pair `(H_i, H_j)`, `i < j`: `G_H = G_i`, `G_W = G_j`.
    pub fn pair(&self, i: usize, j: usize) -> Result<GramPairTrunc> {
        if i >= j || j >= self.len() {
            return Err(Error::IndexOutOfRange(format!("pair ({i}, {j}) in a tuple of length {}", self.len())));
        }
        match &self.diagonal {
            Some(w) => GramPairTrunc::diagonal(w[i].clone(), w[j].clone()),
            None => GramPairTrunc::new(self.grams[i].clone(), self.grams[j].clone()),
        }
    }
}

/// `w_k = F(1) ⋯ F(k)` for `k < n`, `w₀ ≡ 1`, truncated to `dim`.
pub fn build_product_scale(factors: &[Weight], n: usize, dim: usize) -> Result<ScaleTupleTrunc> {
    if n < 2 {
        return Err(Error::Precondition("a product scale needs n ≥ 2".into()));
    }
    if factors.len() < n - 1 {
        return Err(Error::Precondition(format!("{} factors given, {} needed", factors.len(), n - 1)));
    }
    let mut levels: Vec<Vec<BigRational>> = Vec::with_capacity(n - 1);
    let mut acc = vec![BigRational::one(); dim];
    for f in &factors[..n - 1] {
        let values = f.prefix(dim)?;
        acc = acc.iter().zip(values).map(|(a, v)| a * v).collect();
        levels.push(acc.clone());
    }
    ScaleTupleTrunc::diagonal(levels)
}

/// `(ℓ², ℓ²_{f₁}, ℓ²_{f₁ · σ_* f₂})` truncated to `dim`.
pub fn wild_triple(f1: &Weight, f2: &Weight, sigma: &Permutation, dim: usize) -> Result<ScaleTupleTrunc> {
    let w1 = f1.prefix(dim)?;
    let w2 = (1..=dim as u64)
        .map(|k| Ok(&w1[k as usize - 1] * f2.eval(&sigma.apply_u64(k)?)?))
        .collect::<Result<Vec<_>>>()?;
    ScaleTupleTrunc::diagonal(vec![w1, w2])
}

/// Glues a triple to a tail tuple: levels `0..=2` come from the triple and
/// level `k ≥ 3` is `w₂ · w'_{k−2}` from the tail.
pub fn splice_tuple(triple: &ScaleTupleTrunc, tail: &ScaleTupleTrunc) -> Result<ScaleTupleTrunc> {
    let (Some(a), Some(b)) = (triple.diagonal_model(), tail.diagonal_model()) else {
        return Err(Error::ModelMismatch("splice needs diagonal models on both sides".into()));
    };
    if a.len() != 3 {
        return Err(Error::Precondition(format!("splice needs a triple, got a tuple of length {}", a.len())));
    }
    if a[0].len() != b[0].len() {
        return Err(Error::ModelMismatch("triple and tail have different truncation dimensions".into()));
    }
    let mut levels = vec![a[1].clone(), a[2].clone()];
    for w in &b[1..] {
        levels.push(a[2].iter().zip(w).map(|(x, y)| x * y).collect());
    }
    ScaleTupleTrunc::diagonal(levels)
}

/// Canonical weight prefixes of all pairs `i < j` of a tuple.
#[derive(Debug, Clone)]
pub struct InvariantTable {
    pub len: usize,
    pub dim: usize,
    pub entries: BTreeMap<(usize, usize), Vec<f64>>,
    /// Exact entries, for diagonal models.
    pub exact: Option<BTreeMap<(usize, usize), Vec<BigRational>>>,
    /// Largest relative gap between the exact path and the eigensolver.
    pub cross_check: Option<f64>,
}

/// Relative agreement required between the exact and floating paths.
pub const CROSS_CHECK_TOLERANCE: f64 = 1e-9;

/// Options for [`invariant_table`].
#[derive(Debug, Clone, Copy)]
pub struct InvariantOptions {
    /// Run the eigensolver on diagonal models and compare.
    pub cross_check: bool,
}

impl Default for InvariantOptions {
    fn default() -> Self {
        InvariantOptions { cross_check: true }
    }
}

pub fn invariant_table(tuple: &ScaleTupleTrunc, options: InvariantOptions) -> Result<InvariantTable> {
    let n = tuple.len();
    let mut entries = BTreeMap::new();
    let mut exact_entries = BTreeMap::new();
    let mut worst: Option<f64> = None;
    for j in 1..n {
        for i in 0..j {
            let pair = tuple.pair(i, j)?;
            match canonical_weight_exact(&pair) {
                Some(exact) => {
                    let approx: Vec<f64> = exact.iter().map(to_f64).collect();
                    if options.cross_check {
                        let solved = canonical_weight(&pair)?;
                        let gap = max_relative_gap(&approx, &solved.f);
                        if gap > CROSS_CHECK_TOLERANCE {
                            return Err(Error::ModelMismatch(format!(
                                "entry ({i}, {j}): eigensolver differs from the exact path by {gap:e}"
                            )));
                        }
                        worst = Some(worst.map_or(gap, |w| w.max(gap)));
                    }
                    entries.insert((i, j), approx);
                    exact_entries.insert((i, j), exact);
                }
                None => {
                    entries.insert((i, j), canonical_weight(&pair)?.f);
                }
            }
        }
    }
    let exact = tuple.diagonal.is_some().then_some(exact_entries);
    Ok(InvariantTable { len: n, dim: tuple.dim(), entries, exact, cross_check: worst })
}

/// `max |a − b| / |a|` over paired entries.
pub fn max_relative_gap(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| ((x - y) / x).abs()).fold(0.0, f64::max)
}

impl InvariantTable {
    /// Writes rows `i, j, ν, value`; exact rationals when available.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let io = |e: csv::Error| Error::CapacityExceeded(format!("writing CSV: {e}"));
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["i", "j", "nu", "value"]).map_err(io)?;
        for (&(i, j), values) in &self.entries {
            for (k, v) in values.iter().enumerate() {
                let value = match &self.exact {
                    Some(exact) => exact[&(i, j)][k].to_string(),
                    None => format!("{v:e}"),
                };
                w.write_record([i.to_string(), j.to_string(), (k + 1).to_string(), value]).map_err(io)?;
            }
        }
        w.flush().map_err(|e| Error::CapacityExceeded(format!("writing CSV: {e}")))?;
        Ok(())
    }
}

/// Result of comparing `𝔎(i,j)` with `∏_{k=i}^{j−1} 𝔎(k,k+1)` pointwise.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiplicativityReport {
    pub holds: bool,
    /// Largest `max(a/b, b/a)` between an entry and the product of its
    /// consecutive factors.
    pub worst_ratio: f64,
    /// `(i, j, ν)` of the worst ratio.
    pub worst_at: Option<(usize, usize, usize)>,
    /// Compared in exact arithmetic.
    pub exact: bool,
}

/// Checks the product relations, exactly for tables with exact entries and
/// otherwise up to a relative tolerance.
pub fn check_multiplicativity(table: &InvariantTable, tolerance: f64) -> MultiplicativityReport {
    let mut worst_ratio = 1.0;
    let mut worst_at = None;
    let mut holds = true;
    let n = table.len;
    for j in 2..n {
        for i in 0..j - 1 {
            for nu in 0..table.dim {
                let (ok, ratio) = match &table.exact {
                    Some(exact) => {
                        let mut prod = BigRational::one();
                        for k in i..j {
                            prod *= &exact[&(k, k + 1)][nu];
                        }
                        let entry = &exact[&(i, j)][nu];
                        (*entry == prod, to_f64(&symmetric_ratio(entry, &prod)))
                    }
                    None => {
                        let prod: f64 = (i..j).map(|k| table.entries[&(k, k + 1)][nu]).product();
                        let entry = table.entries[&(i, j)][nu];
                        let ratio = (entry / prod).max(prod / entry);
                        (ratio - 1.0 <= tolerance, ratio)
                    }
                };
                holds &= ok;
                if ratio > worst_ratio {
                    worst_ratio = ratio;
                    worst_at = Some((i, j, nu + 1));
                }
            }
        }
    }
    MultiplicativityReport { holds, worst_ratio, worst_at, exact: table.exact.is_some() }
}

/// Candidate scale isomorphism `Φ : (ℓ², ℓ²_{f₁}) → (ℓ², ℓ²_{f₂})` at
/// truncation, with inverse `Ψ` and a claimed norm bound `c`.
#[derive(Debug, Clone)]
pub struct IsoCandidate {
    pub phi: DMatrix<f64>,
    pub psi: DMatrix<f64>,
    pub c: f64,
}

impl IsoCandidate {
    pub fn new(phi: DMatrix<f64>, psi: DMatrix<f64>, c: f64) -> Result<Self> {
        if phi.nrows() != phi.ncols() || psi.shape() != phi.shape() {
            return Err(Error::Precondition("Φ and Ψ must be square of equal size".into()));
        }
        let gap = (&psi * &phi - DMatrix::identity(phi.nrows(), phi.nrows())).amax();
        if gap > 1e-8 {
            return Err(Error::Precondition(format!("Ψ·Φ differs from the identity by {gap:e}")));
        }
        if !(c > 0.0) {
            return Err(Error::Precondition("norm bound must be positive".into()));
        }
        Ok(IsoCandidate { phi, psi, c })
    }

    /// Uses `Ψ = Φ⁻¹` and `c` = the largest of the four level norms.
    pub fn with_norm_bound(phi: DMatrix<f64>, f1: &[f64], f2: &[f64]) -> Result<Self> {
        let psi = phi
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::Precondition("Φ is not invertible".into()))?;
        let norms = level_norms(&phi, &psi, f1, f2)?;
        let c = norms.into_iter().fold(0.0, f64::max);
        Self::new(phi, psi, c)
    }

    /// `J_σ` between `(ℓ², ℓ²_{σ_*f})` and `(ℓ², ℓ²_f)`, an isometry on both
    /// levels (`c = 1`). `dim` must end on a block boundary.
    pub fn jsigma(sigma: &Permutation, dim: usize) -> Result<Self> {
        let phi = crate::permutation::jsigma_matrix(sigma, dim)?;
        let psi = phi.transpose();
        Self::new(phi, psi, 1.0)
    }

    pub fn dim(&self) -> usize {
        self.phi.nrows()
    }
}

/// `‖Φ‖_{ℓ²}`, `‖Φ‖_{ℓ²_{f₁} → ℓ²_{f₂}}`, `‖Ψ‖_{ℓ²}`, `‖Ψ‖_{ℓ²_{f₂} → ℓ²_{f₁}}`.
pub fn level_norms(phi: &DMatrix<f64>, psi: &DMatrix<f64>, f1: &[f64], f2: &[f64]) -> Result<[f64; 4]> {
    let n = phi.nrows();
    if f1.len() < n || f2.len() < n {
        return Err(Error::Precondition("weight prefixes shorter than the candidate".into()));
    }
    let scaled = |m: &DMatrix<f64>, out: &[f64], inp: &[f64]| {
        DMatrix::from_fn(n, n, |r, c| m[(r, c)] * (out[r] / inp[c]).sqrt())
    };
    let norm = |m: &DMatrix<f64>| m.clone().svd(false, false).singular_values.max();
    Ok([norm(phi), norm(&scaled(phi, f2, f1)), norm(psi), norm(&scaled(psi, f1, f2))])
}

/// `A^n_m = Π_n Ψ Π_{m−1} Φ` on the first `n` coordinates.
pub fn anm_operator(cand: &IsoCandidate, n: usize, m: usize) -> Result<DMatrix<f64>> {
    let dim = cand.dim();
    if n == 0 || m == 0 {
        return Err(Error::IndexOutOfRange("A^n_m needs n, m ≥ 1".into()));
    }
    if n > dim || m - 1 > dim {
        return Err(Error::IndexOutOfRange(format!("A^{n}_{m} on a candidate of dimension {dim}")));
    }
    let k = m - 1;
    Ok(cand.psi.view((0, 0), (n, k)) * cand.phi.view((0, 0), (k, n)))
}

#[derive(Debug, Clone, PartialEq)]
pub enum ClaimViolation {
    /// Hypothesis holds but `A^n_m` is singular.
    NotInvertible { n: usize, m: usize, sigma_min: f64 },
    /// Hypothesis holds but `n ≥ m`.
    NotLess { n: usize, m: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClaimReport {
    /// Grid points where `f₁(n) < f₂(m)/c⁴`.
    pub checked: usize,
    pub violations: Vec<ClaimViolation>,
}

/// Evaluates the claim `f₁(n) < f₂(m)/c⁴ ⇒ A^n_m invertible and n < m` on
/// `1 ≤ n, m ≤ grid`. On `Π_n ℓ²` the `f₁` norm is bounded by the running
/// maximum of `f₁`, which is what the hypothesis is tested against.
pub fn claim_check(f1: &[f64], f2: &[f64], cand: &IsoCandidate, grid: usize, tol: f64) -> Result<ClaimReport> {
    if f1.len() < grid || f2.len() < grid {
        return Err(Error::Precondition("weight prefixes shorter than the grid".into()));
    }
    if grid > cand.dim() + 1 {
        return Err(Error::IndexOutOfRange(format!("grid {grid} on a candidate of dimension {}", cand.dim())));
    }
    let mut running = Vec::with_capacity(grid);
    let mut top = f64::NEG_INFINITY;
    for &v in &f1[..grid] {
        top = top.max(v);
        running.push(top);
    }
    let c4 = cand.c.powi(4);
    let mut report = ClaimReport { checked: 0, violations: Vec::new() };
    for n in 1..=grid.min(cand.dim()) {
        for m in 1..=grid {
            if !(running[n - 1] * c4 < f2[m - 1]) {
                continue;
            }
            report.checked += 1;
            let a = anm_operator(cand, n, m)?;
            let sigma_min = a.svd(false, false).singular_values.min();
            if !(sigma_min > tol) {
                report.violations.push(ClaimViolation::NotInvertible { n, m, sigma_min });
            }
            if n >= m {
                report.violations.push(ClaimViolation::NotLess { n, m });
            }
        }
    }
    Ok(report)
}

/// `f64` values of a prefix.
pub fn prefix_f64(values: &[BigRational]) -> Vec<f64> {
    values.iter().map(to_f64).collect()
}

/// Condition number `σ_max / σ_min`.
pub fn condition_number(m: &DMatrix<f64>) -> f64 {
    let s = m.clone().svd(false, false).singular_values;
    s.max() / s.min()
}

pub fn is_nondecreasing(values: &[BigRational]) -> bool {
    values.windows(2).all(|w| w[0] <= w[1])
}

/// The prefix as integers, if every entry is a `u64`-sized integer.
pub fn exact_integers(values: &[BigRational]) -> Option<Vec<u64>> {
    values.iter().map(|v| if v.is_integer() { v.to_integer().to_u64() } else { None }).collect()
}
