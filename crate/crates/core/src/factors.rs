//! Latent structure estimation.
//!
//! Locations are split into two sets `S₁`, `S₂`. Because the nugget is
//! uncorrelated across sites, the cross covariance `Σ̂` of the two sets only
//! carries the latent factor structure, and the leading eigenvectors of
//! `Σ̂Σ̂ᵀ` (resp. `Σ̂ᵀΣ̂`) span the loading space of each set. Spatial
//! continuity of the loadings is imposed by subtracting a multiple `τ` of a
//! graph Laplacian before the eigenanalysis.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::covariance::{cross_covariance, lagged_covariances, CovKind};
use crate::linalg::{max_abs, symmetric_eigen_desc, symmetrize};
use crate::stdata::{LocationSet, Partition, SpatioTemporalFrame};
use crate::{Error, Result};

/// `L = G − W` with inverse-distance weights `w_ij = 1 / (1 + ‖s_i − s_j‖)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphLaplacian {
    pub weights: DMatrix<f64>,
    pub degrees: DVector<f64>,
    pub laplacian: DMatrix<f64>,
    /// Gershgorin bound on `‖L‖₂`: the largest absolute row sum of `L`.
    pub spectral_norm_bound: f64,
}

impl GraphLaplacian {
    /// `aᵀLa`, which equals `½ Σ_ij w_ij (a_i − a_j)²`.
    pub fn quadratic_form(&self, a: &DVector<f64>) -> f64 {
        a.dot(&(&self.laplacian * a))
    }

    pub fn dim(&self) -> usize {
        self.weights.nrows()
    }
}

pub fn build_laplacian(locs: &LocationSet, subset: &[usize]) -> Result<GraphLaplacian> {
    if subset.is_empty() {
        return Err(Error::InvalidArgument("laplacian subset is empty".into()));
    }
    let m = subset.len();
    let mut weights = DMatrix::zeros(m, m);
    for a in 0..m {
        for b in (a + 1)..m {
            let w = 1.0 / (1.0 + locs.distance(subset[a], subset[b]));
            weights[(a, b)] = w;
            weights[(b, a)] = w;
        }
    }
    let degrees = DVector::from_iterator(m, weights.row_iter().map(|r| r.sum()));
    let laplacian = DMatrix::from_diagonal(&degrees) - &weights;
    let spectral_norm_bound = laplacian
        .row_iter()
        .map(|r| r.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max);
    Ok(GraphLaplacian {
        weights,
        degrees,
        laplacian,
        spectral_norm_bound,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PenalizedEigen {
    /// `dim × d`, orthonormal columns.
    pub vectors: DMatrix<f64>,
    /// All eigenvalues of `M − τL`, descending.
    pub eigenvalues: Vec<f64>,
}

/// Top-`d` eigenvectors of `M − τL`. `M` is symmetrized before the solve;
/// `M − τL` may be indefinite. Each returned vector has its first entry of
/// magnitude above 1e-12 positive.
pub fn penalized_eigvecs(m: &DMatrix<f64>, lap: &GraphLaplacian, tau: f64, d: usize) -> Result<PenalizedEigen> {
    if m.nrows() != m.ncols() || m.nrows() != lap.dim() {
        return Err(Error::ShapeMismatch(format!(
            "target {}x{} vs laplacian {}",
            m.nrows(),
            m.ncols(),
            lap.dim()
        )));
    }
    if !(tau >= 0.0 && tau.is_finite()) {
        return Err(Error::InvalidArgument(format!("penalty tau = {tau}")));
    }
    if d == 0 || d > m.nrows() {
        return Err(Error::InvalidArgument(format!(
            "cannot take {d} eigenvectors of a {0}x{0} matrix",
            m.nrows()
        )));
    }
    let asym = max_abs(&(m - m.transpose()));
    if asym > 1e-8 * max_abs(m) {
        return Err(Error::NotSymmetric(asym));
    }
    let target = symmetrize(m) - &lap.laplacian * tau;
    let (eigenvalues, vectors) = symmetric_eigen_desc(&target);
    Ok(PenalizedEigen {
        vectors: vectors.columns(0, d).into_owned(),
        eigenvalues,
    })
}

/// Default cutoff `p* = max(2, ⌊min(p₁, p₂)/2⌋)` for the ratio estimator.
pub fn default_p_star(p1: usize, p2: usize) -> usize {
    (p1.min(p2) / 2).max(2)
}

/// Ratio estimator: the `j ∈ [1, p*)` maximizing `λ_j / λ_{j+1}`, with
/// eigenvalues floored at 1e-300 and ties going to the smallest `j`.
pub fn estimate_d(eigenvalues: &[f64], p_star: usize) -> Result<usize> {
    if p_star < 2 {
        return Err(Error::InvalidArgument(format!("p* = {p_star}, need at least 2")));
    }
    if eigenvalues.len() < p_star {
        return Err(Error::TooFewEigenvalues {
            required: p_star,
            got: eigenvalues.len(),
        });
    }
    let floored: Vec<f64> = eigenvalues[..p_star].iter().map(|&v| v.max(1e-300)).collect();
    let mut best = (1, f64::NEG_INFINITY);
    for j in 0..p_star - 1 {
        let r = floored[j] / floored[j + 1];
        if r > best.1 {
            best = (j + 1, r);
        }
    }
    Ok(best.0)
}

/// Estimation settings shared by every fit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub tau: f64,
    /// Autocovariance depth; `0` uses `Σ̂Σ̂ᵀ` alone.
    pub k0: usize,
    pub p_star: Option<usize>,
    pub d_override: Option<usize>,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            tau: 0.0,
            k0: 0,
            p_star: None,
            d_override: None,
        }
    }
}

impl FitOptions {
    pub fn with_tau(tau: f64) -> Self {
        FitOptions {
            tau,
            ..Default::default()
        }
    }
}

/// The τ-independent part of a fit: target matrices `M₁`, `M₂`, the
/// Laplacians and `d̂`. Cross-validation over τ reuses one problem.
#[derive(Debug, Clone)]
pub struct FactorProblem {
    partition: Partition,
    locations: LocationSet,
    times: Vec<String>,
    y1: DMatrix<f64>,
    y2: DMatrix<f64>,
    m1: DMatrix<f64>,
    m2: DMatrix<f64>,
    lap1: GraphLaplacian,
    lap2: GraphLaplacian,
    eigenvalues: Vec<f64>,
    d_hat: usize,
    k0: usize,
    p_star: usize,
}

impl FactorProblem {
    pub fn new(frame: &SpatioTemporalFrame, partition: &Partition, opts: &FitOptions) -> Result<Self> {
        if partition.p() != frame.p() {
            return Err(Error::ShapeMismatch(format!(
                "partition of {} locations for frame with {}",
                partition.p(),
                frame.p()
            )));
        }
        let sigma = cross_covariance(frame, partition)?.matrix;
        let mut m1 = &sigma * sigma.transpose();
        let mut m2 = sigma.transpose() * &sigma;
        if opts.k0 > 0 {
            for blk in lagged_covariances(frame, partition, opts.k0)? {
                let s = &blk.matrix;
                match blk.kind {
                    CovKind::AutoSet1 => m1 += s * s.transpose(),
                    CovKind::AutoSet2 => m2 += s * s.transpose(),
                    CovKind::CrossLagged => {
                        m1 += s * s.transpose();
                        m2 += s.transpose() * s;
                    }
                    CovKind::CrossSets => unreachable!("lagged blocks are never lag-0 cross blocks"),
                }
            }
        }
        let m1 = symmetrize(&m1);
        let m2 = symmetrize(&m2);
        let (p1, p2) = (partition.set1.len(), partition.set2.len());
        let p_star = opts.p_star.unwrap_or_else(|| default_p_star(p1, p2));
        let (eigenvalues, _) = symmetric_eigen_desc(&m1);
        let d_hat = match opts.d_override {
            Some(d) => {
                if d == 0 || d > p1.min(p2) {
                    return Err(Error::InvalidArgument(format!("d = {d} outside [1, {}]", p1.min(p2))));
                }
                d
            }
            None => estimate_d(&eigenvalues, p_star)?,
        };
        let locations = frame.locations();
        Ok(FactorProblem {
            partition: partition.clone(),
            locations: locations.clone(),
            times: frame.times().to_vec(),
            y1: frame.columns(&partition.set1),
            y2: frame.columns(&partition.set2),
            m1,
            m2,
            lap1: build_laplacian(locations, &partition.set1)?,
            lap2: build_laplacian(locations, &partition.set2)?,
            eigenvalues,
            d_hat,
            k0: opts.k0,
            p_star,
        })
    }

    pub fn d_hat(&self) -> usize {
        self.d_hat
    }

    /// Eigenvalues of the unpenalized `M₁`, descending.
    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn partition(&self) -> &Partition {
        &self.partition
    }

    pub fn target_matrices(&self) -> (&DMatrix<f64>, &DMatrix<f64>) {
        (&self.m1, &self.m2)
    }

    /// Loadings for penalty `tau`: `(Â₁, Â₂, penalized eigenvalues of M₁ − τL₁)`.
    pub fn loadings(&self, tau: f64) -> Result<(DMatrix<f64>, DMatrix<f64>, Vec<f64>)> {
        let e1 = penalized_eigvecs(&self.m1, &self.lap1, tau, self.d_hat)?;
        let e2 = penalized_eigvecs(&self.m2, &self.lap2, tau, self.d_hat)?;
        Ok((e1.vectors, e2.vectors, e1.eigenvalues))
    }

    /// Latent-field estimate `ξ̂` (`n × p`) for penalty `tau`.
    pub fn latent(&self, tau: f64) -> Result<DMatrix<f64>> {
        let (a1, a2, _) = self.loadings(tau)?;
        Ok(self.assemble_latent(&(&self.y1 * &a1), &(&self.y2 * &a2), &a1, &a2))
    }

    fn assemble_latent(
        &self,
        x: &DMatrix<f64>,
        xs: &DMatrix<f64>,
        a1: &DMatrix<f64>,
        a2: &DMatrix<f64>,
    ) -> DMatrix<f64> {
        let n = self.y1.nrows();
        let mut xi = DMatrix::zeros(n, self.partition.p());
        let xi1 = x * a1.transpose();
        let xi2 = xs * a2.transpose();
        for (a, &i) in self.partition.set1.iter().enumerate() {
            xi.set_column(i, &xi1.column(a));
        }
        for (b, &i) in self.partition.set2.iter().enumerate() {
            xi.set_column(i, &xi2.column(b));
        }
        xi
    }

    pub fn fit(&self, tau: f64) -> Result<FactorModelFit> {
        let (a1, a2, penalized) = self.loadings(tau)?;
        let x_hat = &self.y1 * &a1;
        let x_star_hat = &self.y2 * &a2;
        let xi_hat = self.assemble_latent(&x_hat, &x_star_hat, &a1, &a2);
        Ok(FactorModelFit {
            partition: self.partition.clone(),
            locations: self.locations.clone(),
            times: self.times.clone(),
            a1_hat: a1,
            a2_hat: a2,
            x_hat,
            x_star_hat,
            d_hat: self.d_hat,
            eigenvalues: self.eigenvalues.clone(),
            penalized_eigenvalues: penalized,
            xi_hat,
            tau,
            k0: self.k0,
            p_star: self.p_star,
        })
    }
}

/// A fitted latent factor model for one partition.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorModelFit {
    pub partition: Partition,
    pub locations: LocationSet,
    pub times: Vec<String>,
    /// `p₁ × d̂`, orthonormal columns.
    pub a1_hat: DMatrix<f64>,
    /// `p₂ × d̂`, orthonormal columns.
    pub a2_hat: DMatrix<f64>,
    /// `n × d̂`, rows `x̂_tᵀ = (Â₁ᵀ y_{t,1})ᵀ`.
    pub x_hat: DMatrix<f64>,
    /// `n × d̂`, rows `x̂*_tᵀ = (Â₂ᵀ y_{t,2})ᵀ`.
    pub x_star_hat: DMatrix<f64>,
    pub d_hat: usize,
    /// Eigenvalues of the unpenalized `M₁`, used for `d̂`.
    pub eigenvalues: Vec<f64>,
    /// Eigenvalues of `M₁ − τL₁`.
    pub penalized_eigenvalues: Vec<f64>,
    /// `n × p` latent field, `Â_iÂ_iᵀ y_{t,i}` placed by set membership.
    pub xi_hat: DMatrix<f64>,
    pub tau: f64,
    pub k0: usize,
    pub p_star: usize,
}

impl FactorModelFit {
    /// Applies the fitted projectors `Â_iÂ_iᵀ` to an `m × p` block of
    /// observations (rows are times).
    pub fn project(&self, y: &DMatrix<f64>) -> DMatrix<f64> {
        let y1 = y.select_columns(&self.partition.set1);
        let y2 = y.select_columns(&self.partition.set2);
        let xi1 = &y1 * &self.a1_hat * self.a1_hat.transpose();
        let xi2 = &y2 * &self.a2_hat * self.a2_hat.transpose();
        let mut out = DMatrix::zeros(y.nrows(), y.ncols());
        for (a, &i) in self.partition.set1.iter().enumerate() {
            out.set_column(i, &xi1.column(a));
        }
        for (b, &i) in self.partition.set2.iter().enumerate() {
            out.set_column(i, &xi2.column(b));
        }
        out
    }

    pub fn to_document(&self) -> FitDocument {
        FitDocument {
            partition: self.partition.clone(),
            d_hat: self.d_hat,
            tau: self.tau,
            k0: self.k0,
            p_star: self.p_star,
            eigenvalues: self.eigenvalues.clone(),
            penalized_eigenvalues: self.penalized_eigenvalues.clone(),
            a1_hat: to_rows(&self.a1_hat),
            a2_hat: to_rows(&self.a2_hat),
            x_hat: to_rows(&self.x_hat),
            x_star_hat: to_rows(&self.x_star_hat),
            xi_hat: to_rows(&self.xi_hat),
            locations: self.locations.clone(),
            times: self.times.clone(),
        }
    }

    pub fn from_document(doc: &FitDocument) -> Result<Self> {
        let d = doc.d_hat;
        let p = doc.locations.len();
        Partition::new(doc.partition.set1.clone(), doc.partition.set2.clone(), p)?;
        Ok(FactorModelFit {
            partition: doc.partition.clone(),
            locations: doc.locations.clone(),
            times: doc.times.clone(),
            a1_hat: from_rows(&doc.a1_hat, d, "a1_hat")?,
            a2_hat: from_rows(&doc.a2_hat, d, "a2_hat")?,
            x_hat: from_rows(&doc.x_hat, d, "x_hat")?,
            x_star_hat: from_rows(&doc.x_star_hat, d, "x_star_hat")?,
            d_hat: d,
            eigenvalues: doc.eigenvalues.clone(),
            penalized_eigenvalues: doc.penalized_eigenvalues.clone(),
            xi_hat: from_rows(&doc.xi_hat, p, "xi_hat")?,
            tau: doc.tau,
            k0: doc.k0,
            p_star: doc.p_star,
        })
    }
}

/// JSON form of a [`FactorModelFit`]; matrices are row-major arrays.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitDocument {
    pub partition: Partition,
    pub d_hat: usize,
    pub tau: f64,
    pub k0: usize,
    pub p_star: usize,
    pub eigenvalues: Vec<f64>,
    pub penalized_eigenvalues: Vec<f64>,
    pub a1_hat: Vec<Vec<f64>>,
    pub a2_hat: Vec<Vec<f64>>,
    pub x_hat: Vec<Vec<f64>>,
    pub x_star_hat: Vec<Vec<f64>>,
    pub xi_hat: Vec<Vec<f64>>,
    pub locations: LocationSet,
    pub times: Vec<String>,
}

pub(crate) fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

pub(crate) fn from_rows(rows: &[Vec<f64>], ncols: usize, what: &str) -> Result<DMatrix<f64>> {
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::ShapeMismatch(format!("{what}: rows must have {ncols} entries")));
    }
    Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

/// Fits loadings, factors and the latent field for one partition.
pub fn fit_factors(frame: &SpatioTemporalFrame, partition: &Partition, opts: &FitOptions) -> Result<FactorModelFit> {
    FactorProblem::new(frame, partition, opts)?.fit(opts.tau)
}

/// Projector-based distance between column spaces,
/// `sqrt(1 − tr(P₁P₂) / max(d₁, d₂))`, in `[0, 1]`.
pub fn subspace_distance(b1: &DMatrix<f64>, b2: &DMatrix<f64>) -> Result<f64> {
    if b1.nrows() != b2.nrows() {
        return Err(Error::ShapeMismatch(format!(
            "bases live in R^{} and R^{}",
            b1.nrows(),
            b2.nrows()
        )));
    }
    let p1 = projector(b1)?;
    let p2 = projector(b2)?;
    let trace = p1.component_mul(&p2).sum();
    let dmax = b1.ncols().max(b2.ncols()) as f64;
    Ok((1.0 - trace / dmax).clamp(0.0, 1.0).sqrt())
}

fn projector(b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if b.ncols() == 0 || b.ncols() > b.nrows() {
        return Err(Error::RankDeficient);
    }
    let gram = b.transpose() * b;
    let vals = gram.clone().symmetric_eigenvalues();
    if vals.max() <= 0.0 || vals.min() <= 1e-12 * vals.max() {
        return Err(Error::RankDeficient);
    }
    let inv = gram.cholesky().ok_or(Error::RankDeficient)?.inverse();
    Ok(b * inv * b.transpose())
}
