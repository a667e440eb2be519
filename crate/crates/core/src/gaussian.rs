//! Gaussian and Gaussian-mixture algebra.

use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::math::{self, cholesky, log_det_from_chol, log_normal_zero_mean, spd_inverse, LN_2PI};

#[derive(Debug, Clone, PartialEq)]
pub struct Gaussian {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl Gaussian {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        if cov.nrows() != mean.len() || cov.ncols() != mean.len() {
            return Err(Error::Dimension("mean and covariance"));
        }
        Ok(Self { mean, cov })
    }

    pub fn scalar(mean: f64, var: f64) -> Self {
        Self {
            mean: DVector::from_element(1, mean),
            cov: DMatrix::from_element(1, 1, var),
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn log_pdf(&self, x: &DVector<f64>) -> Result<f64> {
        log_normal_zero_mean(&(x - &self.mean), &self.cov)
    }

    pub fn pdf(&self, x: &DVector<f64>) -> Result<f64> {
        Ok(math::exp(self.log_pdf(x)?))
    }

    pub fn to_information(&self) -> Result<InformationPair> {
        let omega = spd_inverse(&self.cov)?;
        let q = &omega * &self.mean;
        Ok(InformationPair { omega, q })
    }

    /// Squared Mahalanobis distance of `x` under this covariance.
    pub fn mahalanobis_sq(&self, x: &DVector<f64>) -> Result<f64> {
        let d = x - &self.mean;
        let c = cholesky(&self.cov)?;
        Ok(d.dot(&c.solve(&d)))
    }
}

/// Information (inverse covariance) form `(Omega, q) = (P^-1, P^-1 m)`.
#[derive(Debug, Clone, PartialEq)]
pub struct InformationPair {
    pub omega: DMatrix<f64>,
    pub q: DVector<f64>,
}

impl InformationPair {
    pub fn zeros(n: usize) -> Self {
        Self { omega: DMatrix::zeros(n, n), q: DVector::zeros(n) }
    }

    pub fn dim(&self) -> usize {
        self.q.len()
    }

    pub fn to_gaussian(&self) -> Result<Gaussian> {
        let cov = spd_inverse(&self.omega)?;
        let mean = &cov * &self.q;
        Ok(Gaussian { mean, cov })
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self { omega: &self.omega * s, q: &self.q * s }
    }

    pub fn add_scaled(&mut self, other: &Self, s: f64) {
        self.omega += &other.omega * s;
        self.q += &other.q * s;
    }

    /// Weighted arithmetic mean of information pairs.
    pub fn weighted_sum(pairs: &[&Self], weights: &[f64]) -> Result<Self> {
        let first = pairs.first().ok_or(Error::Empty("information pairs"))?;
        if pairs.len() != weights.len() {
            return Err(Error::Dimension("pairs vs weights"));
        }
        let mut acc = Self::zeros(first.dim());
        for (p, &w) in pairs.iter().zip(weights) {
            if p.dim() != acc.dim() {
                return Err(Error::Dimension("information pair size"));
            }
            acc.add_scaled(p, w);
        }
        math::symmetrize(&mut acc.omega);
        Ok(acc)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GmComponent {
    pub weight: f64,
    pub density: Gaussian,
}

impl GmComponent {
    pub fn new(weight: f64, mean: DVector<f64>, cov: DMatrix<f64>) -> Self {
        Self { weight, density: Gaussian { mean, cov } }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct GaussianMixture {
    pub components: Vec<GmComponent>,
}

impl GaussianMixture {
    pub fn new(components: Vec<GmComponent>) -> Self {
        Self { components }
    }

    pub fn single(g: Gaussian) -> Self {
        Self { components: alloc::vec![GmComponent { weight: 1.0, density: g }] }
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    pub fn dim(&self) -> Option<usize> {
        self.components.first().map(|c| c.density.dim())
    }

    pub fn total_weight(&self) -> f64 {
        self.components.iter().map(|c| c.weight).sum()
    }

    pub fn is_normalized(&self, tol: f64) -> bool {
        math::abs(self.total_weight() - 1.0) <= tol
    }

    pub fn scaled(&self, s: f64) -> Self {
        let mut out = self.clone();
        for c in &mut out.components {
            c.weight *= s;
        }
        out
    }

    /// Mixture with weights rescaled to sum to one. An all-zero mixture is returned as is.
    pub fn normalized(&self) -> Self {
        let t = self.total_weight();
        if t > 0.0 {
            self.scaled(1.0 / t)
        } else {
            self.clone()
        }
    }

    pub fn eval(&self, x: &DVector<f64>) -> Result<f64> {
        let mut s = 0.0;
        for c in &self.components {
            s += c.weight * c.density.pdf(x)?;
        }
        Ok(s)
    }

    /// First moment normalised by total weight.
    pub fn mean(&self) -> Option<DVector<f64>> {
        let t = self.total_weight();
        let n = self.dim()?;
        if t <= 0.0 {
            return None;
        }
        let mut m = DVector::zeros(n);
        for c in &self.components {
            m += &c.density.mean * (c.weight / t);
        }
        Some(m)
    }

    /// Moment-matched single Gaussian.
    pub fn moment_match(&self) -> Option<Gaussian> {
        let m = self.mean()?;
        let t = self.total_weight();
        let n = m.len();
        let mut p = DMatrix::zeros(n, n);
        for c in &self.components {
            let d = &c.density.mean - &m;
            p += (&c.density.cov + &d * d.transpose()) * (c.weight / t);
        }
        math::symmetrize(&mut p);
        Some(Gaussian { mean: m, cov: p })
    }

    /// Mean of the highest-weight component (first one on ties).
    pub fn peak_mean(&self) -> Option<&DVector<f64>> {
        let mut best: Option<&GmComponent> = None;
        for c in &self.components {
            if best.is_none_or(|b| c.weight > b.weight) {
                best = Some(c);
            }
        }
        best.map(|c| &c.density.mean)
    }

    pub fn push(&mut self, weight: f64, density: Gaussian) {
        self.components.push(GmComponent { weight, density });
    }

    pub fn extend(&mut self, other: &Self, scale: f64) {
        for c in &other.components {
            self.components.push(GmComponent { weight: c.weight * scale, density: c.density.clone() });
        }
    }
}

/// Covariance intersection: weighted arithmetic mean of the information pairs.
pub fn ci_fuse(densities: &[Gaussian], weights: &[f64]) -> Result<Gaussian> {
    if densities.is_empty() {
        return Err(Error::Empty("densities"));
    }
    if densities.len() != weights.len() {
        return Err(Error::Dimension("densities vs weights"));
    }
    check_weights(weights)?;
    let pairs = densities.iter().map(|g| g.to_information()).collect::<Result<Vec<_>>>()?;
    let refs: Vec<&InformationPair> = pairs.iter().collect();
    InformationPair::weighted_sum(&refs, weights)?.to_gaussian()
}

pub(crate) fn check_weights(weights: &[f64]) -> Result<()> {
    if weights.iter().any(|w| !(*w >= 0.0)) {
        return Err(Error::InvalidParameter("negative fusion weight"));
    }
    if math::abs(weights.iter().sum::<f64>() - 1.0) > 1e-9 {
        return Err(Error::InvalidParameter("fusion weights must sum to one"));
    }
    Ok(())
}

/// `ln beta(w, P) = ln [ det(2 pi P / w)^{1/2} / det(2 pi P)^{w/2} ]`.
fn ln_beta(w: f64, n: usize, log_det_p: f64) -> f64 {
    let nf = n as f64;
    0.5 * (nf * LN_2PI - nf * math::ln(w) + log_det_p) - 0.5 * w * (nf * LN_2PI + log_det_p)
}

/// Component-wise exponentiation: `alpha^w beta(w, P) N(x; m, P / w)`. Output is not normalised.
pub fn gm_power(gm: &GaussianMixture, omega: f64) -> Result<GaussianMixture> {
    if !(omega > 0.0 && omega <= 1.0) {
        return Err(Error::InvalidParameter("power exponent must lie in (0, 1]"));
    }
    if gm.is_empty() {
        return Err(Error::Empty("mixture"));
    }
    if omega == 1.0 {
        return Ok(gm.clone());
    }
    let mut out = Vec::with_capacity(gm.len());
    for c in &gm.components {
        let ld = log_det_from_chol(&cholesky(&c.density.cov)?);
        let w = math::pow_weight(c.weight, omega) * math::exp(ln_beta(omega, c.density.dim(), ld));
        out.push(GmComponent { weight: w, density: Gaussian { mean: c.density.mean.clone(), cov: &c.density.cov / omega } });
    }
    Ok(GaussianMixture::new(out))
}

/// Exact pairwise product of two mixtures (`|a| * |b|` components, not normalised).
pub fn gm_product_pairwise(a: &GaussianMixture, b: &GaussianMixture) -> Result<GaussianMixture> {
    let ai = a.components.iter().map(|c| c.density.to_information()).collect::<Result<Vec<_>>>()?;
    let bi = b.components.iter().map(|c| c.density.to_information()).collect::<Result<Vec<_>>>()?;
    let mut out = Vec::with_capacity(a.len() * b.len());
    for (ca, ia) in a.components.iter().zip(&ai) {
        for (cb, ib) in b.components.iter().zip(&bi) {
            let p12 = spd_inverse(&(&ia.omega + &ib.omega))?;
            let x12 = &p12 * (&ia.q + &ib.q);
            let s = &ca.density.cov + &cb.density.cov;
            let l = log_normal_zero_mean(&(&ca.density.mean - &cb.density.mean), &s)?;
            out.push(GmComponent { weight: ca.weight * cb.weight * math::exp(l), density: Gaussian { mean: x12, cov: p12 } });
        }
    }
    Ok(GaussianMixture::new(out))
}

/// Relative floor below which fused pair components are discarded.
pub const PAIR_PRUNE_FLOOR: f64 = 1e-12;

/// Pairwise GM fusion `a^w b^(1-w)` under the separated-components approximation.
/// Returns the normalised mixture and the natural log of its pre-normalisation mass.
pub fn gm_ci_fuse_pair_with_mass(a: &GaussianMixture, b: &GaussianMixture, omega: f64) -> Result<(GaussianMixture, f64)> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Empty("mixture"));
    }
    if !(0.0..=1.0).contains(&omega) {
        return Err(Error::InvalidParameter("fusion weight must lie in [0, 1]"));
    }
    if omega == 1.0 || omega == 0.0 {
        let src = if omega == 1.0 { a } else { b };
        let t = src.total_weight();
        return Ok((src.normalized(), math::ln(t)));
    }
    let n = a.dim().unwrap_or(0);
    let prep = |gm: &GaussianMixture, w: f64| -> Result<Vec<(InformationPair, f64)>> {
        gm.components
            .iter()
            .map(|c| {
                let ch = cholesky(&c.density.cov)?;
                let ld = log_det_from_chol(&ch);
                let mut omega = ch.inverse();
                math::symmetrize(&mut omega);
                let q = &omega * &c.density.mean;
                let lw = if c.weight > 0.0 { w * math::ln(c.weight) } else { f64::NEG_INFINITY };
                Ok((InformationPair { omega, q }, lw + ln_beta(w, n, ld)))
            })
            .collect()
    };
    let pa = prep(a, omega)?;
    let pb = prep(b, 1.0 - omega)?;
    let mut log_w = Vec::with_capacity(a.len() * b.len());
    let mut comps = Vec::with_capacity(a.len() * b.len());
    for (ca, (ia, la)) in a.components.iter().zip(&pa) {
        for (cb, (ib, lb)) in b.components.iter().zip(&pb) {
            if *la == f64::NEG_INFINITY || *lb == f64::NEG_INFINITY {
                continue;
            }
            let s = &ca.density.cov / omega + &cb.density.cov / (1.0 - omega);
            let sep = log_normal_zero_mean(&(&ca.density.mean - &cb.density.mean), &s)?;
            let info = InformationPair { omega: &ia.omega * omega + &ib.omega * (1.0 - omega), q: &ia.q * omega + &ib.q * (1.0 - omega) };
            log_w.push(la + lb + sep);
            comps.push(info);
        }
    }
    let log_mass = math::log_sum_exp(&log_w);
    if log_mass == f64::NEG_INFINITY {
        return Err(Error::Degenerate("fused mixture has zero mass"));
    }
    let max = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let floor = math::ln(PAIR_PRUNE_FLOOR);
    let mut out = Vec::new();
    let mut kept = 0.0;
    for (lw, info) in log_w.iter().zip(comps) {
        if lw - max < floor {
            continue;
        }
        let w = math::exp(lw - max);
        kept += w;
        out.push(GmComponent { weight: w, density: info.to_gaussian()? });
    }
    for c in &mut out {
        c.weight /= kept;
    }
    Ok((GaussianMixture::new(out), log_mass))
}

pub fn gm_ci_fuse_pair(a: &GaussianMixture, b: &GaussianMixture, omega: f64) -> Result<GaussianMixture> {
    gm_ci_fuse_pair_with_mass(a, b, omega).map(|(g, _)| g)
}

/// Multi-agent GM fusion `prod_i p_i^{w_i}` by chained pairwise fusion.
/// Returns the normalised mixture and `ln int prod_i p_i^{w_i} dx` (under the same approximation).
pub fn gm_ci_fuse(mixtures: &[&GaussianMixture], weights: &[f64]) -> Result<(GaussianMixture, f64)> {
    if mixtures.is_empty() {
        return Err(Error::Empty("mixtures"));
    }
    if mixtures.len() != weights.len() {
        return Err(Error::Dimension("mixtures vs weights"));
    }
    check_weights(weights)?;
    let mut acc: Option<(GaussianMixture, f64, f64)> = None;
    for (gm, &w) in mixtures.iter().zip(weights) {
        if w == 0.0 {
            continue;
        }
        acc = Some(match acc {
            None => {
                let t = gm.total_weight();
                (gm.normalized(), w * math::ln(t), w)
            }
            Some((fused, log_k, cum)) => {
                let next = cum + w;
                let (f, log_z) = gm_ci_fuse_pair_with_mass(&fused, gm, cum / next)?;
                (f, log_k + next * log_z, next)
            }
        });
    }
    let (g, log_k, _) = acc.ok_or(Error::InvalidParameter("all fusion weights are zero"))?;
    Ok((g, log_k))
}

/// Greedy highest-weight-first merging with squared Mahalanobis gate `gamma_m`.
pub fn merge(gm: &GaussianMixture, gamma_m: f64) -> Result<GaussianMixture> {
    if !(gamma_m >= 0.0) {
        return Err(Error::InvalidParameter("merging threshold"));
    }
    let n = gm.len();
    let chols = gm.components.iter().map(|c| cholesky(&c.density.cov)).collect::<Result<Vec<_>>>()?;
    let mut remaining: Vec<usize> = (0..n).collect();
    let mut out = Vec::new();
    while !remaining.is_empty() {
        let mut j = remaining[0];
        for &i in &remaining {
            if gm.components[i].weight > gm.components[j].weight {
                j = i;
            }
        }
        let xj = &gm.components[j].density.mean;
        let (cluster, rest): (Vec<usize>, Vec<usize>) = remaining.iter().partition(|&&i| {
            let d = xj - &gm.components[i].density.mean;
            d.dot(&chols[i].solve(&d)) <= gamma_m
        });
        remaining = rest;
        if cluster.len() == 1 {
            out.push(gm.components[cluster[0]].clone());
            continue;
        }
        let total: f64 = cluster.iter().map(|&i| gm.components[i].weight).sum();
        let coef = |i: usize| if total > 0.0 { gm.components[i].weight / total } else { 1.0 / cluster.len() as f64 };
        let dim = xj.len();
        let mut x = DVector::zeros(dim);
        for &i in &cluster {
            x += &gm.components[i].density.mean * coef(i);
        }
        let mut p = DMatrix::zeros(dim, dim);
        for &i in &cluster {
            let d = &x - &gm.components[i].density.mean;
            p += (&gm.components[i].density.cov + &d * d.transpose()) * coef(i);
        }
        math::symmetrize(&mut p);
        out.push(GmComponent { weight: total, density: Gaussian { mean: x, cov: p } });
    }
    Ok(GaussianMixture::new(out))
}

/// Keep the `n_max` highest-weight components (stable on ties), in original order.
pub fn prune(gm: &GaussianMixture, n_max: usize) -> Result<GaussianMixture> {
    if n_max == 0 {
        return Err(Error::InvalidParameter("n_max must be at least 1"));
    }
    if gm.len() <= n_max {
        return Ok(gm.clone());
    }
    let mut idx: Vec<usize> = (0..gm.len()).collect();
    idx.sort_by(|&a, &b| gm.components[b].weight.total_cmp(&gm.components[a].weight));
    idx.truncate(n_max);
    idx.sort_unstable();
    Ok(GaussianMixture::new(idx.into_iter().map(|i| gm.components[i].clone()).collect()))
}

/// Drop components whose weight is not above `gamma_t`.
pub fn truncate(gm: &GaussianMixture, gamma_t: f64) -> GaussianMixture {
    GaussianMixture::new(gm.components.iter().filter(|c| c.weight > gamma_t).cloned().collect())
}
