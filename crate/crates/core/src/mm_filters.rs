//! Jump-Markov multiple-model filtering (GPB1, IMM) and PMF fusion.

use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::gaussian::Gaussian;
use crate::kalman::{Dynamics, FilterKind, Sensor};
use crate::math;

/// Modes plus transition probabilities `jump[(j, t)] = P(m_k = j | m_{k-1} = t)`.
#[derive(Debug, Clone)]
pub struct JumpMarkovModel<D> {
    pub modes: Vec<D>,
    pub jump: DMatrix<f64>,
}

impl<D: Dynamics> JumpMarkovModel<D> {
    pub fn new(modes: Vec<D>, jump: DMatrix<f64>) -> Result<Self> {
        let r = modes.len();
        if r == 0 {
            return Err(Error::Empty("modes"));
        }
        if jump.shape() != (r, r) {
            return Err(Error::Dimension("transition matrix"));
        }
        for t in 0..r {
            let col = jump.column(t);
            if col.iter().any(|p| !(*p >= 0.0)) || math::abs(col.sum() - 1.0) > 1e-9 {
                return Err(Error::InvalidParameter("transition probabilities out of mode t must sum to one"));
            }
        }
        Ok(Self { modes, jump })
    }

    pub fn num_modes(&self) -> usize {
        self.modes.len()
    }
}

/// Mode-conditioned densities and mode probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct ModeBank {
    pub pdfs: Vec<Gaussian>,
    pub mu: Vec<f64>,
}

impl ModeBank {
    pub fn new(pdfs: Vec<Gaussian>, mu: Vec<f64>) -> Result<Self> {
        if pdfs.len() != mu.len() || pdfs.is_empty() {
            return Err(Error::Dimension("mode bank"));
        }
        if mu.iter().any(|m| !(*m >= 0.0)) || math::abs(mu.iter().sum::<f64>() - 1.0) > 1e-9 {
            return Err(Error::InvalidParameter("mode probabilities must form a PMF"));
        }
        Ok(Self { pdfs, mu })
    }

    /// Every mode starts from the same density with uniform probabilities.
    pub fn uniform(init: Gaussian, r: usize) -> Self {
        Self { pdfs: alloc::vec![init; r], mu: alloc::vec![1.0 / r as f64; r] }
    }
}

/// `mu_{k|k-1}^j = sum_t p_jt mu^t`.
pub fn predict_mode_probabilities(mu: &[f64], jump: &DMatrix<f64>) -> Vec<f64> {
    (0..mu.len()).map(|j| (0..mu.len()).map(|t| jump[(j, t)] * mu[t]).sum()).collect()
}

/// Per-mode prediction of densities and probabilities.
pub fn predict_modes<D: Dynamics>(bank: &ModeBank, model: &JumpMarkovModel<D>, filter: &FilterKind) -> Result<ModeBank> {
    if bank.pdfs.len() != model.num_modes() {
        return Err(Error::Dimension("bank vs model"));
    }
    let pdfs = bank.pdfs.iter().zip(&model.modes).map(|(p, m)| filter.predict(p, m)).collect::<Result<Vec<_>>>()?;
    Ok(ModeBank { pdfs, mu: predict_mode_probabilities(&bank.mu, &model.jump) })
}

/// Per-mode correction and Bayes update of the mode probabilities, done in the log domain.
pub fn correct_modes(pred: &ModeBank, y: &DVector<f64>, sensor: &dyn Sensor, filter: &FilterKind) -> Result<ModeBank> {
    let mut pdfs = Vec::with_capacity(pred.pdfs.len());
    let mut log_post = Vec::with_capacity(pred.pdfs.len());
    for (p, &m) in pred.pdfs.iter().zip(&pred.mu) {
        let t = filter.terms(p, sensor)?;
        let e = t.innovation(y, sensor);
        let lg = t.log_likelihood(&e);
        pdfs.push(t.posterior(&e));
        log_post.push(if m > 0.0 { lg + math::ln(m) } else { f64::NEG_INFINITY });
    }
    let mu = normalize_log(&log_post).ok_or(Error::DegenerateModeUpdate)?;
    Ok(ModeBank { pdfs, mu })
}

fn normalize_log(v: &[f64]) -> Option<Vec<f64>> {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return None;
    }
    let e: Vec<f64> = v.iter().map(|x| math::exp(x - m)).collect();
    let s: f64 = e.iter().sum();
    Some(e.into_iter().map(|x| x / s).collect())
}

/// Moment-matched fusion of the mode-conditioned densities.
pub fn mode_fusion(bank: &ModeBank) -> Gaussian {
    let n = bank.pdfs[0].dim();
    let mut x = DVector::zeros(n);
    for (p, &m) in bank.pdfs.iter().zip(&bank.mu) {
        x += &p.mean * m;
    }
    let mut cov = DMatrix::zeros(n, n);
    for (p, &m) in bank.pdfs.iter().zip(&bank.mu) {
        let d = &x - &p.mean;
        cov += (&p.cov + &d * d.transpose()) * m;
    }
    math::symmetrize(&mut cov);
    Gaussian { mean: x, cov }
}

/// `mix[(j, t)] = mu^{t|j} = p_jt mu^t / sum_i p_ji mu^i`.
pub fn mixing_probabilities(mu: &[f64], jump: &DMatrix<f64>) -> DMatrix<f64> {
    let r = mu.len();
    let mut out = DMatrix::zeros(r, r);
    for j in 0..r {
        let norm: f64 = (0..r).map(|i| jump[(j, i)] * mu[i]).sum();
        for t in 0..r {
            out[(j, t)] = if norm > 0.0 { jump[(j, t)] * mu[t] / norm } else { mu[t] };
        }
    }
    out
}

/// IMM interaction: mixed initial densities for every mode.
pub fn mix(bank: &ModeBank, jump: &DMatrix<f64>) -> Vec<Gaussian> {
    let r = bank.mu.len();
    let w = mixing_probabilities(&bank.mu, jump);
    (0..r)
        .map(|j| {
            let row: Vec<f64> = (0..r).map(|t| w[(j, t)]).collect();
            mode_fusion(&ModeBank { pdfs: bank.pdfs.clone(), mu: row })
        })
        .collect()
}

/// One GPB1 cycle: predict, correct, fuse, then re-initialise every mode with the fused density.
pub fn gpb1_step<D: Dynamics>(
    bank: &ModeBank,
    y: &DVector<f64>,
    model: &JumpMarkovModel<D>,
    sensor: &dyn Sensor,
    filter: &FilterKind,
) -> Result<(ModeBank, Gaussian)> {
    let post = correct_modes(&predict_modes(bank, model, filter)?, y, sensor, filter)?;
    let fused = mode_fusion(&post);
    let r = post.mu.len();
    Ok((ModeBank { pdfs: alloc::vec![fused.clone(); r], mu: post.mu }, fused))
}

/// One IMM cycle: predict, correct, fuse, then mix for the next cycle.
pub fn imm_step<D: Dynamics>(
    bank: &ModeBank,
    y: &DVector<f64>,
    model: &JumpMarkovModel<D>,
    sensor: &dyn Sensor,
    filter: &FilterKind,
) -> Result<(ModeBank, Gaussian)> {
    let post = correct_modes(&predict_modes(bank, model, filter)?, y, sensor, filter)?;
    let fused = mode_fusion(&post);
    let pdfs = mix(&post, &model.jump);
    Ok((ModeBank { pdfs, mu: post.mu }, fused))
}

fn normalize_pmf(v: Vec<f64>) -> Result<Vec<f64>> {
    let s: f64 = v.iter().sum();
    if !(s > 0.0) || !s.is_finite() {
        return Err(Error::Degenerate("PMF with zero mass"));
    }
    Ok(v.into_iter().map(|x| x / s).collect())
}

/// `p ⊕ q`: normalised pointwise product.
pub fn pmf_oplus(p: &[f64], q: &[f64]) -> Result<Vec<f64>> {
    if p.len() != q.len() {
        return Err(Error::Dimension("PMF length"));
    }
    normalize_pmf(p.iter().zip(q).map(|(a, b)| a * b).collect())
}

/// `a ⊙ p`: normalised power.
pub fn pmf_odot(a: f64, p: &[f64]) -> Result<Vec<f64>> {
    normalize_pmf(p.iter().map(|x| math::pow_weight(*x, a)).collect())
}

/// Weighted KLA of PMFs: the normalised weighted geometric mean (with `0^w = 0`).
pub fn pmf_kla(pmfs: &[&[f64]], weights: &[f64]) -> Result<Vec<f64>> {
    let first = pmfs.first().ok_or(Error::Empty("PMFs"))?;
    if pmfs.len() != weights.len() {
        return Err(Error::Dimension("PMFs vs weights"));
    }
    crate::gaussian::check_weights(weights)?;
    let r = first.len();
    if pmfs.iter().any(|p| p.len() != r) {
        return Err(Error::Dimension("PMF length"));
    }
    let mut logs = alloc::vec![0.0; r];
    for (p, &w) in pmfs.iter().zip(weights) {
        if w == 0.0 {
            continue;
        }
        for (l, &x) in logs.iter_mut().zip(p.iter()) {
            *l += if x > 0.0 { w * math::ln(x) } else { f64::NEG_INFINITY };
        }
    }
    normalize_log(&logs).ok_or(Error::Degenerate("every bin of the fused PMF is zero"))
}
