//! Gaussian-mixture CPHD filter, i.i.d.-cluster GCI fusion and the consensus CGM-CPHD pipeline.

use alloc::vec::Vec;

use nalgebra::DVector;

use crate::consensus::{ConsensusWeights, NetworkGraph};
use crate::error::{Error, Result};
use crate::gaussian::{self, GaussianMixture, GmComponent};
use crate::kalman::{Dynamics, FilterKind};
use crate::math;
use crate::rfs::{CardinalityPmf, DetectionModel};

/// Cardinality PMF plus intensity (PHD) in GM form.
#[derive(Debug, Clone, PartialEq)]
pub struct CphdState {
    pub card: CardinalityPmf,
    pub intensity: GaussianMixture,
}

impl CphdState {
    pub fn empty(n_max: usize) -> Self {
        Self { card: CardinalityPmf::delta(0, n_max), intensity: GaussianMixture::default() }
    }

    pub fn n_max(&self) -> usize {
        self.card.n_max()
    }
}

/// Survival, birth and single-object motion.
pub struct CphdMotion<'a> {
    pub p_s: f64,
    pub birth_card: CardinalityPmf,
    pub birth: GaussianMixture,
    pub dynamics: &'a dyn Dynamics,
    pub filter: FilterKind,
}

fn check_prob(p: f64, what: &'static str) -> Result<()> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(Error::InvalidParameter(what))
    }
}

/// Survivor thinning followed by convolution with the birth cardinality, truncated at `n_max`.
pub fn predict_cardinality(card: &CardinalityPmf, p_s: f64, birth: &CardinalityPmf) -> Result<CardinalityPmf> {
    check_prob(p_s, "survival probability")?;
    let n_max = card.n_max();
    let mut surv = alloc::vec![0.0; n_max + 1];
    for (t, &pt) in card.rho.iter().enumerate() {
        if pt == 0.0 {
            continue;
        }
        for (j, s) in surv.iter_mut().enumerate().take(t + 1) {
            let lb = math::ln_binomial(t, j);
            let ps = if j == 0 { 0.0 } else { j as f64 * math::ln(p_s) };
            let pd = if t == j { 0.0 } else { (t - j) as f64 * math::ln(1.0 - p_s) };
            *s += math::exp(lb + ps + pd) * pt;
        }
    }
    let mut out = alloc::vec![0.0; n_max + 1];
    for (n, o) in out.iter_mut().enumerate() {
        for j in 0..=n {
            *o += birth.get(n - j) * surv[j];
        }
    }
    CardinalityPmf::from_unnormalized(out)
}

pub fn cphd_predict(state: &CphdState, motion: &CphdMotion<'_>) -> Result<CphdState> {
    let card = predict_cardinality(&state.card, motion.p_s, &motion.birth_card)?;
    let mut comps = motion.birth.components.clone();
    for c in &state.intensity.components {
        let d = motion.filter.predict(&c.density, motion.dynamics)?;
        comps.push(GmComponent { weight: motion.p_s * c.weight, density: d });
    }
    Ok(CphdState { card, intensity: GaussianMixture::new(comps) })
}

/// Elementary symmetric functions `e_0..e_m` of `v`, returned as logarithms.
fn log_esf(v: &[f64]) -> Vec<f64> {
    let scale = v.iter().copied().fold(0.0, f64::max);
    let mut e = alloc::vec![0.0; v.len() + 1];
    e[0] = 1.0;
    if scale > 0.0 {
        for (k, &x) in v.iter().enumerate() {
            let x = x / scale;
            for j in (1..=k + 1).rev() {
                e[j] += x * e[j - 1];
            }
        }
    }
    e.iter()
        .enumerate()
        .map(|(j, &x)| if x > 0.0 { math::ln(x) + if j > 0 { j as f64 * math::ln(scale) } else { 0.0 } } else { f64::NEG_INFINITY })
        .collect()
}

/// `ln Upsilon^u[Z](n)` for all `n <= n_max`, with `xi` the per-measurement terms and `log_esf` their ESFs.
fn log_upsilon(u: usize, log_e: &[f64], m: usize, n_max: usize, lambda_c: f64, log_miss: f64, log_mass: f64) -> Vec<f64> {
    (0..=n_max)
        .map(|n| {
            let mut terms = Vec::new();
            for j in 0..=m.min(n) {
                if j + u > n || log_e[j] == f64::NEG_INFINITY {
                    continue;
                }
                // (m - j)! p_K(m - j) for Poisson clutter
                let clutter = if lambda_c > 0.0 {
                    -lambda_c + (m - j) as f64 * math::ln(lambda_c)
                } else if j == m {
                    0.0
                } else {
                    continue;
                };
                let k = n - j - u;
                let miss = if k == 0 { 0.0 } else { k as f64 * log_miss };
                let perm = math::ln_factorial(n) - math::ln_factorial(k);
                let mass = if j + u == 0 { 0.0 } else { -((j + u) as f64) * log_mass };
                terms.push(clutter + perm + miss + mass + log_e[j]);
            }
            math::log_sum_exp(&terms)
        })
        .collect()
}

fn log_dot(log_a: &[f64], p: &[f64]) -> f64 {
    let terms: Vec<f64> = log_a.iter().zip(p).filter(|(_, q)| **q > 0.0).map(|(a, q)| a + math::ln(*q)).collect();
    math::log_sum_exp(&terms)
}

/// Single-sensor GM-CPHD correction.
pub fn cphd_correct(state: &CphdState, ys: &[DVector<f64>], model: &DetectionModel<'_>, filter: &FilterKind) -> Result<CphdState> {
    check_prob(model.p_d, "detection probability")?;
    if !(model.clutter_rate >= 0.0) || !(model.clutter_density > 0.0) {
        return Err(Error::InvalidParameter("clutter model"));
    }
    let n_max = state.n_max();
    let m = ys.len();
    let comps = &state.intensity.components;
    let mass = state.intensity.total_weight();
    let p_d = model.p_d;

    // q[j][z] = w_j P_D N(z; y_hat_j, S_j), plus the per-component posteriors.
    let mut q = alloc::vec![alloc::vec![0.0; m]; comps.len()];
    let mut post = Vec::with_capacity(comps.len());
    if p_d > 0.0 && m > 0 {
        for (j, c) in comps.iter().enumerate() {
            let t = filter.terms(&c.density, model.sensor)?;
            let mut row = Vec::with_capacity(m);
            for (z, y) in ys.iter().enumerate() {
                let e = t.innovation(y, model.sensor);
                q[j][z] = c.weight * p_d * math::exp(t.log_likelihood(&e));
                row.push(t.posterior(&e));
            }
            post.push(row);
        }
    }
    let inv_c = 1.0 / model.clutter_density;
    let xi: Vec<f64> = (0..m).map(|z| inv_c * comps.iter().enumerate().map(|(j, _)| q[j][z]).sum::<f64>()).collect();

    let log_miss = if p_d < 1.0 { math::ln(1.0 - p_d) } else { f64::NEG_INFINITY };
    let log_mass = if mass > 0.0 { math::ln(mass) } else { f64::INFINITY };
    let lam = model.clutter_rate;
    let le = log_esf(&xi);
    let up0 = log_upsilon(0, &le, m, n_max, lam, log_miss, log_mass);
    let up1 = log_upsilon(1, &le, m, n_max, lam, log_miss, log_mass);
    let norm = log_dot(&up0, &state.card.rho);
    if norm == f64::NEG_INFINITY {
        return Err(Error::Degenerate("CPHD correction has zero likelihood"));
    }

    let rho: Vec<f64> = up0.iter().zip(&state.card.rho).map(|(u, p)| if *p > 0.0 { math::exp(u + math::ln(*p) - norm) } else { 0.0 }).collect();
    let card = CardinalityPmf::from_unnormalized(rho)?;

    let mut out = Vec::with_capacity(comps.len() * (m + 1));
    let miss_scale = if p_d < 1.0 { math::exp(log_dot(&up1, &state.card.rho) - norm) * (1.0 - p_d) } else { 0.0 };
    for c in comps {
        out.push(GmComponent { weight: c.weight * miss_scale, density: c.density.clone() });
    }
    for z in 0..m {
        if post.is_empty() {
            break;
        }
        let mut rest = xi.clone();
        rest.remove(z);
        let le_z = log_esf(&rest);
        let up1_z = log_upsilon(1, &le_z, m - 1, n_max, lam, log_miss, log_mass);
        let scale = math::exp(log_dot(&up1_z, &state.card.rho) - norm) * inv_c;
        for (j, row) in post.iter().enumerate() {
            out.push(GmComponent { weight: q[j][z] * scale, density: row[z].clone() });
        }
    }
    Ok(CphdState { card, intensity: GaussianMixture::new(out) })
}

/// Iterated single-sensor corrections in the given order.
pub fn cphd_correct_multi(state: &CphdState, scans: &[(&[DVector<f64>], &DetectionModel<'_>)], filter: &FilterKind) -> Result<CphdState> {
    let mut s = state.clone();
    for (ys, m) in scans {
        s = cphd_correct(&s, ys, m, filter)?;
    }
    Ok(s)
}

/// MAP cardinality then the `n_hat` heaviest components with `alpha * n_hat > gamma_e`.
pub fn cphd_extract(state: &CphdState, gamma_e: f64) -> Vec<DVector<f64>> {
    let n_hat = state.card.map_estimate();
    if n_hat == 0 {
        return Vec::new();
    }
    let comps = &state.intensity.components;
    let mut idx: Vec<usize> = (0..comps.len()).collect();
    idx.sort_by(|&a, &b| comps[b].weight.total_cmp(&comps[a].weight));
    idx.into_iter()
        .take(n_hat)
        .filter(|&i| comps[i].weight * n_hat as f64 > gamma_e)
        .map(|i| comps[i].density.mean.clone())
        .collect()
}

/// GCI fusion of i.i.d. cluster densities: location by GM CI fusion, cardinality by
/// `rho(n) ∝ prod_i rho_i(n)^{w_i} K^n` with `K = int prod_i s_i^{w_i}`.
pub fn cphd_gci_fuse(states: &[&CphdState], weights: &[f64]) -> Result<CphdState> {
    let first = states.first().ok_or(Error::Empty("states"))?;
    if states.len() != weights.len() {
        return Err(Error::Dimension("states vs weights"));
    }
    gaussian::check_weights(weights)?;
    let n_max = first.n_max();
    if states.iter().any(|s| s.n_max() != n_max) {
        return Err(Error::Dimension("cardinality support"));
    }
    let active: Vec<(&CphdState, f64)> = states.iter().zip(weights).filter(|(_, w)| **w > 0.0).map(|(s, w)| (*s, *w)).collect();
    if active.len() == 1 {
        return Ok(active[0].0.clone());
    }
    let locs: Vec<GaussianMixture> = active.iter().map(|(s, _)| s.intensity.normalized()).collect();
    if locs.iter().any(|l| l.is_empty() || !(l.total_weight() > 0.0)) {
        return Err(Error::Empty("location density"));
    }
    let refs: Vec<&GaussianMixture> = locs.iter().collect();
    let ws: Vec<f64> = active.iter().map(|(_, w)| *w).collect();
    let (loc, log_k) = gaussian::gm_ci_fuse(&refs, &ws)?;
    let logs: Vec<f64> = (0..=n_max)
        .map(|n| {
            let mut acc = n as f64 * log_k;
            for (s, w) in &active {
                let p = s.card.rho[n];
                acc += if p > 0.0 { w * math::ln(p) } else { f64::NEG_INFINITY };
            }
            acc
        })
        .collect();
    let lse = math::log_sum_exp(&logs);
    if lse == f64::NEG_INFINITY {
        return Err(Error::Degenerate("fused cardinality is identically zero"));
    }
    let card = CardinalityPmf { rho: logs.iter().map(|l| math::exp(l - lse)).collect() };
    let intensity = loc.scaled(card.mean());
    Ok(CphdState { card, intensity })
}

/// Component-management thresholds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CphdParams {
    pub gamma_m: f64,
    pub gamma_t: f64,
    pub gamma_e: f64,
    pub max_components: usize,
}

impl Default for CphdParams {
    fn default() -> Self {
        Self { gamma_m: 4.0, gamma_t: 1e-4, gamma_e: 0.5, max_components: 25 }
    }
}

fn reduce(state: CphdState, params: &CphdParams) -> Result<CphdState> {
    let t = gaussian::truncate(&state.intensity, params.gamma_t);
    Ok(CphdState { card: state.card, intensity: gaussian::merge(&t, params.gamma_m)? })
}

/// Centralized GM-CPHD: predict, correct with every scan in order, truncate, merge, prune, extract.
pub fn gm_cphd_step(
    state: &CphdState,
    motion: &CphdMotion<'_>,
    scans: &[(&[DVector<f64>], &DetectionModel<'_>)],
    params: &CphdParams,
) -> Result<(CphdState, Vec<DVector<f64>>)> {
    let pred = cphd_predict(state, motion)?;
    let post = reduce(cphd_correct_multi(&pred, scans, &motion.filter)?, params)?;
    let out = CphdState { card: post.card, intensity: gaussian::prune(&post.intensity, params.max_components)? };
    let est = cphd_extract(&out, params.gamma_e);
    Ok((out, est))
}

/// One CGM-CPHD cycle over the network. `sensors[i]` is `None` for communication nodes.
/// Nodes whose neighbourhood is only themselves skip the fusion rounds, which would be the identity.
#[allow(clippy::too_many_arguments)]
pub fn cgm_cphd_step(
    states: &[CphdState],
    motion: &CphdMotion<'_>,
    sensors: &[Option<DetectionModel<'_>>],
    measurements: &[Vec<DVector<f64>>],
    graph: &NetworkGraph,
    weights: &ConsensusWeights,
    steps: usize,
    params: &CphdParams,
) -> Result<(Vec<CphdState>, Vec<Vec<DVector<f64>>>)> {
    let n = states.len();
    if sensors.len() != n || measurements.len() != n || graph.len() != n || weights.len() != n {
        return Err(Error::Dimension("per-node inputs"));
    }
    let mut cur = Vec::with_capacity(n);
    for i in 0..n {
        let pred = cphd_predict(&states[i], motion)?;
        let post = match (&sensors[i], graph.is_sensor(i)) {
            (Some(s), true) => cphd_correct(&pred, &measurements[i], s, &motion.filter)?,
            _ => pred,
        };
        cur.push(reduce(post, params)?);
    }
    for _ in 0..steps {
        let mut next = Vec::with_capacity(n);
        for i in 0..n {
            let row = weights.row(i);
            if row.len() == 1 {
                next.push(cur[i].clone());
                continue;
            }
            let ss: Vec<&CphdState> = row.iter().map(|(j, _)| &cur[*j]).collect();
            let ws: Vec<f64> = row.iter().map(|(_, w)| *w).collect();
            let fused = cphd_gci_fuse(&ss, &ws)?;
            next.push(CphdState { card: fused.card, intensity: gaussian::merge(&fused.intensity, params.gamma_m)? });
        }
        cur = next;
    }
    let mut out = Vec::with_capacity(n);
    let mut est = Vec::with_capacity(n);
    for s in cur {
        let s = CphdState { card: s.card, intensity: gaussian::prune(&s.intensity, params.max_components)? };
        est.push(cphd_extract(&s, params.gamma_e));
        out.push(s);
    }
    Ok((out, est))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::consensus::{metropolis_weights, NodeRole};
    use crate::gaussian::Gaussian;
    use crate::kalman::{kf_correct, LinearModel};
    use alloc::vec;
    use nalgebra::DMatrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn scalar_model(a: f64, q: f64, r: f64) -> LinearModel {
        let m = |v| DMatrix::from_element(1, 1, v);
        LinearModel::new(m(a), m(q), m(1.0), m(r)).unwrap()
    }

    fn gm1(parts: &[(f64, f64, f64)]) -> GaussianMixture {
        GaussianMixture::new(parts.iter().map(|&(w, m, v)| GmComponent::new(w, DVector::from_element(1, m), DMatrix::from_element(1, 1, v))).collect())
    }

    fn v1(x: f64) -> DVector<f64> {
        DVector::from_element(1, x)
    }

    #[test]
    fn predict_identity_and_thinning() {
        let lm = LinearModel::new(DMatrix::identity(1, 1), DMatrix::zeros(1, 1), DMatrix::identity(1, 1), DMatrix::identity(1, 1)).unwrap();
        let st = CphdState { card: CardinalityPmf::new(vec![0.2, 0.5, 0.3]).unwrap(), intensity: gm1(&[(0.6, 1.0, 2.0), (0.5, -3.0, 1.0)]) };
        let motion = CphdMotion { p_s: 1.0, birth_card: CardinalityPmf::delta(0, 2), birth: GaussianMixture::default(), dynamics: &lm, filter: FilterKind::Ekf };
        let p = cphd_predict(&st, &motion).unwrap();
        assert_eq!(p, st);

        let card = predict_cardinality(&CardinalityPmf::delta(2, 4), 0.5, &CardinalityPmf::delta(0, 4)).unwrap();
        for (a, b) in card.rho.iter().zip([0.25, 0.5, 0.25, 0.0, 0.0]) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn predicted_mean_cardinality_is_additive() {
        let n_max = 40;
        let st = CardinalityPmf::new(vec![0.1, 0.2, 0.4, 0.2, 0.1].into_iter().chain(core::iter::repeat(0.0).take(n_max - 4)).collect()).unwrap();
        let birth = CardinalityPmf::poisson(0.7, n_max);
        let p = predict_cardinality(&st, 0.9, &birth).unwrap();
        assert!((p.mean() - (0.9 * st.mean() + birth.mean())).abs() < 1e-9);
    }

    #[test]
    fn no_information_correction_is_identity() {
        let lm = scalar_model(1.0, 1.0, 1.0);
        let st = CphdState { card: CardinalityPmf::new(vec![0.2, 0.5, 0.3]).unwrap(), intensity: gm1(&[(0.6, 1.0, 2.0), (0.5, -3.0, 1.0)]) };
        let model = DetectionModel { p_d: 0.0, clutter_rate: 0.0, clutter_density: 0.1, sensor: &lm };
        let out = cphd_correct(&st, &[], &model, &FilterKind::Ekf).unwrap();
        for (a, b) in out.card.rho.iter().zip(&st.card.rho) {
            assert!((a - b).abs() < 1e-15);
        }
        for (a, b) in out.intensity.components.iter().zip(&st.intensity.components) {
            assert!((a.weight - b.weight).abs() < 1e-15);
        }
    }

    #[test]
    fn single_target_perfect_detection_is_kf_update() {
        let lm = scalar_model(1.0, 1.0, 0.5);
        let prior = Gaussian::scalar(1.0, 2.0);
        let st = CphdState { card: CardinalityPmf::delta(1, 3), intensity: GaussianMixture::single(prior.clone()) };
        let model = DetectionModel { p_d: 1.0, clutter_rate: 0.0, clutter_density: 0.01, sensor: &lm };
        let y = v1(1.7);
        let out = cphd_correct(&st, &[y.clone()], &model, &FilterKind::Ekf).unwrap();
        assert!((out.intensity.total_weight() - 1.0).abs() < 1e-6);
        let (kf, _) = kf_correct(&prior, &y, &lm).unwrap();
        let c = out.intensity.components.iter().find(|c| c.weight > 0.5).unwrap();
        assert!((c.density.mean[0] - kf.mean[0]).abs() < 1e-12 && (c.density.cov[(0, 0)] - kf.cov[(0, 0)]).abs() < 1e-12);
    }

    /// Exhaustive posterior by enumeration of detection/clutter partitions. Single-object
    /// integrals `int g(y|x) N_k(x) dx` come from quadrature, not from the Kalman identity.
    fn partition_oracle(card: &[f64], loc: &[(f64, f64, f64)], ys: &[f64], p_d: f64, lam: f64, cdens: f64, r: f64) -> (Vec<f64>, Vec<f64>, Vec<Vec<f64>>) {
        let (nodes, weights) = math::gauss_legendre(200, -40.0, 40.0);
        let npdf = |x: f64, m: f64, v: f64| (-(x - m) * (x - m) / (2.0 * v)).exp() / (2.0 * math::PI * v).sqrt();
        let wsum: f64 = loc.iter().map(|c| c.0).sum();
        let like: Vec<Vec<f64>> = loc
            .iter()
            .map(|&(_, m, v)| ys.iter().map(|&y| nodes.iter().zip(&weights).map(|(x, w)| w * npdf(y, *x, r) * npdf(*x, m, v)).sum()).collect())
            .collect();
        let s_like: Vec<f64> = (0..ys.len()).map(|z| loc.iter().zip(&like).map(|(c, l)| c.0 / wsum * l[z]).sum()).collect();
        // G(n, avail): every one of n objects missed or assigned to an available measurement, rest clutter.
        fn g(n: usize, avail: &mut Vec<bool>, s_like: &[f64], p_d: f64, lam: f64, cdens: f64) -> f64 {
            if n == 0 {
                let k = avail.iter().filter(|a| **a).count();
                return (-lam).exp() * (lam * cdens).powi(k as i32);
            }
            let mut acc = (1.0 - p_d) * g(n - 1, avail, s_like, p_d, lam, cdens);
            for z in 0..avail.len() {
                if avail[z] {
                    avail[z] = false;
                    acc += p_d * s_like[z] * g(n - 1, avail, s_like, p_d, lam, cdens);
                    avail[z] = true;
                }
            }
            acc
        }
        let m = ys.len();
        let all = |n: usize| g(n, &mut vec![true; m], &s_like, p_d, lam, cdens);
        let un: Vec<f64> = card.iter().enumerate().map(|(n, p)| p * all(n)).collect();
        let z: f64 = un.iter().sum();
        let rho: Vec<f64> = un.iter().map(|u| u / z).collect();
        let miss: Vec<f64> = loc
            .iter()
            .map(|c| (1..card.len()).map(|n| card[n] * n as f64 * (c.0 / wsum) * (1.0 - p_d) * all(n - 1)).sum::<f64>() / z)
            .collect();
        let det: Vec<Vec<f64>> = loc
            .iter()
            .enumerate()
            .map(|(k, c)| {
                (0..m)
                    .map(|zi| {
                        let mut avail = vec![true; m];
                        avail[zi] = false;
                        (1..card.len()).map(|n| card[n] * n as f64 * (c.0 / wsum) * p_d * like[k][zi] * g(n - 1, &mut avail, &s_like, p_d, lam, cdens)).sum::<f64>() / z
                    })
                    .collect()
            })
            .collect();
        (rho, miss, det)
    }

    #[test]
    fn correction_matches_partition_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for trial in 0..20 {
            let n_max = 1 + trial % 3;
            let raw: Vec<f64> = (0..=n_max).map(|_| rng.random_range(0.05..1.0)).collect();
            let s: f64 = raw.iter().sum();
            let card: Vec<f64> = raw.iter().map(|x| x / s).collect();
            let loc: Vec<(f64, f64, f64)> = (0..rng.random_range(1..3)).map(|_| (rng.random_range(0.2..1.0), rng.random_range(-5.0..5.0), rng.random_range(0.5..3.0))).collect();
            let ys: Vec<f64> = (0..rng.random_range(0..3)).map(|_| rng.random_range(-6.0..6.0)).collect();
            let (p_d, lam, cdens, r) = (rng.random_range(0.3..0.95), rng.random_range(0.0..2.0), 1.0 / 20.0, 0.8);
            let lm = scalar_model(1.0, 1.0, r);
            let mean_card: f64 = card.iter().enumerate().map(|(n, p)| n as f64 * p).sum();
            let wsum: f64 = loc.iter().map(|c| c.0).sum();
            let st = CphdState { card: CardinalityPmf::new(card.clone()).unwrap(), intensity: gm1(&loc.iter().map(|&(w, m, v)| (w / wsum * mean_card, m, v)).collect::<Vec<_>>()) };
            let model = DetectionModel { p_d, clutter_rate: lam, clutter_density: cdens, sensor: &lm };
            let y: Vec<DVector<f64>> = ys.iter().map(|v| v1(*v)).collect();
            let out = cphd_correct(&st, &y, &model, &FilterKind::Ekf).unwrap();
            let (rho, miss, det) = partition_oracle(&card, &loc, &ys, p_d, lam, cdens, r);
            for (a, b) in out.card.rho.iter().zip(&rho) {
                assert!((a - b).abs() < 1e-4, "trial {trial}: {:?} vs {rho:?}", out.card.rho);
            }
            let k = loc.len();
            for j in 0..k {
                assert!((out.intensity.components[j].weight - miss[j]).abs() < 1e-4);
                for z in 0..ys.len() {
                    assert!((out.intensity.components[k + z * k + j].weight - det[j][z]).abs() < 1e-4);
                }
            }
        }
    }

    #[test]
    fn poisson_cardinality_reduces_to_phd() {
        let lm = scalar_model(1.0, 1.0, 0.7);
        let d = gm1(&[(1.2, -2.0, 1.5), (0.8, 3.0, 0.6)]);
        let n_max = 60;
        let st = CphdState { card: CardinalityPmf::poisson(d.total_weight(), n_max), intensity: d.clone() };
        let (p_d, lam, cd) = (0.8, 3.0, 1.0 / 30.0);
        let model = DetectionModel { p_d, clutter_rate: lam, clutter_density: cd, sensor: &lm };
        let ys = [v1(-1.5), v1(2.5), v1(9.0)];
        let out = cphd_correct(&st, &ys, &model, &FilterKind::Ekf).unwrap();
        let k = d.len();
        for j in 0..k {
            assert!((out.intensity.components[j].weight - (1.0 - p_d) * d.components[j].weight).abs() < 1e-8);
        }
        for (z, y) in ys.iter().enumerate() {
            let q: Vec<f64> = d
                .components
                .iter()
                .map(|c| {
                    let s = c.density.cov[(0, 0)] + 0.7;
                    let e = y[0] - c.density.mean[0];
                    c.weight * p_d * (-(e * e) / (2.0 * s)).exp() / (2.0 * math::PI * s).sqrt()
                })
                .collect();
            let denom = lam * cd + q.iter().sum::<f64>();
            for j in 0..k {
                assert!((out.intensity.components[k + z * k + j].weight - q[j] / denom).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn correction_keeps_pmf_and_weights_valid() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let lm = scalar_model(1.0, 1.0, 1.0);
        for _ in 0..30 {
            let st = CphdState { card: CardinalityPmf::poisson(rng.random_range(0.5..5.0), 20), intensity: gm1(&[(1.0, rng.random_range(-5.0..5.0), 2.0), (2.0, 0.0, 1.0)]) };
            let ys: Vec<DVector<f64>> = (0..rng.random_range(0..12)).map(|_| v1(rng.random_range(-50.0..50.0))).collect();
            let model = DetectionModel { p_d: rng.random_range(0.5..1.0), clutter_rate: 5.0, clutter_density: 0.01, sensor: &lm };
            let out = cphd_correct(&st, &ys, &model, &FilterKind::Ekf).unwrap();
            assert!((out.card.rho.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(out.intensity.components.iter().all(|c| c.weight >= 0.0 && c.weight.is_finite()));
        }
    }

    #[test]
    fn extraction_examples() {
        let st = CphdState { card: CardinalityPmf::delta(0, 3), intensity: gm1(&[(1.0, 0.0, 1.0)]) };
        assert!(cphd_extract(&st, 0.5).is_empty());
        let st = CphdState { card: CardinalityPmf::delta(1, 3), intensity: gm1(&[(1.0, 4.0, 1.0)]) };
        assert_eq!(cphd_extract(&st, 0.5), vec![v1(4.0)]);
        let st = CphdState { card: CardinalityPmf::delta(2, 3), intensity: gm1(&[(0.6, 1.0, 1.0), (0.3, 2.0, 1.0), (0.1, 3.0, 1.0)]) };
        assert_eq!(cphd_extract(&st, 0.5), vec![v1(1.0), v1(2.0)]);
    }

    #[test]
    fn gci_fusion_examples() {
        let a = CphdState { card: CardinalityPmf::new(vec![0.1, 0.6, 0.3]).unwrap(), intensity: gm1(&[(1.2, 0.0, 1.0)]) };
        let f = cphd_gci_fuse(&[&a, &a], &[0.5, 0.5]).unwrap();
        for (x, y) in f.card.rho.iter().zip(&a.card.rho) {
            assert!((x - y).abs() < 1e-12);
        }
        assert!((f.intensity.components[0].density.mean[0]).abs() < 1e-12);
        assert!((f.intensity.components[0].density.cov[(0, 0)] - 1.0).abs() < 1e-12);

        let n_max = 40;
        let s1 = CphdState { card: CardinalityPmf::poisson(2.0, n_max), intensity: gm1(&[(2.0, 0.0, 1.0)]) };
        let s2 = CphdState { card: CardinalityPmf::poisson(4.0, n_max), intensity: gm1(&[(4.0, 0.0, 1.0)]) };
        let f = cphd_gci_fuse(&[&s1, &s2], &[0.5, 0.5]).unwrap();
        let expect = CardinalityPmf::poisson(8f64.sqrt(), n_max);
        for (x, y) in f.card.rho.iter().zip(&expect.rho) {
            assert!((x - y).abs() < 1e-9);
        }
        assert!((f.card.rho.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    fn toy_motion(lm: &LinearModel) -> CphdMotion<'_> {
        CphdMotion { p_s: 0.99, birth_card: CardinalityPmf::poisson(0.1, 10), birth: gm1(&[(0.05, -10.0, 4.0), (0.05, 10.0, 4.0)]), dynamics: lm, filter: FilterKind::Ekf }
    }

    #[test]
    fn single_node_cgm_is_centralized() {
        let lm = scalar_model(1.0, 0.05, 0.5);
        let motion = toy_motion(&lm);
        let sensor = DetectionModel { p_d: 0.9, clutter_rate: 1.0, clutter_density: 1.0 / 40.0, sensor: &lm };
        let g = NetworkGraph::new(vec![NodeRole::Sensor], &[]).unwrap();
        let w = metropolis_weights(&g);
        let params = CphdParams::default();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut a = vec![CphdState::empty(10)];
        let mut b = CphdState::empty(10);
        for _ in 0..15 {
            let ys: Vec<DVector<f64>> = vec![v1(-10.0 + rng.random_range(-1.0..1.0)), v1(rng.random_range(-20.0..20.0))];
            let (na, ea) = cgm_cphd_step(&a, &motion, &[Some(DetectionModel { ..sensor })], &[ys.clone()], &g, &w, 3, &params).unwrap();
            let (nb, eb) = gm_cphd_step(&b, &motion, &[(&ys, &sensor)], &params).unwrap();
            assert_eq!(na[0], nb);
            assert_eq!(ea[0], eb);
            a = na;
            b = nb;
        }
    }

    #[test]
    fn identical_nodes_stay_identical() {
        let lm = scalar_model(1.0, 0.05, 0.5);
        let motion = toy_motion(&lm);
        let mk = || Some(DetectionModel { p_d: 0.9, clutter_rate: 1.0, clutter_density: 1.0 / 40.0, sensor: &lm });
        let g = NetworkGraph::ring(vec![NodeRole::Sensor; 3]);
        let w = ConsensusWeights::new(DMatrix::from_element(3, 3, 1.0 / 3.0), &g).unwrap();
        let mut st = vec![CphdState::empty(10); 3];
        for k in 0..6 {
            let ys = vec![v1(-10.0 + 0.1 * k as f64), v1(3.0)];
            let (n, e) = cgm_cphd_step(&st, &motion, &[mk(), mk(), mk()], &[ys.clone(), ys.clone(), ys.clone()], &g, &w, 2, &CphdParams::default()).unwrap();
            for i in 1..3 {
                assert_eq!(n[i], n[0]);
                assert_eq!(e[i].len(), e[0].len());
            }
            st = n;
        }
    }

    #[test]
    fn merge_and_prune_do_not_create_mass() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..50 {
            let n = rng.random_range(1..40);
            let parts: Vec<(f64, f64, f64)> = (0..n).map(|_| (rng.random_range(0.0..1.0), rng.random_range(-10.0..10.0), rng.random_range(0.1..4.0))).collect();
            let gm = gm1(&parts);
            let cap = rng.random_range(1..30);
            let merged = gaussian::merge(&gm, 4.0).unwrap();
            let pruned = gaussian::prune(&merged, cap).unwrap();
            let dropped = merged.total_weight() - pruned.total_weight();
            assert!(dropped >= -1e-12);
            assert!(pruned.total_weight() <= gm.total_weight() + 1e-12);
            assert!((merged.total_weight() - gm.total_weight()).abs() < 1e-12);
        }
    }
}
