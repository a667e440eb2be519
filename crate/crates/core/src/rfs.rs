//! Unlabeled random finite sets: cardinality PMFs, samplers, set densities and set integrals.

use alloc::vec::Vec;

use nalgebra::DVector;
use rand::Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};

use crate::error::{Error, Result};
use crate::gaussian::{Gaussian, GaussianMixture};
use crate::kalman::Sensor;
use crate::math;

pub const DEFAULT_N_MAX: usize = 20;

/// Detection and clutter model of one sensor. Clutter is Poisson with rate `clutter_rate`
/// and uniform spatial density `clutter_density` over the observation space.
#[derive(Clone, Copy)]
pub struct DetectionModel<'a> {
    pub p_d: f64,
    pub clutter_rate: f64,
    pub clutter_density: f64,
    pub sensor: &'a dyn Sensor,
}

impl DetectionModel<'_> {
    /// `kappa(y)`, constant over the observation space.
    pub fn clutter_intensity(&self) -> f64 {
        self.clutter_rate * self.clutter_density
    }
}

/// Distribution of the number of objects on `{0, ..., n_max}`.
#[derive(Debug, Clone, PartialEq)]
pub struct CardinalityPmf {
    pub rho: Vec<f64>,
}

impl CardinalityPmf {
    pub fn new(rho: Vec<f64>) -> Result<Self> {
        if rho.is_empty() {
            return Err(Error::Empty("cardinality PMF"));
        }
        if rho.iter().any(|p| !(*p >= 0.0)) || math::abs(rho.iter().sum::<f64>() - 1.0) > 1e-9 {
            return Err(Error::InvalidParameter("cardinality PMF must be nonnegative and sum to one"));
        }
        Ok(Self { rho })
    }

    /// Normalises arbitrary nonnegative masses.
    pub fn from_unnormalized(mass: Vec<f64>) -> Result<Self> {
        let s: f64 = mass.iter().sum();
        if !(s > 0.0) || !s.is_finite() {
            return Err(Error::Degenerate("cardinality PMF with zero mass"));
        }
        Ok(Self { rho: mass.into_iter().map(|m| m / s).collect() })
    }

    pub fn delta(n: usize, n_max: usize) -> Self {
        let mut rho = alloc::vec![0.0; n_max + 1];
        rho[n] = 1.0;
        Self { rho }
    }

    /// Poisson PMF truncated at `n_max` and renormalised.
    pub fn poisson(mean: f64, n_max: usize) -> Self {
        if mean <= 0.0 {
            return Self::delta(0, n_max);
        }
        let logs: Vec<f64> = (0..=n_max).map(|n| n as f64 * math::ln(mean) - mean - math::ln_factorial(n)).collect();
        let lse = math::log_sum_exp(&logs);
        Self { rho: logs.iter().map(|l| math::exp(l - lse)).collect() }
    }

    pub fn n_max(&self) -> usize {
        self.rho.len() - 1
    }

    pub fn mean(&self) -> f64 {
        self.rho.iter().enumerate().map(|(n, p)| n as f64 * p).sum()
    }

    pub fn variance(&self) -> f64 {
        let m = self.mean();
        self.rho.iter().enumerate().map(|(n, p)| (n as f64 - m) * (n as f64 - m) * p).sum()
    }

    /// MAP cardinality, ties to the smaller count.
    pub fn map_estimate(&self) -> usize {
        let mut best = 0;
        for (n, p) in self.rho.iter().enumerate() {
            if *p > self.rho[best] {
                best = n;
            }
        }
        best
    }

    pub fn get(&self, n: usize) -> f64 {
        self.rho.get(n).copied().unwrap_or(0.0)
    }
}

/// Exact Poisson-binomial PMF of a multi-Bernoulli RFS.
pub fn multi_bernoulli_cardinality(r: &[f64]) -> Result<CardinalityPmf> {
    let mut rho = alloc::vec![1.0];
    for &ri in r {
        if !(0.0..=1.0).contains(&ri) {
            return Err(Error::InvalidParameter("existence probability outside [0, 1]"));
        }
        let mut next = alloc::vec![0.0; rho.len() + 1];
        for (n, p) in rho.iter().enumerate() {
            next[n] += p * (1.0 - ri);
            next[n + 1] += p * ri;
        }
        rho = next;
    }
    Ok(CardinalityPmf { rho })
}

/// I.i.d. cluster process: cardinality PMF plus PHD `d(x)`, location density `s = d / D`.
#[derive(Debug, Clone, PartialEq)]
pub struct IidClusterDensity {
    pub card: CardinalityPmf,
    pub intensity: GaussianMixture,
}

impl IidClusterDensity {
    /// Mean cardinality equals the intensity mass.
    pub fn is_consistent(&self, tol: f64) -> bool {
        math::abs(self.card.mean() - self.intensity.total_weight()) <= tol
    }

    pub fn location(&self) -> GaussianMixture {
        self.intensity.normalized()
    }
}

pub fn sample_gaussian<R: Rng + ?Sized>(g: &Gaussian, rng: &mut R) -> Result<DVector<f64>> {
    let l = math::cholesky(&g.cov)?.unpack();
    let z = DVector::from_fn(g.dim(), |_, _| StandardNormal.sample(rng));
    Ok(&g.mean + l * z)
}

/// One draw from a (not necessarily normalised) Gaussian mixture.
pub fn sample_gm<R: Rng + ?Sized>(gm: &GaussianMixture, rng: &mut R) -> Result<DVector<f64>> {
    let total = gm.total_weight();
    if gm.is_empty() || !(total > 0.0) {
        return Err(Error::Empty("mixture with no mass"));
    }
    let mut u = rng.random::<f64>() * total;
    for c in &gm.components {
        if u < c.weight {
            return sample_gaussian(&c.density, rng);
        }
        u -= c.weight;
    }
    let last = gm.components.iter().rev().find(|c| c.weight > 0.0).expect("positive mass");
    sample_gaussian(&last.density, rng)
}

fn sample_poisson_count<R: Rng + ?Sized>(mean: f64, rng: &mut R) -> Result<usize> {
    if mean <= 0.0 {
        return Ok(0);
    }
    let p = Poisson::new(mean).map_err(|_| Error::InvalidParameter("Poisson mean"))?;
    Ok(p.sample(rng) as usize)
}

pub fn sample_poisson_rfs<R: Rng + ?Sized>(intensity: &GaussianMixture, rng: &mut R) -> Result<Vec<DVector<f64>>> {
    let n = sample_poisson_count(intensity.total_weight(), rng)?;
    (0..n).map(|_| sample_gm(intensity, rng)).collect()
}

pub fn sample_cardinality<R: Rng + ?Sized>(card: &CardinalityPmf, rng: &mut R) -> usize {
    let mut u = rng.random::<f64>();
    for (n, p) in card.rho.iter().enumerate() {
        if u < *p {
            return n;
        }
        u -= p;
    }
    card.rho.iter().rposition(|p| *p > 0.0).unwrap_or(0)
}

pub fn sample_iid_cluster<R: Rng + ?Sized>(d: &IidClusterDensity, rng: &mut R) -> Result<Vec<DVector<f64>>> {
    let n = sample_cardinality(&d.card, rng);
    (0..n).map(|_| sample_gm(&d.intensity, rng)).collect()
}

pub fn sample_bernoulli<R: Rng + ?Sized>(r: f64, density: &GaussianMixture, rng: &mut R) -> Result<Vec<DVector<f64>>> {
    if !(0.0..=1.0).contains(&r) {
        return Err(Error::InvalidParameter("existence probability outside [0, 1]"));
    }
    if rng.random::<f64>() < r {
        Ok(alloc::vec![sample_gm(density, rng)?])
    } else {
        Ok(Vec::new())
    }
}

pub fn sample_multi_bernoulli<R: Rng + ?Sized>(components: &[(f64, GaussianMixture)], rng: &mut R) -> Result<Vec<DVector<f64>>> {
    let mut out = Vec::new();
    for (r, p) in components {
        out.extend(sample_bernoulli(*r, p, rng)?);
    }
    Ok(out)
}

/// `f(X) = e^{-D} prod d(x)`.
pub fn poisson_density(x: &[DVector<f64>], intensity: &GaussianMixture) -> Result<f64> {
    let mut v = math::exp(-intensity.total_weight());
    for xi in x {
        v *= intensity.eval(xi)?;
    }
    Ok(v)
}

/// `f(X) = |X|! rho(|X|) prod s(x)`.
pub fn iid_cluster_density(x: &[DVector<f64>], d: &IidClusterDensity) -> Result<f64> {
    let s = d.location();
    let mut v = math::exp(math::ln_factorial(x.len())) * d.card.get(x.len());
    for xi in x {
        v *= s.eval(xi)?;
    }
    Ok(v)
}

/// Multi-Bernoulli density: sum over injective assignments of points to components.
pub fn multi_bernoulli_density(x: &[DVector<f64>], components: &[(f64, GaussianMixture)]) -> Result<f64> {
    if x.len() > components.len() {
        return Ok(0.0);
    }
    let mut lik = alloc::vec![alloc::vec![0.0; components.len()]; x.len()];
    for (i, xi) in x.iter().enumerate() {
        for (j, (_, p)) in components.iter().enumerate() {
            lik[i][j] = p.eval(xi)?;
        }
    }
    fn rec(i: usize, used: &mut [bool], lik: &[Vec<f64>], comps: &[(f64, GaussianMixture)]) -> f64 {
        if i == lik.len() {
            return comps.iter().zip(used.iter()).map(|((r, _), u)| if *u { 1.0 } else { 1.0 - r }).product();
        }
        let mut acc = 0.0;
        for j in 0..comps.len() {
            if !used[j] {
                used[j] = true;
                acc += comps[j].0 * lik[i][j] * rec(i + 1, used, lik, comps);
                used[j] = false;
            }
        }
        acc
    }
    Ok(rec(0, &mut alloc::vec![false; components.len()], &lik, components))
}

/// Truncated set integral over a 1-D state space,
/// `sum_{n <= n_max} 1/n! int f({x_1..x_n}) dx_1..dx_n`, with each `dx` replaced by the rule
/// `(nodes, weights)`. `f` must be symmetric, so only sorted index tuples are visited.
pub fn set_integral_numeric(f: &dyn Fn(&[f64]) -> f64, n_max: usize, nodes: &[f64], weights: &[f64]) -> f64 {
    fn rec(
        f: &dyn Fn(&[f64]) -> f64,
        nodes: &[f64],
        weights: &[f64],
        start: usize,
        left: usize,
        pts: &mut Vec<f64>,
        w: f64,
        last: usize,
        run: usize,
    ) -> f64 {
        if left == 0 {
            return w * f(pts);
        }
        let mut acc = 0.0;
        for k in start..nodes.len() {
            let run_k = if pts.is_empty() || k != last { 1 } else { run + 1 };
            pts.push(nodes[k]);
            // 1/n! * n!/prod m! collapses to 1/prod m!: divide by the running multiplicity.
            acc += rec(f, nodes, weights, k, left - 1, pts, w * weights[k] / run_k as f64, k, run_k);
            pts.pop();
        }
        acc
    }
    (0..=n_max).map(|n| rec(f, nodes, weights, 0, n, &mut Vec::with_capacity(n), 1.0, usize::MAX, 0)).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gaussian::GmComponent;
    use alloc::vec;
    use nalgebra::DMatrix;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn gm1(parts: &[(f64, f64, f64)]) -> GaussianMixture {
        GaussianMixture::new(parts.iter().map(|&(w, m, v)| GmComponent::new(w, DVector::from_element(1, m), DMatrix::from_element(1, 1, v))).collect())
    }

    #[test]
    fn poisson_sampler() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!((0..100).all(|_| sample_poisson_rfs(&GaussianMixture::default(), &mut rng).unwrap().is_empty()));
        let d = gm1(&[(1.0, -50.0, 1.0), (3.0, 50.0, 1.0)]);
        let draws = 10_000;
        let (mut total, mut left) = (0usize, 0usize);
        for _ in 0..draws {
            let x = sample_poisson_rfs(&d, &mut rng).unwrap();
            total += x.len();
            left += x.iter().filter(|p| p[0] < 0.0).count();
        }
        assert!((total as f64 / draws as f64 - 4.0).abs() < 0.1);
        assert!((left as f64 / total as f64 - 0.25).abs() < 0.02);
    }

    #[test]
    fn poisson_count_matches_phd_within_three_sigma() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let d = gm1(&[(2.5, 0.0, 4.0)]);
        let draws = 4000;
        let n: usize = (0..draws).map(|_| sample_poisson_rfs(&d, &mut rng).unwrap().len()).sum();
        let se = (2.5f64 / draws as f64).sqrt();
        assert!((n as f64 / draws as f64 - 2.5).abs() < 3.0 * se);
    }

    #[test]
    fn bernoulli_samplers() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = gm1(&[(1.0, 0.0, 1.0)]);
        for _ in 0..100 {
            assert!(sample_bernoulli(0.0, &p, &mut rng).unwrap().is_empty());
            assert_eq!(sample_bernoulli(1.0, &p, &mut rng).unwrap().len(), 1);
        }
        assert!(sample_bernoulli(1.5, &p, &mut rng).is_err());
        let comps = vec![(0.5, p.clone()), (0.5, p.clone())];
        let mut hist = [0usize; 3];
        let draws = 10_000;
        for _ in 0..draws {
            hist[sample_multi_bernoulli(&comps, &mut rng).unwrap().len()] += 1;
        }
        for (h, e) in hist.iter().zip([0.25, 0.5, 0.25]) {
            assert!((*h as f64 / draws as f64 - e).abs() < 0.02);
        }
        let iid = IidClusterDensity { card: CardinalityPmf::delta(3, 5), intensity: p.scaled(3.0) };
        assert!((0..100).all(|_| sample_iid_cluster(&iid, &mut rng).unwrap().len() == 3));
    }

    #[test]
    fn multi_bernoulli_cardinality_examples() {
        assert_eq!(multi_bernoulli_cardinality(&[]).unwrap().rho, vec![1.0]);
        assert_eq!(multi_bernoulli_cardinality(&[0.5, 0.5]).unwrap().rho, vec![0.25, 0.5, 0.25]);
        let r = [0.1, 0.7, 0.33, 0.9, 0.05];
        let c = multi_bernoulli_cardinality(&r).unwrap();
        assert!((c.mean() - r.iter().sum::<f64>()).abs() < 1e-12);
        assert!(multi_bernoulli_cardinality(&[1.2]).is_err());
    }

    #[test]
    fn set_densities_integrate_to_one() {
        let (x, w) = math::gauss_hermite(10, 0.0, 1.0);
        let d = gm1(&[(1.0, 0.0, 1.0)]);
        let f = |pts: &[f64]| {
            let xs: Vec<DVector<f64>> = pts.iter().map(|p| DVector::from_element(1, *p)).collect();
            poisson_density(&xs, &d).unwrap()
        };
        assert!((set_integral_numeric(&f, 12, &x, &w) - 1.0).abs() < 1e-4);

        let iid = IidClusterDensity { card: CardinalityPmf::new(vec![0.1, 0.2, 0.4, 0.3]).unwrap(), intensity: d.scaled(1.9) };
        let f = |pts: &[f64]| {
            let xs: Vec<DVector<f64>> = pts.iter().map(|p| DVector::from_element(1, *p)).collect();
            iid_cluster_density(&xs, &iid).unwrap()
        };
        assert!((set_integral_numeric(&f, 3, &x, &w) - 1.0).abs() < 1e-4);

        let (x, w) = math::gauss_legendre(60, -12.0, 14.0);
        let comps = vec![(0.3, gm1(&[(1.0, -1.0, 2.0)])), (0.8, gm1(&[(0.4, 2.0, 0.5), (0.6, 3.0, 1.0)]))];
        let f = |pts: &[f64]| {
            let xs: Vec<DVector<f64>> = pts.iter().map(|p| DVector::from_element(1, *p)).collect();
            multi_bernoulli_density(&xs, &comps).unwrap()
        };
        assert!((set_integral_numeric(&f, 3, &x, &w) - 1.0).abs() < 1e-4);
    }

    #[test]
    fn poisson_density_is_iid_cluster_with_poisson_cardinality() {
        let d = gm1(&[(0.7, -1.0, 2.0), (1.1, 1.5, 0.5)]);
        let n_max = 60;
        let iid = IidClusterDensity { card: CardinalityPmf::poisson(d.total_weight(), n_max), intensity: d.clone() };
        let pts: Vec<DVector<f64>> = [-0.5, 0.2, 1.7, 2.2].iter().map(|p| DVector::from_element(1, *p)).collect();
        for n in 0..=4 {
            let a = poisson_density(&pts[..n], &d).unwrap();
            let b = iid_cluster_density(&pts[..n], &iid).unwrap();
            assert!((a - b).abs() < 1e-12, "{n}: {a} {b}");
        }
    }

    #[test]
    fn cardinality_helpers() {
        let p = CardinalityPmf::poisson(3.0, 40);
        assert!((p.mean() - 3.0).abs() < 1e-9 && (p.variance() - 3.0).abs() < 1e-9);
        assert_eq!(CardinalityPmf::new(vec![0.2, 0.5, 0.3]).unwrap().map_estimate(), 1);
        assert!(CardinalityPmf::new(vec![0.2, 0.5]).is_err());
    }
}
