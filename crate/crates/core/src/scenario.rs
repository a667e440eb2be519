//! Ground truth and measurement simulation: CV/CT motion, TOA/DOA/radar sensors, clutter and birth.

use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Normal, Poisson};

use crate::error::{Error, Result};
use crate::gaussian::{Gaussian, GaussianMixture, GmComponent};
use crate::kalman::{Dynamics, Sensor};
use crate::labeled::{Label, LabeledState};
use crate::math;
use crate::rfs;

/// State layout `[x, vx, y, vy]`.
pub const STATE_DIM: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MotionKind {
    Ncv,
    Dwna,
    /// Coordinated turn at `omega` rad/s.
    Ct { omega: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MotionModel {
    pub kind: MotionKind,
    pub ts: f64,
    pub sigma_w: f64,
}

impl MotionModel {
    pub fn new(kind: MotionKind, ts: f64, sigma_w: f64) -> Result<Self> {
        if !(ts > 0.0) {
            return Err(Error::InvalidParameter("sampling interval must be positive"));
        }
        if !(sigma_w >= 0.0) {
            return Err(Error::InvalidParameter("process noise std"));
        }
        Ok(Self { kind, ts, sigma_w })
    }

    pub fn transition(&self) -> DMatrix<f64> {
        let t = self.ts;
        let omega = match self.kind {
            MotionKind::Ct { omega } => omega,
            _ => 0.0,
        };
        let (s, c) = if math::abs(omega) < 1e-12 {
            (t, 0.0)
        } else {
            let wt = omega * t;
            let h = math::sin(wt / 2.0);
            (math::sin(wt) / omega, 2.0 * h * h / omega)
        };
        let (sw, cw) = if omega == 0.0 { (0.0, 1.0) } else { (math::sin(omega * t), math::cos(omega * t)) };
        DMatrix::from_row_slice(4, 4, &[1.0, s, 0.0, -c, 0.0, cw, 0.0, -sw, 0.0, c, 1.0, s, 0.0, sw, 0.0, cw])
    }

    pub fn noise(&self) -> DMatrix<f64> {
        let t = self.ts;
        let (a, b, d) = (t * t * t * t / 4.0, t * t * t / 2.0, t * t);
        DMatrix::from_row_slice(4, 4, &[a, b, 0.0, 0.0, b, d, 0.0, 0.0, 0.0, 0.0, a, b, 0.0, 0.0, b, d]) * (self.sigma_w * self.sigma_w)
    }

    pub fn dynamics(&self) -> LinearDynamics {
        LinearDynamics { a: self.transition(), q: self.noise() }
    }
}

/// `x_k = A x_{k-1} + w`, `w ~ N(0, Q)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearDynamics {
    pub a: DMatrix<f64>,
    pub q: DMatrix<f64>,
}

impl Dynamics for LinearDynamics {
    fn f(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.a * x
    }
    fn q(&self) -> &DMatrix<f64> {
        &self.q
    }
    fn jacobian(&self, _x: &DVector<f64>) -> Option<DMatrix<f64>> {
        Some(self.a.clone())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SensorKind {
    /// Range only.
    Toa,
    /// Bearing only, wrapped to (-pi, pi].
    Doa,
    /// `[bearing, range]`.
    Radar,
}

/// A sensor at a known position. Noise stds are in meters and radians.
#[derive(Debug, Clone, PartialEq)]
pub struct SensorModel {
    pub kind: SensorKind,
    pub position: [f64; 2],
    pub sigma: Vec<f64>,
    pub p_d: f64,
    pub clutter_rate: f64,
    /// Observation interval per measurement component; clutter is uniform over it.
    pub region: Vec<(f64, f64)>,
    r: DMatrix<f64>,
}

impl SensorModel {
    pub fn new(kind: SensorKind, position: [f64; 2], sigma: Vec<f64>, p_d: f64, clutter_rate: f64, region: Vec<(f64, f64)>) -> Result<Self> {
        let dim = match kind {
            SensorKind::Toa | SensorKind::Doa => 1,
            SensorKind::Radar => 2,
        };
        if sigma.len() != dim || region.len() != dim {
            return Err(Error::Dimension("sensor noise or region"));
        }
        if sigma.iter().any(|s| !(*s > 0.0)) {
            return Err(Error::InvalidParameter("sensor noise std must be positive"));
        }
        if !(0.0..=1.0).contains(&p_d) {
            return Err(Error::InvalidParameter("detection probability"));
        }
        if !(clutter_rate >= 0.0) {
            return Err(Error::InvalidParameter("clutter rate"));
        }
        if region.iter().any(|(a, b)| !(b > a)) {
            return Err(Error::InvalidParameter("observation region"));
        }
        let r = DMatrix::from_diagonal(&DVector::from_iterator(dim, sigma.iter().map(|s| s * s)));
        Ok(Self { kind, position, sigma, p_d, clutter_rate, region, r })
    }

    pub fn toa(position: [f64; 2], sigma_m: f64, p_d: f64, clutter_rate: f64, max_range: f64) -> Result<Self> {
        Self::new(SensorKind::Toa, position, alloc::vec![sigma_m], p_d, clutter_rate, alloc::vec![(0.0, max_range)])
    }

    pub fn doa(position: [f64; 2], sigma_deg: f64, p_d: f64, clutter_rate: f64) -> Result<Self> {
        Self::new(SensorKind::Doa, position, alloc::vec![sigma_deg.to_radians()], p_d, clutter_rate, alloc::vec![(-math::PI, math::PI)])
    }

    pub fn radar(position: [f64; 2], sigma_deg: f64, sigma_m: f64, p_d: f64, clutter_rate: f64, max_range: f64) -> Result<Self> {
        Self::new(SensorKind::Radar, position, alloc::vec![sigma_deg.to_radians(), sigma_m], p_d, clutter_rate, alloc::vec![(-math::PI, math::PI), (0.0, max_range)])
    }

    pub fn dim(&self) -> usize {
        self.sigma.len()
    }

    /// Uniform clutter density `1 / volume` of the observation region.
    pub fn clutter_density(&self) -> f64 {
        1.0 / self.region.iter().map(|(a, b)| b - a).product::<f64>()
    }

    pub fn detection_model(&self) -> rfs::DetectionModel<'_> {
        rfs::DetectionModel { p_d: self.p_d, clutter_rate: self.clutter_rate, clutter_density: self.clutter_density(), sensor: self }
    }

    fn is_angle(&self, i: usize) -> bool {
        matches!((self.kind, i), (SensorKind::Doa, 0) | (SensorKind::Radar, 0))
    }

    fn wrap(&self, mut y: DVector<f64>) -> DVector<f64> {
        for i in 0..y.len() {
            if self.is_angle(i) {
                y[i] = math::wrap_angle(y[i]);
            }
        }
        y
    }
}

impl Sensor for SensorModel {
    fn h(&self, x: &DVector<f64>) -> DVector<f64> {
        let (dx, dy) = (x[0] - self.position[0], x[2] - self.position[1]);
        let bearing = math::atan2(dy, dx);
        let range = math::sqrt(dx * dx + dy * dy);
        match self.kind {
            SensorKind::Toa => DVector::from_element(1, range),
            SensorKind::Doa => DVector::from_element(1, bearing),
            SensorKind::Radar => DVector::from_vec(alloc::vec![bearing, range]),
        }
    }

    fn r(&self) -> &DMatrix<f64> {
        &self.r
    }

    fn jacobian(&self, x: &DVector<f64>) -> Option<DMatrix<f64>> {
        let (dx, dy) = (x[0] - self.position[0], x[2] - self.position[1]);
        let r2 = dx * dx + dy * dy;
        if r2 == 0.0 {
            return None;
        }
        let r = math::sqrt(r2);
        let bearing = [-dy / r2, 0.0, dx / r2, 0.0];
        let range = [dx / r, 0.0, dy / r, 0.0];
        Some(match self.kind {
            SensorKind::Toa => DMatrix::from_row_slice(1, 4, &range),
            SensorKind::Doa => DMatrix::from_row_slice(1, 4, &bearing),
            SensorKind::Radar => DMatrix::from_row_slice(2, 4, &[bearing, range].concat()),
        })
    }

    fn residual(&self, y: &DVector<f64>, y_hat: &DVector<f64>) -> DVector<f64> {
        self.wrap(y - y_hat)
    }
}

/// Scripted object: alive on steps `birth_step..death_step`, with the motion model switching
/// at the listed steps.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub id: u32,
    pub birth_step: usize,
    pub death_step: usize,
    pub initial: DVector<f64>,
    /// `(first step, model)`, sorted by step; the first entry must start at or before birth.
    pub segments: Vec<(usize, MotionModel)>,
}

impl Trajectory {
    pub fn label(&self) -> Label {
        Label::new(self.birth_step as u32, self.id)
    }

    fn model_at(&self, k: usize) -> Option<&MotionModel> {
        self.segments.iter().rev().find(|(s, _)| *s <= k).map(|(_, m)| m)
    }

    fn validate(&self) -> Result<()> {
        if self.initial.len() != STATE_DIM {
            return Err(Error::Dimension("trajectory initial state"));
        }
        if self.death_step < self.birth_step {
            return Err(Error::InvalidParameter("trajectory death before birth"));
        }
        if self.segments.is_empty() || self.segments[0].0 > self.birth_step || self.segments.windows(2).any(|w| w[0].0 > w[1].0) {
            return Err(Error::InvalidParameter("trajectory motion segments"));
        }
        Ok(())
    }
}

fn sample_noise<R: Rng + ?Sized>(q: &DMatrix<f64>, rng: &mut R) -> Result<DVector<f64>> {
    if q.iter().all(|v| *v == 0.0) {
        return Ok(DVector::zeros(q.nrows()));
    }
    let g = Gaussian { mean: DVector::zeros(q.nrows()), cov: q.clone() };
    rfs::sample_gaussian(&g, rng)
}

/// Labeled truth set per step for `steps` steps.
pub fn simulate_truth<R: Rng + ?Sized>(trajectories: &[Trajectory], steps: usize, rng: &mut R) -> Result<Vec<Vec<LabeledState>>> {
    let mut out: Vec<Vec<LabeledState>> = (0..steps).map(|_| Vec::new()).collect();
    for (i, t) in trajectories.iter().enumerate() {
        t.validate()?;
        if trajectories[..i].iter().any(|o| o.label() == t.label()) {
            return Err(Error::LabelCollision);
        }
        let mut x = t.initial.clone();
        for k in t.birth_step..t.death_step.min(steps) {
            if k > t.birth_step {
                let m = t.model_at(k).ok_or(Error::InvalidParameter("trajectory motion segments"))?;
                x = m.transition() * &x + sample_noise(&m.noise(), rng)?;
            }
            out[k].push((t.label(), x.clone()));
        }
    }
    Ok(out)
}

/// One scan per sensor: each object detected with probability `P_D` through the noisy
/// measurement function, plus Poisson clutter uniform over the sensor region.
pub fn simulate_measurements<R: Rng + ?Sized>(truth: &[DVector<f64>], sensors: &[SensorModel], rng: &mut R) -> Result<Vec<Vec<DVector<f64>>>> {
    let mut out = Vec::with_capacity(sensors.len());
    for s in sensors {
        let mut scan = Vec::new();
        let normals: Vec<Normal<f64>> = s.sigma.iter().map(|&sd| Normal::new(0.0, sd).map_err(|_| Error::InvalidParameter("sensor noise std"))).collect::<Result<_>>()?;
        for x in truth {
            if rng.random::<f64>() < s.p_d {
                let mut y = s.h(x);
                for (i, n) in normals.iter().enumerate() {
                    y[i] += n.sample(rng);
                }
                scan.push(s.wrap(y));
            }
        }
        let n_clutter = if s.clutter_rate > 0.0 {
            Poisson::new(s.clutter_rate).map_err(|_| Error::InvalidParameter("clutter rate"))?.sample(rng) as usize
        } else {
            0
        };
        for _ in 0..n_clutter {
            let y = DVector::from_iterator(s.dim(), s.region.iter().map(|(a, b)| a + (b - a) * rng.random::<f64>()));
            scan.push(s.wrap(y));
        }
        out.push(scan);
    }
    Ok(out)
}

/// Rectangle `[x_min, x_max] x [y_min, y_max]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Area {
    pub x: (f64, f64),
    pub y: (f64, f64),
}

impl Area {
    /// `n` points evenly spaced along the perimeter, starting at the lower-left corner.
    pub fn border_points(&self, n: usize) -> Vec<[f64; 2]> {
        let (w, h) = (self.x.1 - self.x.0, self.y.1 - self.y.0);
        let per = 2.0 * (w + h);
        (0..n)
            .map(|i| {
                let mut s = per * i as f64 / n as f64;
                if s < w {
                    return [self.x.0 + s, self.y.0];
                }
                s -= w;
                if s < h {
                    return [self.x.1, self.y.0 + s];
                }
                s -= h;
                if s < w {
                    return [self.x.1 - s, self.y.1];
                }
                s -= w;
                [self.x.0, self.y.1 - s]
            })
            .collect()
    }

    pub fn diagonal(&self) -> f64 {
        let (w, h) = (self.x.1 - self.x.0, self.y.1 - self.y.0);
        math::sqrt(w * w + h * h)
    }
}

/// Zero-velocity Gaussian at each point with covariance `diag(cov)`.
pub fn birth_components(points: &[[f64; 2]], cov: [f64; 4]) -> Vec<Gaussian> {
    let p = DMatrix::from_diagonal(&DVector::from_row_slice(&cov));
    points.iter().map(|q| Gaussian { mean: DVector::from_vec(alloc::vec![q[0], 0.0, q[1], 0.0]), cov: p.clone() }).collect()
}

/// Birth PHD with weight `alpha` per component.
pub fn birth_intensity(points: &[[f64; 2]], cov: [f64; 4], alpha: f64) -> GaussianMixture {
    GaussianMixture::new(birth_components(points, cov).into_iter().map(|g| GmComponent { weight: alpha, density: g }).collect())
}

/// LMB birth parameters `(r, p)` with one single-component track per point.
pub fn birth_lmb_components(points: &[[f64; 2]], cov: [f64; 4], r: f64) -> Vec<(f64, GaussianMixture)> {
    birth_components(points, cov).into_iter().map(|g| (r, GaussianMixture::single(g))).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn x0() -> DVector<f64> {
        DVector::from_vec(vec![100.0, 10.0, -50.0, 5.0])
    }

    #[test]
    fn zero_objects_give_empty_sets() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let t = simulate_truth(&[], 10, &mut rng).unwrap();
        assert_eq!(t.len(), 10);
        assert!(t.iter().all(|s| s.is_empty()));
    }

    #[test]
    fn noise_free_cv_is_a_straight_line() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let m = MotionModel::new(MotionKind::Ncv, 5.0, 0.0).unwrap();
        let tr = Trajectory { id: 1, birth_step: 2, death_step: 8, initial: x0(), segments: vec![(0, m)] };
        let t = simulate_truth(&[tr], 10, &mut rng).unwrap();
        assert!(t[0].is_empty() && t[1].is_empty() && t[8].is_empty());
        for k in 2..8 {
            let dt = 5.0 * (k - 2) as f64;
            let x = &t[k][0].1;
            assert!((x[0] - (100.0 + 10.0 * dt)).abs() < 1e-9 && (x[2] - (-50.0 + 5.0 * dt)).abs() < 1e-9);
            assert_eq!(t[k][0].0, Label::new(2, 1));
        }
    }

    #[test]
    fn ct_limit_is_dwna() {
        let d = MotionModel::new(MotionKind::Dwna, 5.0, 1.0).unwrap().transition();
        for w in [1e-11, -1e-11, 0.0] {
            let c = MotionModel::new(MotionKind::Ct { omega: w }, 5.0, 1.0).unwrap().transition();
            assert!((c - &d).abs().max() < 1e-9);
        }
        let c = MotionModel::new(MotionKind::Ct { omega: 0.3 }, 2.0, 1.0).unwrap().transition();
        let speed = |v: &DVector<f64>| (v[1] * v[1] + v[3] * v[3]).sqrt();
        let v = DVector::from_vec(vec![0.0, 3.0, 0.0, 4.0]);
        assert!((speed(&(&c * &v)) - 5.0).abs() < 1e-12);
    }

    #[test]
    fn noiseless_measurements_equal_h() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let sensors = vec![
            SensorModel::new(SensorKind::Toa, [0.0, 0.0], vec![1e-12], 1.0, 0.0, vec![(0.0, 1e5)]).unwrap(),
            SensorModel::new(SensorKind::Doa, [10.0, 10.0], vec![1e-12], 1.0, 0.0, vec![(-math::PI, math::PI)]).unwrap(),
            SensorModel::new(SensorKind::Radar, [-5.0, 3.0], vec![1e-12, 1e-12], 1.0, 0.0, vec![(-math::PI, math::PI), (0.0, 1e5)]).unwrap(),
        ];
        let truth = vec![x0(), DVector::from_vec(vec![-300.0, 0.0, 20.0, 0.0])];
        let scans = simulate_measurements(&truth, &sensors, &mut rng).unwrap();
        for (s, scan) in sensors.iter().zip(&scans) {
            assert_eq!(scan.len(), 2);
            for (y, x) in scan.iter().zip(&truth) {
                assert!((y - s.h(x)).abs().max() < 1e-9);
            }
        }
    }

    #[test]
    fn clutter_count_is_poisson() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let s = SensorModel::doa([0.0, 0.0], 1.0, 1.0, 5.0).unwrap();
        let n = 10_000;
        let mut total = 0;
        for _ in 0..n {
            let scan = simulate_measurements(&[], core::slice::from_ref(&s), &mut rng).unwrap();
            total += scan[0].len();
            assert!(scan[0].iter().all(|y| y[0] > -math::PI && y[0] <= math::PI));
        }
        assert!((total as f64 / n as f64 - 5.0).abs() < 0.1);
    }

    #[test]
    fn doa_wraps_near_pi() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s = SensorModel::doa([0.0, 0.0], 5.0, 1.0, 0.0).unwrap();
        let x = DVector::from_vec(vec![-1000.0, 0.0, 1e-3, 0.0]);
        for _ in 0..500 {
            let y = &simulate_measurements(core::slice::from_ref(&x), core::slice::from_ref(&s), &mut rng).unwrap()[0][0];
            assert!(y[0] > -math::PI && y[0] <= math::PI);
            assert!(s.residual(y, &s.h(&x))[0].abs() < 0.5);
        }
    }

    #[test]
    fn toa_noise_std() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let s = SensorModel::toa([0.0, 0.0], 100.0, 1.0, 0.0, 1e5).unwrap();
        let x = DVector::from_vec(vec![3000.0, 0.0, 4000.0, 0.0]);
        let n = 10_000;
        let errs: Vec<f64> = (0..n).map(|_| simulate_measurements(core::slice::from_ref(&x), core::slice::from_ref(&s), &mut rng).unwrap()[0][0][0] - 5000.0).collect();
        let mean = errs.iter().sum::<f64>() / n as f64;
        let sd = (errs.iter().map(|e| (e - mean) * (e - mean)).sum::<f64>() / (n - 1) as f64).sqrt();
        assert!((sd / 100.0 - 1.0).abs() < 0.03);
    }

    #[test]
    fn same_seed_same_stream() {
        let sensors = vec![SensorModel::toa([0.0, 0.0], 100.0, 0.9, 3.0, 1e5).unwrap(), SensorModel::doa([1e3, 0.0], 1.0, 0.9, 3.0).unwrap()];
        let m = MotionModel::new(MotionKind::Ncv, 5.0, 2.0).unwrap();
        let tr = vec![Trajectory { id: 0, birth_step: 0, death_step: 20, initial: x0(), segments: vec![(0, m)] }];
        let run = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let truth = simulate_truth(&tr, 20, &mut rng).unwrap();
            truth.iter().map(|t| simulate_measurements(&t.iter().map(|s| s.1.clone()).collect::<Vec<_>>(), &sensors, &mut rng).unwrap()).collect::<Vec<_>>()
        };
        let (a, b) = (run(7), run(7));
        for (x, y) in a.iter().flatten().flatten().zip(b.iter().flatten().flatten()) {
            assert_eq!(x.as_slice().iter().map(|v| v.to_bits()).collect::<Vec<_>>(), y.as_slice().iter().map(|v| v.to_bits()).collect::<Vec<_>>());
        }
    }

    #[test]
    fn analytic_jacobians_match_finite_differences() {
        let s = SensorModel::radar([100.0, -200.0], 1.0, 10.0, 0.9, 0.0, 1e5).unwrap();
        let x = DVector::from_vec(vec![1500.0, 3.0, 900.0, -2.0]);
        let j = s.jacobian(&x).unwrap();
        for c in 0..4 {
            let mut dx = x.clone();
            dx[c] += 1e-4;
            let fd = (s.h(&dx) - s.h(&x)) / 1e-4;
            for r in 0..2 {
                assert!((fd[r] - j[(r, c)]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn border_points_lie_on_perimeter() {
        let a = Area { x: (0.0, 50e3), y: (0.0, 50e3) };
        let pts = a.border_points(40);
        assert_eq!(pts.len(), 40);
        for p in &pts {
            let on = p[0] == 0.0 || p[0] == 50e3 || p[1] == 0.0 || p[1] == 50e3;
            assert!(on);
        }
        let gm = birth_intensity(&pts, [1e6, 1e4, 1e6, 1e4], 1.5e-3);
        assert!((gm.total_weight() - 0.06).abs() < 1e-12);
    }
}
