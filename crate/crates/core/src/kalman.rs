//! Single-object Bayesian filters: KF, multi-sensor KF, EKF, unscented transform and UKF.

use alloc::boxed::Box;
use alloc::vec::Vec;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};
use crate::gaussian::Gaussian;
use crate::math::{self, cholesky, log_det_from_chol, LN_2PI};

/// State transition `x_k = f(x_{k-1}) + w`, `w ~ N(0, Q)`.
pub trait Dynamics {
    fn f(&self, x: &DVector<f64>) -> DVector<f64>;
    fn q(&self) -> &DMatrix<f64>;
    /// Analytic Jacobian of `f`, if available.
    fn jacobian(&self, _x: &DVector<f64>) -> Option<DMatrix<f64>> {
        None
    }
}

/// Measurement `y = h(x) + v`, `v ~ N(0, R)`.
pub trait Sensor {
    fn h(&self, x: &DVector<f64>) -> DVector<f64>;
    fn r(&self) -> &DMatrix<f64>;
    fn jacobian(&self, _x: &DVector<f64>) -> Option<DMatrix<f64>> {
        None
    }
    /// `y - y_hat`, wrapped where the measurement space is periodic.
    fn residual(&self, y: &DVector<f64>, y_hat: &DVector<f64>) -> DVector<f64> {
        y - y_hat
    }
}

/// `x_k = A x_{k-1} + w`, `y_k = C x_k + v`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    pub a: DMatrix<f64>,
    pub q: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub r: DMatrix<f64>,
}

impl LinearModel {
    pub fn new(a: DMatrix<f64>, q: DMatrix<f64>, c: DMatrix<f64>, r: DMatrix<f64>) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n || q.shape() != (n, n) || c.ncols() != n || r.shape() != (c.nrows(), c.nrows()) {
            return Err(Error::Dimension("linear model"));
        }
        Ok(Self { a, q, c, r })
    }
}

impl Dynamics for LinearModel {
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

impl Sensor for LinearModel {
    fn h(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.c * x
    }
    fn r(&self) -> &DMatrix<f64> {
        &self.r
    }
    fn jacobian(&self, _x: &DVector<f64>) -> Option<DMatrix<f64>> {
        Some(self.c.clone())
    }
}

/// Pair of borrowed dynamics and sensor models.
pub struct NonlinearModel<'a> {
    pub dynamics: &'a dyn Dynamics,
    pub sensor: &'a dyn Sensor,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UtParams {
    pub alpha: f64,
    pub beta: f64,
    pub kappa: f64,
}

impl Default for UtParams {
    fn default() -> Self {
        Self { alpha: 1.0, beta: 2.0, kappa: 2.0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UtWeights {
    pub wm: Vec<f64>,
    pub wc: Vec<f64>,
    /// Sigma-point spread, `alpha^2 (n + kappa)`.
    pub c: f64,
}

impl UtWeights {
    pub fn new(n: usize, p: &UtParams) -> Result<Self> {
        if !(p.alpha > 0.0) {
            return Err(Error::InvalidParameter("alpha_sigma must be positive"));
        }
        let nf = n as f64;
        let vs = p.alpha * p.alpha * (nf + p.kappa) - nf;
        if !(vs > -nf) {
            return Err(Error::InvalidParameter("unscented spread must exceed -n"));
        }
        let mut wm = alloc::vec![0.5 / (nf + vs); 2 * n + 1];
        let mut wc = wm.clone();
        wm[0] = vs / (nf + vs);
        wc[0] = vs / (nf + vs) + (1.0 - p.alpha * p.alpha + p.beta);
        Ok(Self { wm, wc, c: p.alpha * p.alpha * (nf + p.kappa) })
    }

    /// The centring matrix form `(I - [w_m ...]) diag(w_c) (I - [w_m ...])^T`.
    pub fn covariance_matrix(&self) -> DMatrix<f64> {
        let k = self.wm.len();
        let wm = DVector::from_column_slice(&self.wm);
        let centre = DMatrix::identity(k, k) - DMatrix::from_fn(k, k, |i, _| wm[i]);
        &centre * DMatrix::from_diagonal(&DVector::from_column_slice(&self.wc)) * centre.transpose()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UtOutput {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    /// Cross-covariance between the input and transformed variables.
    pub cross: DMatrix<f64>,
}

pub fn sigma_points(m: &DVector<f64>, p: &DMatrix<f64>, w: &UtWeights) -> Result<Vec<DVector<f64>>> {
    let n = m.len();
    if p.shape() != (n, n) {
        return Err(Error::Dimension("mean and covariance"));
    }
    let l = cholesky(p)?.unpack() * math::sqrt(w.c);
    let mut pts = Vec::with_capacity(2 * n + 1);
    pts.push(m.clone());
    for i in 0..n {
        pts.push(m + l.column(i));
    }
    for i in 0..n {
        pts.push(m - l.column(i));
    }
    Ok(pts)
}

pub fn unscented_transform(m: &DVector<f64>, p: &DMatrix<f64>, g: &dyn Fn(&DVector<f64>) -> DVector<f64>, params: &UtParams) -> Result<UtOutput> {
    unscented_transform_with(m, p, g, &|a, b| a - b, params)
}

/// Unscented transform whose output differences are taken with `residual`
/// (relative to the central sigma point), so periodic outputs are averaged correctly.
pub fn unscented_transform_with(
    m: &DVector<f64>,
    p: &DMatrix<f64>,
    g: &dyn Fn(&DVector<f64>) -> DVector<f64>,
    residual: &dyn Fn(&DVector<f64>, &DVector<f64>) -> DVector<f64>,
    params: &UtParams,
) -> Result<UtOutput> {
    let w = UtWeights::new(m.len(), params)?;
    let xs = sigma_points(m, p, &w)?;
    let gs: Vec<DVector<f64>> = xs.iter().map(g).collect();
    let g0 = &gs[0];
    let ds: Vec<DVector<f64>> = gs.iter().map(|gi| residual(gi, g0)).collect();
    let mut offset = DVector::zeros(g0.len());
    for (d, wm) in ds.iter().zip(&w.wm) {
        offset += d * *wm;
    }
    let mut cov = DMatrix::zeros(g0.len(), g0.len());
    let mut cross = DMatrix::zeros(m.len(), g0.len());
    let mut xbar = DVector::zeros(m.len());
    for (x, wm) in xs.iter().zip(&w.wm) {
        xbar += x * *wm;
    }
    for ((x, d), wc) in xs.iter().zip(&ds).zip(&w.wc) {
        let dg = d - &offset;
        cov += &dg * dg.transpose() * *wc;
        cross += (x - &xbar) * dg.transpose() * *wc;
    }
    math::symmetrize(&mut cov);
    Ok(UtOutput { mean: g0 + offset, cov, cross })
}

/// Measurement-independent part of a Kalman-type correction.
#[derive(Debug, Clone)]
pub struct UpdateTerms {
    pub mean_pred: DVector<f64>,
    pub y_hat: DVector<f64>,
    pub s: DMatrix<f64>,
    pub gain: DMatrix<f64>,
    pub cov_post: DMatrix<f64>,
    s_chol: Cholesky<f64, Dyn>,
    log_det_s: f64,
}

impl UpdateTerms {
    /// Build from predicted mean/cov, predicted measurement, innovation covariance
    /// (noise included) and state-measurement cross-covariance.
    pub fn from_moments(pred: &Gaussian, y_hat: DVector<f64>, s: DMatrix<f64>, cross: &DMatrix<f64>) -> Result<Self> {
        let s = math::symmetrized(s);
        let s_chol = cholesky(&s)?;
        let gain = s_chol.solve(&cross.transpose()).transpose();
        let mut cov_post = &pred.cov - &gain * cross.transpose();
        math::symmetrize(&mut cov_post);
        let log_det_s = log_det_from_chol(&s_chol);
        Ok(Self { mean_pred: pred.mean.clone(), y_hat, s, gain, cov_post, s_chol, log_det_s })
    }

    pub fn innovation(&self, y: &DVector<f64>, sensor: &dyn Sensor) -> DVector<f64> {
        sensor.residual(y, &self.y_hat)
    }

    /// `e^T S^{-1} e`.
    pub fn mahalanobis_sq(&self, e: &DVector<f64>) -> f64 {
        e.dot(&self.s_chol.solve(e))
    }

    /// `ln N(e; 0, S)`.
    pub fn log_likelihood(&self, e: &DVector<f64>) -> f64 {
        let maha = e.dot(&self.s_chol.solve(e));
        -0.5 * (e.len() as f64 * LN_2PI + self.log_det_s + maha)
    }

    pub fn posterior(&self, e: &DVector<f64>) -> Gaussian {
        Gaussian { mean: &self.mean_pred + &self.gain * e, cov: self.cov_post.clone() }
    }
}

pub fn linear_predict(prior: &Gaussian, a: &DMatrix<f64>, q: &DMatrix<f64>) -> Result<Gaussian> {
    let n = prior.dim();
    if a.shape() != (n, n) || q.shape() != (n, n) {
        return Err(Error::Dimension("transition matrix"));
    }
    let mut cov = a * &prior.cov * a.transpose() + q;
    math::symmetrize(&mut cov);
    Ok(Gaussian { mean: a * &prior.mean, cov })
}

pub fn linear_terms(pred: &Gaussian, c: &DMatrix<f64>, r: &DMatrix<f64>) -> Result<UpdateTerms> {
    if c.ncols() != pred.dim() || r.shape() != (c.nrows(), c.nrows()) {
        return Err(Error::Dimension("observation matrix"));
    }
    let cross = &pred.cov * c.transpose();
    let s = r + c * &cross;
    UpdateTerms::from_moments(pred, c * &pred.mean, s, &cross)
}

pub fn kf_predict(prior: &Gaussian, model: &LinearModel) -> Result<Gaussian> {
    linear_predict(prior, &model.a, &model.q)
}

/// Returns the posterior and the innovation `N(e; 0, S)`.
pub fn kf_correct(pred: &Gaussian, y: &DVector<f64>, model: &LinearModel) -> Result<(Gaussian, Gaussian)> {
    if y.len() != model.c.nrows() {
        return Err(Error::Dimension("measurement"));
    }
    let t = linear_terms(pred, &model.c, &model.r)?;
    let e = y - &t.y_hat;
    Ok((t.posterior(&e), Gaussian { mean: e, cov: t.s }))
}

/// Centralised correction with stacked measurements and block-diagonal noise.
pub fn mskf_correct(pred: &Gaussian, measurements: &[(DVector<f64>, DMatrix<f64>, DMatrix<f64>)]) -> Result<Gaussian> {
    if measurements.is_empty() {
        return Err(Error::Empty("measurements"));
    }
    let m: usize = measurements.iter().map(|(y, _, _)| y.len()).sum();
    let n = pred.dim();
    let mut y = DVector::zeros(m);
    let mut c = DMatrix::zeros(m, n);
    let mut row = 0;
    for (yi, ci, ri) in measurements {
        if ci.nrows() != yi.len() || ci.ncols() != n || ri.shape() != (yi.len(), yi.len()) {
            return Err(Error::Dimension("stacked measurement"));
        }
        y.rows_mut(row, yi.len()).copy_from(yi);
        c.rows_mut(row, yi.len()).copy_from(ci);
        row += yi.len();
    }
    let rs: Vec<DMatrix<f64>> = measurements.iter().map(|(_, _, r)| r.clone()).collect();
    let r = math::block_diag(&rs);
    let t = linear_terms(pred, &c, &r)?;
    Ok(t.posterior(&(y - &t.y_hat)))
}

fn fd_step(xi: f64) -> f64 {
    1e-6 * (1.0 + math::abs(xi))
}

/// Central finite-difference Jacobian of `g` at `x`.
pub fn numeric_jacobian(
    x: &DVector<f64>,
    g: &dyn Fn(&DVector<f64>) -> DVector<f64>,
    residual: &dyn Fn(&DVector<f64>, &DVector<f64>) -> DVector<f64>,
) -> DMatrix<f64> {
    let g0 = g(x);
    let mut jac = DMatrix::zeros(g0.len(), x.len());
    for i in 0..x.len() {
        let h = fd_step(x[i]);
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[i] += h;
        xm[i] -= h;
        let d = residual(&g(&xp), &g(&xm)) / (2.0 * h);
        jac.set_column(i, &d);
    }
    jac
}

pub fn dynamics_jacobian(dynamics: &dyn Dynamics, x: &DVector<f64>) -> DMatrix<f64> {
    dynamics.jacobian(x).unwrap_or_else(|| numeric_jacobian(x, &|z| dynamics.f(z), &|a, b| a - b))
}

pub fn sensor_jacobian(sensor: &dyn Sensor, x: &DVector<f64>) -> DMatrix<f64> {
    sensor.jacobian(x).unwrap_or_else(|| numeric_jacobian(x, &|z| sensor.h(z), &|a, b| sensor.residual(a, b)))
}

/// EKF prediction: Jacobian about the updated mean, mean propagated through `f`.
pub fn ekf_predict(prior: &Gaussian, dynamics: &dyn Dynamics) -> Result<Gaussian> {
    let a = dynamics_jacobian(dynamics, &prior.mean);
    let mut cov = &a * &prior.cov * a.transpose() + dynamics.q();
    math::symmetrize(&mut cov);
    Ok(Gaussian { mean: dynamics.f(&prior.mean), cov })
}

/// EKF correction terms: Jacobian about the predicted mean.
pub fn ekf_terms(pred: &Gaussian, sensor: &dyn Sensor) -> Result<UpdateTerms> {
    let c = sensor_jacobian(sensor, &pred.mean);
    let cross = &pred.cov * c.transpose();
    let s = sensor.r() + &c * &cross;
    UpdateTerms::from_moments(pred, sensor.h(&pred.mean), s, &cross)
}

pub fn ekf_correct(pred: &Gaussian, y: &DVector<f64>, sensor: &dyn Sensor) -> Result<Gaussian> {
    let t = ekf_terms(pred, sensor)?;
    Ok(t.posterior(&t.innovation(y, sensor)))
}

pub fn ekf_step(prior: &Gaussian, y: &DVector<f64>, model: &NonlinearModel<'_>) -> Result<Gaussian> {
    ekf_correct(&ekf_predict(prior, model.dynamics)?, y, model.sensor)
}

pub fn ukf_predict(prior: &Gaussian, dynamics: &dyn Dynamics, params: &UtParams) -> Result<Gaussian> {
    let ut = unscented_transform(&prior.mean, &prior.cov, &|x| dynamics.f(x), params)?;
    let mut cov = ut.cov + dynamics.q();
    math::symmetrize(&mut cov);
    Ok(Gaussian { mean: ut.mean, cov })
}

pub fn ukf_terms(pred: &Gaussian, sensor: &dyn Sensor, params: &UtParams) -> Result<UpdateTerms> {
    let ut = unscented_transform_with(&pred.mean, &pred.cov, &|x| sensor.h(x), &|a, b| sensor.residual(a, b), params)?;
    let s = ut.cov + sensor.r();
    UpdateTerms::from_moments(pred, ut.mean, s, &ut.cross)
}

pub fn ukf_correct(pred: &Gaussian, y: &DVector<f64>, sensor: &dyn Sensor, params: &UtParams) -> Result<Gaussian> {
    let t = ukf_terms(pred, sensor, params)?;
    Ok(t.posterior(&t.innovation(y, sensor)))
}

pub fn ukf_step(prior: &Gaussian, y: &DVector<f64>, model: &NonlinearModel<'_>, params: &UtParams) -> Result<Gaussian> {
    ukf_correct(&ukf_predict(prior, model.dynamics, params)?, y, model.sensor, params)
}

/// Choice of single-object approximation used inside the multi-object filters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FilterKind {
    Ekf,
    Ukf(UtParams),
}

impl Default for FilterKind {
    fn default() -> Self {
        FilterKind::Ukf(UtParams::default())
    }
}

impl FilterKind {
    pub fn predict(&self, prior: &Gaussian, dynamics: &dyn Dynamics) -> Result<Gaussian> {
        match self {
            FilterKind::Ekf => ekf_predict(prior, dynamics),
            FilterKind::Ukf(p) => ukf_predict(prior, dynamics, p),
        }
    }

    pub fn terms(&self, pred: &Gaussian, sensor: &dyn Sensor) -> Result<UpdateTerms> {
        match self {
            FilterKind::Ekf => ekf_terms(pred, sensor),
            FilterKind::Ukf(p) => ukf_terms(pred, sensor, p),
        }
    }

    /// Predicted measurement moments and cross-covariance, noise excluded.
    pub fn measurement_moments(&self, pred: &Gaussian, sensor: &dyn Sensor) -> Result<UtOutput> {
        match self {
            FilterKind::Ekf => {
                let c = sensor_jacobian(sensor, &pred.mean);
                let cross = &pred.cov * c.transpose();
                Ok(UtOutput { mean: sensor.h(&pred.mean), cov: &c * &cross, cross })
            }
            FilterKind::Ukf(p) => unscented_transform_with(&pred.mean, &pred.cov, &|x| sensor.h(x), &|a, b| sensor.residual(a, b), p),
        }
    }
}

/// Several sensors observed jointly: stacked `h`, block-diagonal `R`, per-block residuals.
pub struct StackedSensor<'a> {
    sensors: Vec<&'a dyn Sensor>,
    dims: Vec<usize>,
    r: DMatrix<f64>,
}

impl<'a> StackedSensor<'a> {
    pub fn new(sensors: Vec<&'a dyn Sensor>) -> Self {
        let dims = sensors.iter().map(|s| s.r().nrows()).collect();
        let rs: Vec<DMatrix<f64>> = sensors.iter().map(|s| s.r().clone()).collect();
        Self { sensors, dims, r: math::block_diag(&rs) }
    }

    pub fn stack(parts: &[DVector<f64>]) -> DVector<f64> {
        let n = parts.iter().map(|p| p.len()).sum();
        let mut out = DVector::zeros(n);
        let mut at = 0;
        for p in parts {
            out.rows_mut(at, p.len()).copy_from(p);
            at += p.len();
        }
        out
    }
}

impl Sensor for StackedSensor<'_> {
    fn h(&self, x: &DVector<f64>) -> DVector<f64> {
        let parts: Vec<DVector<f64>> = self.sensors.iter().map(|s| s.h(x)).collect();
        Self::stack(&parts)
    }
    fn r(&self) -> &DMatrix<f64> {
        &self.r
    }
    fn jacobian(&self, x: &DVector<f64>) -> Option<DMatrix<f64>> {
        let blocks: Vec<DMatrix<f64>> = self.sensors.iter().map(|s| sensor_jacobian(*s, x)).collect();
        let mut out = DMatrix::zeros(self.r.nrows(), x.len());
        let mut at = 0;
        for b in blocks {
            out.rows_mut(at, b.nrows()).copy_from(&b);
            at += b.nrows();
        }
        Some(out)
    }
    fn residual(&self, y: &DVector<f64>, y_hat: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(y.len());
        let mut at = 0;
        for (s, &d) in self.sensors.iter().zip(&self.dims) {
            let r = s.residual(&y.rows(at, d).into_owned(), &y_hat.rows(at, d).into_owned());
            out.rows_mut(at, d).copy_from(&r);
            at += d;
        }
        out
    }
}

/// Boxed closure dynamics, handy for tests and ad hoc models.
pub struct FnDynamics {
    pub f: Box<dyn Fn(&DVector<f64>) -> DVector<f64> + Send + Sync>,
    pub q: DMatrix<f64>,
}

impl Dynamics for FnDynamics {
    fn f(&self, x: &DVector<f64>) -> DVector<f64> {
        (self.f)(x)
    }
    fn q(&self) -> &DMatrix<f64> {
        &self.q
    }
}
