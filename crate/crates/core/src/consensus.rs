//! Sensor-network graphs, consensus weights and the distributed single-object filters.

use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::gaussian::{Gaussian, InformationPair};
use crate::kalman::{Dynamics, FilterKind, Sensor};
use crate::math;
use crate::mm_filters::{self, JumpMarkovModel, ModeBank};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeRole {
    Sensor,
    Communication,
}

/// Directed network. `neighbors[i]` is the sorted in-neighbourhood of `i`, which always contains `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkGraph {
    roles: Vec<NodeRole>,
    neighbors: Vec<Vec<usize>>,
}

impl NetworkGraph {
    /// An arc `(j, i)` means node `i` receives data from node `j`.
    pub fn new(roles: Vec<NodeRole>, arcs: &[(usize, usize)]) -> Result<Self> {
        let n = roles.len();
        let mut neighbors: Vec<Vec<usize>> = (0..n).map(|i| alloc::vec![i]).collect();
        for &(j, i) in arcs {
            if i >= n || j >= n {
                return Err(Error::InvalidParameter("arc references a missing node"));
            }
            neighbors[i].push(j);
        }
        for nb in &mut neighbors {
            nb.sort_unstable();
            nb.dedup();
        }
        Ok(Self { roles, neighbors })
    }

    /// Every edge is added in both directions.
    pub fn undirected(roles: Vec<NodeRole>, edges: &[(usize, usize)]) -> Result<Self> {
        let arcs: Vec<(usize, usize)> = edges.iter().flat_map(|&(a, b)| [(a, b), (b, a)]).collect();
        Self::new(roles, &arcs)
    }

    /// Path `0 - 1 - ... - n-1`.
    pub fn line(roles: Vec<NodeRole>) -> Self {
        let edges: Vec<(usize, usize)> = (1..roles.len()).map(|i| (i - 1, i)).collect();
        Self::undirected(roles, &edges).expect("valid line")
    }

    pub fn ring(roles: Vec<NodeRole>) -> Self {
        let n = roles.len();
        let edges: Vec<(usize, usize)> = (0..n).map(|i| (i, (i + 1) % n)).collect();
        Self::undirected(roles, &edges).expect("valid ring")
    }

    pub fn len(&self) -> usize {
        self.roles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.roles.is_empty()
    }

    pub fn role(&self, i: usize) -> NodeRole {
        self.roles[i]
    }

    pub fn roles(&self) -> &[NodeRole] {
        &self.roles
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.neighbors[i]
    }

    pub fn is_sensor(&self, i: usize) -> bool {
        self.roles[i] == NodeRole::Sensor
    }

    pub fn sensors(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.len()).filter(|&i| self.is_sensor(i))
    }

    pub fn is_symmetric(&self) -> bool {
        (0..self.len()).all(|i| self.neighbors[i].iter().all(|&j| self.neighbors[j].binary_search(&i).is_ok()))
    }

    /// Strong connectivity (every node reaches every other node).
    pub fn is_connected(&self) -> bool {
        let n = self.len();
        if n == 0 {
            return true;
        }
        let reach = |forward: bool| {
            let mut seen = alloc::vec![false; n];
            let mut stack = alloc::vec![0usize];
            seen[0] = true;
            while let Some(v) = stack.pop() {
                for u in 0..n {
                    let edge = if forward { self.neighbors[u].binary_search(&v).is_ok() } else { self.neighbors[v].binary_search(&u).is_ok() };
                    if edge && !seen[u] {
                        seen[u] = true;
                        stack.push(u);
                    }
                }
            }
            seen.iter().all(|&s| s)
        };
        reach(true) && reach(false)
    }
}

/// Row-stochastic consensus matrix, `pi[(i, j)] = omega^{i,j}`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConsensusWeights {
    pub pi: DMatrix<f64>,
    /// False when built from an asymmetric graph, where Metropolis weights need not be doubly stochastic.
    pub doubly_stochastic: bool,
}

impl ConsensusWeights {
    pub fn new(pi: DMatrix<f64>, g: &NetworkGraph) -> Result<Self> {
        let n = g.len();
        if pi.shape() != (n, n) {
            return Err(Error::Dimension("consensus matrix"));
        }
        for i in 0..n {
            for j in 0..n {
                let w = pi[(i, j)];
                if !(w >= 0.0) || (w > 0.0 && g.neighbors(i).binary_search(&j).is_err()) {
                    return Err(Error::InvalidParameter("consensus weight outside the neighbourhood"));
                }
            }
            if math::abs(pi.row(i).sum() - 1.0) > 1e-9 {
                return Err(Error::InvalidParameter("consensus rows must sum to one"));
            }
        }
        let doubly_stochastic = (0..n).all(|j| math::abs(pi.column(j).sum() - 1.0) <= 1e-9);
        Ok(Self { pi, doubly_stochastic })
    }

    pub fn len(&self) -> usize {
        self.pi.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.pi.nrows() == 0
    }

    /// Nonzero `(j, omega^{i,j})` of row `i`.
    pub fn row(&self, i: usize) -> Vec<(usize, f64)> {
        (0..self.len()).filter_map(|j| (self.pi[(i, j)] > 0.0).then(|| (j, self.pi[(i, j)]))).collect()
    }

    /// `Pi^l`.
    pub fn power(&self, l: usize) -> DMatrix<f64> {
        let mut out = DMatrix::identity(self.len(), self.len());
        for _ in 0..l {
            out = &self.pi * out;
        }
        out
    }
}

pub fn metropolis_weights(g: &NetworkGraph) -> ConsensusWeights {
    let n = g.len();
    let mut pi = DMatrix::zeros(n, n);
    for i in 0..n {
        let mut off = 0.0;
        for &j in g.neighbors(i) {
            if j != i {
                let w = 1.0 / (1.0 + g.neighbors(i).len().max(g.neighbors(j).len()) as f64);
                pi[(i, j)] = w;
                off += w;
            }
        }
        pi[(i, i)] = 1.0 - off;
    }
    let doubly_stochastic = g.is_symmetric();
    ConsensusWeights { pi, doubly_stochastic }
}

/// `L` rounds of `theta_{l+1} = Pi theta_l`.
pub fn consensus_average(values: &[DVector<f64>], w: &ConsensusWeights, l: usize) -> Result<Vec<DVector<f64>>> {
    if values.len() != w.len() {
        return Err(Error::Dimension("one value per node"));
    }
    let mut cur = values.to_vec();
    for _ in 0..l {
        cur = (0..w.len())
            .map(|i| w.row(i).into_iter().fold(DVector::zeros(cur[i].len()), |acc, (j, wij)| acc + &cur[j] * wij))
            .collect();
    }
    Ok(cur)
}

/// Consensus on Gaussians: each round is a CI fusion over the neighbourhood (weighted sum of information pairs).
pub fn consensus_information(pairs: &[InformationPair], w: &ConsensusWeights, l: usize) -> Result<Vec<InformationPair>> {
    if pairs.len() != w.len() {
        return Err(Error::Dimension("one pair per node"));
    }
    let mut cur = pairs.to_vec();
    for _ in 0..l {
        cur = (0..w.len())
            .map(|i| {
                let row = w.row(i);
                let ps: Vec<&InformationPair> = row.iter().map(|(j, _)| &cur[*j]).collect();
                let ws: Vec<f64> = row.iter().map(|(_, x)| *x).collect();
                InformationPair::weighted_sum(&ps, &ws)
            })
            .collect::<Result<_>>()?;
    }
    Ok(cur)
}

/// Consensus on PMFs: each round is the weighted KLA over the neighbourhood.
pub fn consensus_pmf(pmfs: &[Vec<f64>], w: &ConsensusWeights, l: usize) -> Result<Vec<Vec<f64>>> {
    if pmfs.len() != w.len() {
        return Err(Error::Dimension("one PMF per node"));
    }
    let mut cur = pmfs.to_vec();
    for _ in 0..l {
        cur = (0..w.len())
            .map(|i| {
                let row = w.row(i);
                let ps: Vec<&[f64]> = row.iter().map(|(j, _)| cur[*j].as_slice()).collect();
                let ws: Vec<f64> = row.iter().map(|(_, x)| *x).collect();
                mm_filters::pmf_kla(&ps, &ws)
            })
            .collect::<Result<_>>()?;
    }
    Ok(cur)
}

fn consensus_gaussians(gs: &[Gaussian], w: &ConsensusWeights, l: usize) -> Result<Vec<Gaussian>> {
    if l == 0 {
        return Ok(gs.to_vec());
    }
    let pairs = gs.iter().map(Gaussian::to_information).collect::<Result<Vec<_>>>()?;
    consensus_information(&pairs, w, l)?.iter().map(InformationPair::to_gaussian).collect()
}

/// Shared per-step inputs of the distributed single-object filters.
pub struct NetworkStep<'a> {
    pub graph: &'a NetworkGraph,
    pub weights: &'a ConsensusWeights,
    /// `sensors[i]` is `Some` for sensor nodes.
    pub sensors: &'a [Option<&'a dyn Sensor>],
    /// `measurements[i]` is `None` for communication nodes or missing data.
    pub measurements: &'a [Option<DVector<f64>>],
    pub filter: FilterKind,
    pub steps: usize,
}

impl NetworkStep<'_> {
    fn check(&self, n: usize) -> Result<()> {
        if self.graph.len() != n || self.weights.len() != n || self.sensors.len() != n || self.measurements.len() != n {
            return Err(Error::Dimension("per-node inputs"));
        }
        Ok(())
    }

    fn local(&self, i: usize) -> Option<(&dyn Sensor, &DVector<f64>)> {
        if !self.graph.is_sensor(i) {
            return None;
        }
        match (self.sensors[i], &self.measurements[i]) {
            (Some(s), Some(y)) => Some((s, y)),
            _ => None,
        }
    }
}

/// Consensus on Posteriors: local predict and correct, then `L` CI consensus rounds.
pub fn cp_step(states: &[Gaussian], dynamics: &dyn Dynamics, net: &NetworkStep<'_>) -> Result<Vec<Gaussian>> {
    net.check(states.len())?;
    let mut local = Vec::with_capacity(states.len());
    for (i, s) in states.iter().enumerate() {
        let pred = net.filter.predict(s, dynamics)?;
        local.push(match net.local(i) {
            Some((sensor, y)) => {
                let t = net.filter.terms(&pred, sensor)?;
                t.posterior(&t.innovation(y, sensor))
            }
            None => pred,
        });
    }
    consensus_gaussians(&local, net.weights, net.steps)
}

/// Scaling applied to the consensus likelihood in CLCP.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RhoStrategy {
    /// `min_{j in S} 1 / omega_L^{i,j}`; needs `Pi^L`, which only a simulator can hand out.
    MinInverseWeight,
    /// `|N|`.
    NetworkSize,
    /// `1 / b_L^i`, with `b` a consensus estimate of the sensor fraction.
    #[default]
    SensorFraction,
}

/// Per-node CLCP weights `rho^i`.
pub fn clcp_rho(g: &NetworkGraph, w: &ConsensusWeights, l: usize, strategy: RhoStrategy) -> Result<Vec<f64>> {
    let n = g.len();
    Ok(match strategy {
        RhoStrategy::NetworkSize => alloc::vec![n as f64; n],
        RhoStrategy::MinInverseWeight => {
            let pl = w.power(l);
            (0..n)
                .map(|i| {
                    let best = g.sensors().map(|j| pl[(i, j)]).filter(|&x| x > 0.0).fold(0.0, f64::max);
                    if best > 0.0 { 1.0 / best } else { 1.0 }
                })
                .collect()
        }
        RhoStrategy::SensorFraction => {
            let b0: Vec<DVector<f64>> = (0..n).map(|i| DVector::from_element(1, if g.is_sensor(i) { 1.0 } else { 0.0 })).collect();
            consensus_average(&b0, w, l)?.iter().map(|b| if b[0] > 0.0 { 1.0 / b[0] } else { 1.0 }).collect()
        }
    })
}

/// Information-form likelihood `(C^T R^-1 C, C^T R^-1 y_bar)` of a sensor linearised around `pred`,
/// with `C = P_xy^T P^-1` and pseudo-measurement `y_bar = y - y_hat + C x_hat`.
pub fn linearized_likelihood(pred: &Gaussian, y: &DVector<f64>, sensor: &dyn Sensor, filter: &FilterKind) -> Result<InformationPair> {
    let m = filter.measurement_moments(pred, sensor)?;
    let p_chol = math::cholesky(&pred.cov)?;
    let c = p_chol.solve(&m.cross).transpose();
    let r_chol = math::cholesky(sensor.r())?;
    let y_bar = sensor.residual(y, &m.mean) + &c * &pred.mean;
    let rinv_c = r_chol.solve(&c);
    let mut omega = c.transpose() * &rinv_c;
    math::symmetrize(&mut omega);
    let q = rinv_c.transpose() * y_bar;
    Ok(InformationPair { omega, q })
}

/// Consensus on Likelihoods and Priors: parallel consensus on the local likelihood and prior
/// information pairs, then `Omega = Omega_prior + rho dOmega`.
pub fn clcp_step(states: &[Gaussian], dynamics: &dyn Dynamics, net: &NetworkStep<'_>, rho: RhoStrategy) -> Result<Vec<Gaussian>> {
    net.check(states.len())?;
    let n = states.len();
    let dim = states.first().ok_or(Error::Empty("nodes"))?.dim();
    let mut priors = Vec::with_capacity(n);
    let mut likes = Vec::with_capacity(n);
    for (i, s) in states.iter().enumerate() {
        let pred = net.filter.predict(s, dynamics)?;
        likes.push(match net.local(i) {
            Some((sensor, y)) => linearized_likelihood(&pred, y, sensor, &net.filter)?,
            None => InformationPair::zeros(dim),
        });
        priors.push(pred.to_information()?);
    }
    let priors = consensus_information(&priors, net.weights, net.steps)?;
    let likes = consensus_information(&likes, net.weights, net.steps)?;
    let rho = clcp_rho(net.graph, net.weights, net.steps, rho)?;
    priors
        .into_iter()
        .zip(&likes)
        .zip(rho)
        .map(|((mut p, d), r)| {
            p.add_scaled(d, r);
            p.to_gaussian()
        })
        .collect()
}

fn local_mode_posteriors<D: Dynamics>(banks: &[ModeBank], model: &JumpMarkovModel<D>, net: &NetworkStep<'_>) -> Result<Vec<ModeBank>> {
    net.check(banks.len())?;
    banks
        .iter()
        .enumerate()
        .map(|(i, b)| {
            let pred = mm_filters::predict_modes(b, model, &net.filter)?;
            match net.local(i) {
                Some((sensor, y)) => mm_filters::correct_modes(&pred, y, sensor, &net.filter),
                None => Ok(pred),
            }
        })
        .collect()
}

/// Distributed GPB1: consensus on mode PMFs, local mode fusion, then consensus on the fused Gaussian.
/// Returns the re-initialised banks and each node's estimate.
pub fn dgpb1_step<D: Dynamics>(banks: &[ModeBank], model: &JumpMarkovModel<D>, net: &NetworkStep<'_>) -> Result<(Vec<ModeBank>, Vec<Gaussian>)> {
    let local = local_mode_posteriors(banks, model, net)?;
    let pmfs: Vec<Vec<f64>> = local.iter().map(|b| b.mu.clone()).collect();
    let mus = consensus_pmf(&pmfs, net.weights, net.steps)?;
    let fused: Vec<Gaussian> = local.iter().zip(&mus).map(|(b, mu)| mm_filters::mode_fusion(&ModeBank { pdfs: b.pdfs.clone(), mu: mu.clone() })).collect();
    let fused = consensus_gaussians(&fused, net.weights, net.steps)?;
    let r = model.num_modes();
    let banks = fused.iter().zip(mus).map(|(f, mu)| ModeBank { pdfs: alloc::vec![f.clone(); r], mu }).collect();
    Ok((banks, fused))
}

/// Distributed IMM: parallel consensus on mode PMFs and on every mode-matched Gaussian, then fusion and mixing.
pub fn dimm_step<D: Dynamics>(banks: &[ModeBank], model: &JumpMarkovModel<D>, net: &NetworkStep<'_>) -> Result<(Vec<ModeBank>, Vec<Gaussian>)> {
    let local = local_mode_posteriors(banks, model, net)?;
    let n = local.len();
    let r = model.num_modes();
    let pmfs: Vec<Vec<f64>> = local.iter().map(|b| b.mu.clone()).collect();
    let mus = consensus_pmf(&pmfs, net.weights, net.steps)?;
    let mut per_node: Vec<Vec<Gaussian>> = (0..n).map(|_| Vec::with_capacity(r)).collect();
    for j in 0..r {
        let mode_j: Vec<Gaussian> = local.iter().map(|b| b.pdfs[j].clone()).collect();
        for (acc, g) in per_node.iter_mut().zip(consensus_gaussians(&mode_j, net.weights, net.steps)?) {
            acc.push(g);
        }
    }
    let mut out_banks = Vec::with_capacity(n);
    let mut estimates = Vec::with_capacity(n);
    for (pdfs, mu) in per_node.into_iter().zip(mus) {
        let bank = ModeBank { pdfs, mu };
        estimates.push(mm_filters::mode_fusion(&bank));
        let mixed = mm_filters::mix(&bank, &model.jump);
        out_banks.push(ModeBank { pdfs: mixed, mu: bank.mu });
    }
    Ok((out_banks, estimates))
}
