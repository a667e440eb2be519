//! Turns an [`ExperimentConfig`] into the core library's models.

use nalgebra::{DMatrix, DVector};
use netrack_core::consensus::{metropolis_weights, ConsensusWeights, NetworkGraph, NodeRole, RhoStrategy};
use netrack_core::gaussian::{Gaussian, GaussianMixture};
use netrack_core::kalman::{FilterKind, UtParams};
use netrack_core::mm_filters::JumpMarkovModel;
use netrack_core::rfs::CardinalityPmf;
use netrack_core::scenario::{self, Area, LinearDynamics, MotionKind, MotionModel, SensorModel, Trajectory};

use crate::config::{ExperimentConfig, FilterChoice, MotionConfig, NodeKind, RhoChoice};
use crate::error::HarnessError;

pub struct Model {
    pub area: Area,
    /// `None` for communication nodes.
    pub sensors: Vec<Option<SensorModel>>,
    pub graph: NetworkGraph,
    pub weights: ConsensusWeights,
    pub trajectories: Vec<Trajectory>,
    pub dynamics: LinearDynamics,
    pub modes: Option<JumpMarkovModel<LinearDynamics>>,
    pub filter: FilterKind,
    pub rho: RhoStrategy,
    pub init: Gaussian,
}

pub fn motion_model(m: &MotionConfig, ts: f64) -> Result<MotionModel, HarnessError> {
    let kind = match *m {
        MotionConfig::Ncv { .. } => MotionKind::Ncv,
        MotionConfig::Dwna { .. } => MotionKind::Dwna,
        MotionConfig::Ct { omega_deg, .. } => MotionKind::Ct { omega: omega_deg.to_radians() },
    };
    Ok(MotionModel::new(kind, ts, m.sigma_w())?)
}

fn diag(v: [f64; 4]) -> DMatrix<f64> {
    DMatrix::from_diagonal(&DVector::from_row_slice(&v))
}

impl Model {
    pub fn build(cfg: &ExperimentConfig) -> Result<Self, HarnessError> {
        let sc = &cfg.scenario;
        let area = Area { x: (sc.area.x[0], sc.area.x[1]), y: (sc.area.y[0], sc.area.y[1]) };
        let max_range = area.diagonal();
        let sensors = sc
            .nodes
            .iter()
            .map(|n| {
                Ok(match n.kind {
                    NodeKind::Toa => Some(SensorModel::toa(n.position, n.sigma[0], n.p_d, n.clutter_rate, max_range)?),
                    NodeKind::Doa => Some(SensorModel::doa(n.position, n.sigma[0], n.p_d, n.clutter_rate)?),
                    NodeKind::Radar => Some(SensorModel::radar(n.position, n.sigma[0], n.sigma[1], n.p_d, n.clutter_rate, max_range)?),
                    NodeKind::Comm => None,
                })
            })
            .collect::<Result<Vec<_>, HarnessError>>()?;
        let roles = sensors.iter().map(|s| if s.is_some() { NodeRole::Sensor } else { NodeRole::Communication }).collect();
        let edges: Vec<(usize, usize)> = sc.edges.iter().map(|[a, b]| (*a, *b)).collect();
        let graph = NetworkGraph::undirected(roles, &edges)?;
        let weights = metropolis_weights(&graph);

        let trajectories = sc
            .objects
            .iter()
            .enumerate()
            .map(|(i, o)| {
                let segments = o.segments.iter().map(|s| Ok((s.start, motion_model(&s.motion, sc.ts)?))).collect::<Result<Vec<_>, HarnessError>>()?;
                Ok(Trajectory {
                    id: i as u32,
                    birth_step: o.birth,
                    death_step: o.death.unwrap_or(sc.steps).min(sc.steps),
                    initial: DVector::from_row_slice(&o.initial),
                    segments,
                })
            })
            .collect::<Result<Vec<_>, HarnessError>>()?;

        let dynamics = motion_model(&cfg.motion, sc.ts)?.dynamics();
        let modes = match &cfg.modes {
            Some(m) => {
                let ds = m.models.iter().map(|mc| Ok(motion_model(mc, sc.ts)?.dynamics())).collect::<Result<Vec<_>, HarnessError>>()?;
                let r = ds.len();
                let jump = DMatrix::from_fn(r, r, |j, t| m.jump[j][t]);
                Some(JumpMarkovModel::new(ds, jump)?)
            }
            None => None,
        };
        let filter = match cfg.filter {
            FilterChoice::Ekf => FilterKind::Ekf,
            FilterChoice::Ukf => FilterKind::Ukf(UtParams::default()),
        };
        let rho = match cfg.single.rho {
            RhoChoice::MinInverseWeight => RhoStrategy::MinInverseWeight,
            RhoChoice::NetworkSize => RhoStrategy::NetworkSize,
            RhoChoice::SensorFraction => RhoStrategy::SensorFraction,
        };
        let mean = cfg.single.init_mean.unwrap_or([(area.x.0 + area.x.1) / 2.0, 0.0, (area.y.0 + area.y.1) / 2.0, 0.0]);
        let init = Gaussian::new(DVector::from_row_slice(&mean), diag(cfg.single.init_cov))?;
        Ok(Self { area, sensors, graph, weights, trajectories, dynamics, modes, filter, rho, init })
    }

    pub fn len(&self) -> usize {
        self.sensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sensors.is_empty()
    }

    /// Sensor nodes and their indices, in node order.
    pub fn sensor_nodes(&self) -> Vec<(usize, &SensorModel)> {
        self.sensors.iter().enumerate().filter_map(|(i, s)| s.as_ref().map(|s| (i, s))).collect()
    }

    /// Birth component positions: the explicit points followed by the border ones.
    pub fn birth_points(&self, cfg: &ExperimentConfig) -> Vec<[f64; 2]> {
        let Some(b) = &cfg.birth else { return Vec::new() };
        let mut pts = b.points.clone();
        pts.extend(self.area.border_points(b.border));
        pts
    }

    pub fn birth_intensity(&self, cfg: &ExperimentConfig) -> GaussianMixture {
        let b = cfg.birth.as_ref().expect("validated");
        scenario::birth_intensity(&self.birth_points(cfg), b.cov, b.weight)
    }

    /// Poisson birth cardinality matching the birth intensity mass.
    pub fn birth_cardinality(&self, cfg: &ExperimentConfig) -> CardinalityPmf {
        CardinalityPmf::poisson(self.birth_intensity(cfg).total_weight(), cfg.multi.n_max)
    }

    pub fn birth_lmb(&self, cfg: &ExperimentConfig) -> Vec<(f64, GaussianMixture)> {
        let b = cfg.birth.as_ref().expect("validated");
        scenario::birth_lmb_components(&self.birth_points(cfg), b.cov, b.weight)
    }
}
