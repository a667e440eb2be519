//! Monte Carlo trials. Each trial draws truth and measurements from its own RNG stream.

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use netrack_core::consensus::{self, NetworkStep};
use netrack_core::cphd::{self, CphdMotion, CphdParams, CphdState};
use netrack_core::gaussian::Gaussian;
use netrack_core::kalman::Sensor;
use netrack_core::labeled::{self, DeltaGlmb, LabeledMotion, LabeledParams, LabeledState, Lmb};
use netrack_core::labeled_fusion::{self, LabeledNetwork};
use netrack_core::metrics::{self, OspaParams};
use netrack_core::mm_filters::{self, ModeBank};
use netrack_core::rfs::DetectionModel;
use netrack_core::scenario;

use crate::config::{Algorithm, ExperimentConfig};
use crate::error::HarnessError;
use crate::model::Model;

pub const POS_ERR: &str = "pos_err";
pub const OSPA: &str = "ospa";
pub const CARD: &str = "card";

#[derive(Debug, Clone, PartialEq)]
pub struct Row {
    pub trial: usize,
    pub step: usize,
    pub node: usize,
    pub metric: &'static str,
    pub value: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Execution {
    Parallel,
    Serial,
}

/// Stream `trial` of the ChaCha generator keyed by `seed`.
pub fn trial_rng(seed: u64, trial: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial as u64);
    rng
}

pub fn run_trials(cfg: &ExperimentConfig, exec: Execution) -> Result<Vec<Row>, HarnessError> {
    let model = Model::build(cfg)?;
    let per_trial: Vec<Vec<Row>> = match exec {
        Execution::Parallel => (0..cfg.trials).into_par_iter().map(|t| run_trial(cfg, &model, t)).collect::<Result<_, _>>()?,
        Execution::Serial => (0..cfg.trials).map(|t| run_trial(cfg, &model, t)).collect::<Result<_, _>>()?,
    };
    Ok(per_trial.into_iter().flatten().collect())
}

/// Truth plus one scan per node per step; communication nodes get empty scans.
struct TrialData {
    truth: Vec<Vec<LabeledState>>,
    scans: Vec<Vec<Vec<DVector<f64>>>>,
}

fn simulate(cfg: &ExperimentConfig, model: &Model, trial: usize) -> Result<TrialData, HarnessError> {
    let mut rng = trial_rng(cfg.seed, trial);
    let truth = scenario::simulate_truth(&model.trajectories, cfg.scenario.steps, &mut rng)?;
    let nodes = model.sensor_nodes();
    let sensors: Vec<_> = nodes.iter().map(|(_, s)| (*s).clone()).collect();
    let mut scans = Vec::with_capacity(truth.len());
    for t in &truth {
        let xs: Vec<DVector<f64>> = t.iter().map(|(_, x)| x.clone()).collect();
        let ys = scenario::simulate_measurements(&xs, &sensors, &mut rng)?;
        let mut per_node = vec![Vec::new(); model.len()];
        for ((i, _), y) in nodes.iter().zip(ys) {
            per_node[*i] = y;
        }
        scans.push(per_node);
    }
    Ok(TrialData { truth, scans })
}

fn run_trial(cfg: &ExperimentConfig, model: &Model, trial: usize) -> Result<Vec<Row>, HarnessError> {
    let data = simulate(cfg, model, trial)?;
    let mut rows = Vec::new();
    if cfg.algorithm.is_multi_object() {
        let ospa = OspaParams::new(cfg.ospa.p, cfg.ospa.c)?;
        let mut record = |k: usize, ests: &[Vec<DVector<f64>>]| -> Result<(), HarnessError> {
            let truth: Vec<DVector<f64>> = data.truth[k].iter().map(|(_, x)| metrics::position(x)).collect();
            for (node, est) in ests.iter().enumerate() {
                let pos: Vec<DVector<f64>> = est.iter().map(metrics::position).collect();
                rows.push(Row { trial, step: k, node, metric: OSPA, value: metrics::ospa(&pos, &truth, &ospa)? });
                rows.push(Row { trial, step: k, node, metric: CARD, value: est.len() as f64 });
            }
            Ok(())
        };
        multi_object(cfg, model, &data, &mut record)?;
    } else {
        let mut record = |k: usize, ests: &[Gaussian]| {
            let truth = metrics::position(&data.truth[k][0].1);
            for (node, g) in ests.iter().enumerate() {
                rows.push(Row { trial, step: k, node, metric: POS_ERR, value: (metrics::position(&g.mean) - &truth).norm() });
            }
        };
        single_object(cfg, model, &data, &mut record)?;
    }
    Ok(rows)
}

fn first_detection(scan: &[DVector<f64>]) -> Option<DVector<f64>> {
    scan.first().cloned()
}

fn single_object(cfg: &ExperimentConfig, model: &Model, data: &TrialData, record: &mut dyn FnMut(usize, &[Gaussian])) -> Result<(), HarnessError> {
    let n = model.len();
    let dyn_sensors: Vec<Option<&dyn Sensor>> = model.sensors.iter().map(|s| s.as_ref().map(|s| s as &dyn Sensor)).collect();
    let mut states = vec![model.init.clone(); n];
    let r = model.modes.as_ref().map_or(1, |m| m.num_modes());
    let mut banks = vec![ModeBank::uniform(model.init.clone(), r); n];
    let mut central = model.init.clone();
    let mut central_bank = ModeBank::uniform(model.init.clone(), r);

    for k in 0..cfg.scenario.steps {
        let meas: Vec<Option<DVector<f64>>> = data.scans[k].iter().map(|s| first_detection(s)).collect();
        let net = NetworkStep {
            graph: &model.graph,
            weights: &model.weights,
            sensors: &dyn_sensors,
            measurements: &meas,
            filter: model.filter,
            steps: cfg.consensus_steps,
        };
        // centralized variants correct with one sensor at a time
        let available: Vec<(&dyn Sensor, &DVector<f64>)> =
            dyn_sensors.iter().zip(&meas).filter_map(|(s, y)| Some(((*s)?, y.as_ref()?))).collect();
        match cfg.algorithm {
            Algorithm::Cp => {
                states = consensus::cp_step(&states, &model.dynamics, &net)?;
                record(k, &states);
            }
            Algorithm::Clcp => {
                states = consensus::clcp_step(&states, &model.dynamics, &net, model.rho)?;
                record(k, &states);
            }
            Algorithm::Dgpb1 | Algorithm::Dimm => {
                let jm = model.modes.as_ref().expect("validated");
                let (b, est) = if cfg.algorithm == Algorithm::Dgpb1 { consensus::dgpb1_step(&banks, jm, &net)? } else { consensus::dimm_step(&banks, jm, &net)? };
                banks = b;
                record(k, &est);
            }
            Algorithm::Centralized => {
                let mut g = model.filter.predict(&central, &model.dynamics)?;
                for (s, y) in &available {
                    let t = model.filter.terms(&g, *s)?;
                    g = t.posterior(&t.innovation(y, *s));
                }
                central = g;
                record(k, std::slice::from_ref(&central));
            }
            Algorithm::Cgpb1 | Algorithm::Cimm => {
                let jm = model.modes.as_ref().expect("validated");
                let mut post = mm_filters::predict_modes(&central_bank, jm, &model.filter)?;
                for (s, y) in &available {
                    post = mm_filters::correct_modes(&post, y, *s, &model.filter)?;
                }
                let fused = mm_filters::mode_fusion(&post);
                let pdfs = if cfg.algorithm == Algorithm::Cgpb1 { vec![fused.clone(); r] } else { mm_filters::mix(&post, &jm.jump) };
                central_bank = ModeBank { pdfs, mu: post.mu };
                record(k, &[fused]);
            }
            _ => unreachable!("multi-object algorithm in single-object loop"),
        }
    }
    Ok(())
}

fn cphd_params(cfg: &ExperimentConfig) -> CphdParams {
    let m = &cfg.multi;
    CphdParams { gamma_m: m.gamma_m, gamma_t: m.gamma_t, gamma_e: m.gamma_e, max_components: m.max_components }
}

fn labeled_params(cfg: &ExperimentConfig) -> LabeledParams {
    let m = &cfg.multi;
    LabeledParams {
        hypothesis_cap: m.hypothesis_cap,
        maps_per_hypothesis: m.maps_per_hypothesis,
        min_weight: m.min_weight,
        gamma_m: m.gamma_m,
        max_components: m.label_components,
        ..LabeledParams::default()
    }
}

fn states_of(est: Vec<LabeledState>) -> Vec<DVector<f64>> {
    est.into_iter().map(|(_, x)| x).collect()
}

fn multi_object(
    cfg: &ExperimentConfig,
    model: &Model,
    data: &TrialData,
    record: &mut dyn FnMut(usize, &[Vec<DVector<f64>>]) -> Result<(), HarnessError>,
) -> Result<(), HarnessError> {
    let n = model.len();
    let detection: Vec<Option<DetectionModel<'_>>> = model.sensors.iter().map(|s| s.as_ref().map(|s| s.detection_model())).collect();
    let l = cfg.consensus_steps;

    match cfg.algorithm {
        Algorithm::CgmCphd | Algorithm::GmCphd => {
            let motion = CphdMotion {
                p_s: cfg.multi.p_s,
                birth_card: model.birth_cardinality(cfg),
                birth: model.birth_intensity(cfg),
                dynamics: &model.dynamics,
                filter: model.filter,
            };
            let params = cphd_params(cfg);
            let mut states = vec![CphdState::empty(cfg.multi.n_max); n];
            let mut central = CphdState::empty(cfg.multi.n_max);
            for k in 0..cfg.scenario.steps {
                let scans = &data.scans[k];
                if cfg.algorithm == Algorithm::CgmCphd {
                    let (s, est) = cphd::cgm_cphd_step(&states, &motion, &detection, scans, &model.graph, &model.weights, l, &params)?;
                    states = s;
                    record(k, &est)?;
                } else {
                    let sc: Vec<_> = detection.iter().zip(scans).filter_map(|(d, y)| d.as_ref().map(|d| (&y[..], d))).collect();
                    let (s, est) = cphd::gm_cphd_step(&central, &motion, &sc, &params)?;
                    central = s;
                    record(k, &[est])?;
                }
            }
        }
        Algorithm::CmdGlmb | Algorithm::Clmb | Algorithm::MdGlmb | Algorithm::Lmb => {
            let motion = LabeledMotion { p_s: cfg.multi.p_s, birth: model.birth_lmb(cfg), dynamics: &model.dynamics, filter: model.filter };
            let params = labeled_params(cfg);
            let mut glmbs = vec![DeltaGlmb::empty(); n];
            let mut lmbs = vec![Lmb::default(); n];
            let mut glmb = DeltaGlmb::empty();
            let mut lmb = Lmb::default();
            for k in 0..cfg.scenario.steps {
                let scans = &data.scans[k];
                let net = LabeledNetwork { graph: &model.graph, weights: &model.weights, sensors: &detection, measurements: scans, steps: l };
                let sc: Vec<_> = detection.iter().zip(scans).filter_map(|(d, y)| d.as_ref().map(|d| (&y[..], d))).collect();
                let kk = k as u32;
                let est: Vec<Vec<DVector<f64>>> = match cfg.algorithm {
                    Algorithm::CmdGlmb => {
                        let (s, est) = labeled_fusion::consensus_mdglmb_step(&glmbs, kk, &motion, &net, &params)?;
                        glmbs = s;
                        est.into_iter().map(states_of).collect()
                    }
                    Algorithm::Clmb => {
                        let (s, est) = labeled_fusion::consensus_lmb_step(&lmbs, kk, &motion, &net, &params)?;
                        lmbs = s;
                        est.into_iter().map(states_of).collect()
                    }
                    Algorithm::MdGlmb => {
                        let (s, est) = labeled::mdglmb_step(&glmb, kk, &motion, &sc, &params)?;
                        glmb = s;
                        vec![states_of(est)]
                    }
                    _ => {
                        let (s, est) = labeled::lmb_step(&lmb, kk, &motion, &sc, &params)?;
                        lmb = s;
                        vec![states_of(est)]
                    }
                };
                record(k, &est)?;
            }
        }
        _ => unreachable!("single-object algorithm in multi-object loop"),
    }
    Ok(())
}
