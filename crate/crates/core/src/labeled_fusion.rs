//! Kullback-Leibler averages of Mδ-GLMB and LMB densities and the consensus trackers built on them.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use nalgebra::DVector;

use crate::consensus::{ConsensusWeights, NetworkGraph};
use crate::error::{Error, Result};
use crate::gaussian::{self, GaussianMixture};
use crate::labeled::{self, DeltaGlmb, Hypothesis, LabeledMotion, LabeledParams, LabeledState, Lmb, Scan, Track};
use crate::math;
use crate::rfs::DetectionModel;

/// Stand-in weight or existence probability for label sets and tracks an agent does not carry.
pub const MISSING_EPS: f64 = 1e-12;

fn active<'a, T>(items: &[&'a T], weights: &[f64]) -> Result<Vec<(&'a T, f64)>> {
    if items.is_empty() {
        return Err(Error::Empty("agents"));
    }
    if items.len() != weights.len() {
        return Err(Error::Dimension("agents vs weights"));
    }
    gaussian::check_weights(weights)?;
    Ok(items.iter().zip(weights).filter(|(_, w)| **w > 0.0).map(|(d, w)| (*d, *w)).collect())
}

/// KLA of marginalized δ-GLMBs. Label sets missing at an agent get weight `MISSING_EPS` there,
/// with the location densities of the first agent that has them.
pub fn mdglmb_kla(densities: &[&DeltaGlmb], weights: &[f64]) -> Result<DeltaGlmb> {
    let agents = active(densities, weights)?;
    if agents.len() == 1 {
        return Ok(agents[0].0.clone());
    }
    let mut table: BTreeMap<&[labeled::Label], Vec<Option<&Hypothesis>>> = BTreeMap::new();
    for (i, (d, _)) in agents.iter().enumerate() {
        for h in &d.hypotheses {
            let row = table.entry(&h.labels[..]).or_insert_with(|| alloc::vec![None; agents.len()]);
            if row[i].is_some() {
                return Err(Error::InvalidParameter("density is not marginalized"));
            }
            row[i] = Some(h);
        }
    }
    if !table.values().any(|row| row.iter().all(|h| h.is_some())) {
        return Err(Error::NoCommonLabelSets);
    }
    let ws: Vec<f64> = agents.iter().map(|a| a.1).collect();
    let mut logs = Vec::with_capacity(table.len());
    let mut hyps = Vec::with_capacity(table.len());
    for (labels, row) in table {
        let Some(first) = row.iter().flatten().next() else { continue };
        let mut lw = 0.0;
        for (h, w) in row.iter().zip(&ws) {
            let wi = h.map_or(MISSING_EPS, |h| h.weight);
            lw += if wi > 0.0 { w * math::ln(wi) } else { f64::NEG_INFINITY };
        }
        let mut dens = Vec::with_capacity(labels.len());
        for a in 0..labels.len() {
            let ps: Vec<&GaussianMixture> = row.iter().map(|h| &h.unwrap_or(first).densities[a]).collect();
            let (p, log_k) = gaussian::gm_ci_fuse(&ps, &ws)?;
            lw += log_k;
            dens.push(p);
        }
        logs.push(lw);
        hyps.push(Hypothesis { labels: labels.to_vec(), key: Vec::new(), weight: 0.0, densities: dens });
    }
    let lse = math::log_sum_exp(&logs);
    if lse == f64::NEG_INFINITY {
        return Err(Error::Degenerate("fused hypothesis weights are all zero"));
    }
    for (h, l) in hyps.iter_mut().zip(&logs) {
        h.weight = math::exp(l - lse);
    }
    Ok(DeltaGlmb { hypotheses: hyps })
}

/// KLA of LMBs: `r = r~ / (q~ + r~)` with `r~ = int prod (r_i p_i)^{w_i}` and `q~ = prod (1 - r_i)^{w_i}`.
/// A track missing at an agent counts as `(MISSING_EPS, p)` with `p` from the first agent carrying it.
pub fn lmb_kla(lmbs: &[&Lmb], weights: &[f64]) -> Result<Lmb> {
    let agents = active(lmbs, weights)?;
    if agents.len() == 1 {
        return Ok(agents[0].0.clone());
    }
    let mut table: BTreeMap<labeled::Label, Vec<Option<&Track>>> = BTreeMap::new();
    for (i, (l, _)) in agents.iter().enumerate() {
        for t in &l.tracks {
            table.entry(t.label).or_insert_with(|| alloc::vec![None; agents.len()])[i] = Some(t);
        }
    }
    let ws: Vec<f64> = agents.iter().map(|a| a.1).collect();
    let mut tracks = Vec::with_capacity(table.len());
    for (label, row) in table {
        let Some(first) = row.iter().flatten().next() else { continue };
        let ps: Vec<&GaussianMixture> = row.iter().map(|t| &t.unwrap_or(first).p).collect();
        let (p, log_k) = gaussian::gm_ci_fuse(&ps, &ws)?;
        let (mut lr, mut lq) = (log_k, 0.0);
        for (t, w) in row.iter().zip(&ws) {
            let r = t.map_or(MISSING_EPS, |t| t.r);
            lr += if r > 0.0 { w * math::ln(r) } else { f64::NEG_INFINITY };
            lq += if r < 1.0 { w * math::ln(1.0 - r) } else { f64::NEG_INFINITY };
        }
        let r = if lr == f64::NEG_INFINITY {
            0.0
        } else if lq == f64::NEG_INFINITY {
            1.0
        } else {
            1.0 / (1.0 + math::exp(lq - lr))
        };
        tracks.push(Track { label, r, p });
    }
    Ok(Lmb { tracks })
}

/// Per-node inputs of one consensus tracking cycle. `sensors[i]` is `None` for communication nodes.
pub struct LabeledNetwork<'a, 'b> {
    pub graph: &'a NetworkGraph,
    pub weights: &'a ConsensusWeights,
    pub sensors: &'a [Option<DetectionModel<'b>>],
    pub measurements: &'a [Vec<DVector<f64>>],
    pub steps: usize,
}

impl LabeledNetwork<'_, '_> {
    fn check(&self, n: usize) -> Result<()> {
        if self.graph.len() != n || self.weights.len() != n || self.sensors.len() != n || self.measurements.len() != n {
            return Err(Error::Dimension("per-node inputs"));
        }
        Ok(())
    }

    fn scans(&self, i: usize) -> Vec<Scan<'_, '_>> {
        match &self.sensors[i] {
            Some(m) if self.graph.is_sensor(i) => alloc::vec![(&self.measurements[i][..], m)],
            _ => Vec::new(),
        }
    }
}

/// Runs `steps` rounds of regional fusion; singleton neighbourhoods are left untouched.
fn consensus_rounds<T: Clone>(cur: &mut Vec<T>, net: &LabeledNetwork<'_, '_>, mut fuse: impl FnMut(&[&T], &[f64]) -> Result<T>) -> Result<()> {
    for _ in 0..net.steps {
        let mut next = Vec::with_capacity(cur.len());
        for i in 0..cur.len() {
            let row = net.weights.row(i);
            if row.len() == 1 {
                next.push(cur[i].clone());
                continue;
            }
            let xs: Vec<&T> = row.iter().map(|(j, _)| &cur[*j]).collect();
            let ws: Vec<f64> = row.iter().map(|(_, w)| *w).collect();
            next.push(fuse(&xs, &ws)?);
        }
        *cur = next;
    }
    Ok(())
}

/// One CMδGLMB cycle: local predict, update and marginalize, then `steps` rounds of KLA and merging.
pub fn consensus_mdglmb_step(
    states: &[DeltaGlmb],
    k: u32,
    motion: &LabeledMotion<'_>,
    net: &LabeledNetwork<'_, '_>,
    params: &LabeledParams,
) -> Result<(Vec<DeltaGlmb>, Vec<Vec<LabeledState>>)> {
    net.check(states.len())?;
    let mut cur = Vec::with_capacity(states.len());
    for (i, s) in states.iter().enumerate() {
        cur.push(labeled::mdglmb_local(s, k, motion, &net.scans(i), params)?);
    }
    consensus_rounds(&mut cur, net, |xs, ws| {
        let mut f = mdglmb_kla(xs, ws)?;
        labeled::cap_hypotheses(&mut f, params.hypothesis_cap, params.min_weight)?;
        labeled::reduce_glmb(&mut f, params)?;
        Ok(f)
    })?;
    let est = cur.iter().map(labeled::mdglmb_extract).collect();
    Ok((cur, est))
}

/// One CLMB cycle: local predict and update via δ-GLMB, then `steps` rounds of KLA and merging.
pub fn consensus_lmb_step(
    states: &[Lmb],
    k: u32,
    motion: &LabeledMotion<'_>,
    net: &LabeledNetwork<'_, '_>,
    params: &LabeledParams,
) -> Result<(Vec<Lmb>, Vec<Vec<LabeledState>>)> {
    net.check(states.len())?;
    let mut cur = Vec::with_capacity(states.len());
    for (i, s) in states.iter().enumerate() {
        cur.push(labeled::lmb_local(s, k, motion, &net.scans(i), params)?);
    }
    consensus_rounds(&mut cur, net, |xs, ws| {
        let mut f = lmb_kla(xs, ws)?;
        labeled::prune_tracks(&mut f, params)?;
        Ok(f)
    })?;
    let est = cur.iter().map(labeled::lmb_extract).collect();
    Ok((cur, est))
}
