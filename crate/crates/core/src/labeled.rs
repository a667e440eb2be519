//! Labeled RFS trackers: δ-GLMB prediction and update, Mδ-GLMB marginalization,
//! LMB filtering with δ-GLMB conversion, estimate extraction and labeled samplers.

use alloc::collections::{BTreeMap, BinaryHeap};
use alloc::vec::Vec;
use core::cmp::Ordering;

use nalgebra::DVector;
use rand::Rng;

use crate::error::{Error, Result};
use crate::gaussian::{self, GaussianMixture};
use crate::kalman::{Dynamics, FilterKind};
use crate::math;
use crate::rfs::{self, CardinalityPmf, DetectionModel, IidClusterDensity};

/// Track label `(birth time, index)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Label {
    pub birth_time: u32,
    pub index: u32,
}

impl Label {
    pub fn new(birth_time: u32, index: u32) -> Self {
        Self { birth_time, index }
    }
}

pub type LabeledState = (Label, DVector<f64>);

/// One `(I, xi)` term. `labels` is sorted and `densities[a]` belongs to `labels[a]`.
/// `key` is the association history; it is empty for marginalized densities.
#[derive(Debug, Clone, PartialEq)]
pub struct Hypothesis {
    pub labels: Vec<Label>,
    pub key: Vec<u32>,
    pub weight: f64,
    pub densities: Vec<GaussianMixture>,
}

impl Hypothesis {
    pub fn new(labels: Vec<Label>, weight: f64, densities: Vec<GaussianMixture>) -> Result<Self> {
        if labels.len() != densities.len() {
            return Err(Error::Dimension("one density per label"));
        }
        if labels.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidParameter("labels must be sorted and distinct"));
        }
        if !(weight >= 0.0) {
            return Err(Error::InvalidParameter("hypothesis weight"));
        }
        Ok(Self { labels, key: Vec::new(), weight, densities })
    }

    pub fn density(&self, l: &Label) -> Option<&GaussianMixture> {
        self.labels.binary_search(l).ok().map(|a| &self.densities[a])
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DeltaGlmb {
    pub hypotheses: Vec<Hypothesis>,
}

impl DeltaGlmb {
    /// The density with the single hypothesis `I = {}`.
    pub fn empty() -> Self {
        Self { hypotheses: alloc::vec![Hypothesis { labels: Vec::new(), key: Vec::new(), weight: 1.0, densities: Vec::new() }] }
    }

    pub fn len(&self) -> usize {
        self.hypotheses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hypotheses.is_empty()
    }

    pub fn total_weight(&self) -> f64 {
        self.hypotheses.iter().map(|h| h.weight).sum()
    }

    pub fn labels(&self) -> Vec<Label> {
        let mut out: Vec<Label> = self.hypotheses.iter().flat_map(|h| h.labels.iter().copied()).collect();
        out.sort();
        out.dedup();
        out
    }

    pub fn max_cardinality(&self) -> usize {
        self.hypotheses.iter().map(|h| h.labels.len()).max().unwrap_or(0)
    }

    fn normalize(&mut self) -> Result<()> {
        let t = self.total_weight();
        if !(t > 0.0) || !t.is_finite() {
            return Err(Error::Degenerate("hypothesis weights sum to zero"));
        }
        for h in &mut self.hypotheses {
            h.weight /= t;
        }
        Ok(())
    }
}

/// Bernoulli track of an LMB density.
#[derive(Debug, Clone, PartialEq)]
pub struct Track {
    pub label: Label,
    pub r: f64,
    pub p: GaussianMixture,
}

/// Labeled multi-Bernoulli density, tracks sorted by label.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Lmb {
    pub tracks: Vec<Track>,
}

impl Lmb {
    pub fn new(mut tracks: Vec<Track>) -> Result<Self> {
        tracks.sort_by_key(|t| t.label);
        if tracks.windows(2).any(|w| w[0].label == w[1].label) {
            return Err(Error::LabelCollision);
        }
        if tracks.iter().any(|t| !(0.0..=1.0).contains(&t.r)) {
            return Err(Error::InvalidParameter("existence probability"));
        }
        Ok(Self { tracks })
    }

    /// Birth LMB at time `k`, labels `(k, 0), (k, 1), ...`.
    pub fn birth(k: u32, components: &[(f64, GaussianMixture)]) -> Result<Self> {
        Self::new(components.iter().enumerate().map(|(i, (r, p))| Track { label: Label::new(k, i as u32), r: *r, p: p.clone() }).collect())
    }

    pub fn len(&self) -> usize {
        self.tracks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tracks.is_empty()
    }

    pub fn cardinality(&self) -> Result<CardinalityPmf> {
        let r: Vec<f64> = self.tracks.iter().map(|t| t.r).collect();
        rfs::multi_bernoulli_cardinality(&r)
    }

    pub fn track(&self, l: &Label) -> Option<&Track> {
        self.tracks.binary_search_by_key(l, |t| t.label).ok().map(|i| &self.tracks[i])
    }
}

/// Truncation and component management for the labeled trackers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LabeledParams {
    pub hypothesis_cap: usize,
    pub maps_per_hypothesis: usize,
    pub min_weight: f64,
    /// Squared Mahalanobis gate on measurement-to-track pairs; infinite disables gating.
    pub gate: f64,
    pub gamma_m: f64,
    pub max_components: usize,
    pub lmb_expansion_cap: usize,
    pub r_min: f64,
}

impl Default for LabeledParams {
    fn default() -> Self {
        Self {
            hypothesis_cap: 1000,
            maps_per_hypothesis: 100,
            min_weight: 1e-12,
            gate: f64::INFINITY,
            gamma_m: 4.0,
            max_components: 10,
            lmb_expansion_cap: 12,
            r_min: 1e-5,
        }
    }
}

#[derive(Clone, Copy, PartialEq)]
struct Scored(f64, usize);

impl Eq for Scored {}

impl PartialOrd for Scored {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

// Min-heap order on score, later index first among ties, so the heap top is the entry to evict.
impl Ord for Scored {
    fn cmp(&self, other: &Self) -> Ordering {
        other.0.total_cmp(&self.0).then(self.1.cmp(&other.1))
    }
}

/// The `k` most probable outcomes of independent Bernoulli trials with success
/// probabilities `p`, as inclusion masks with their log probabilities, best first.
pub fn k_best_subsets(p: &[f64], k: usize) -> Vec<(Vec<bool>, f64)> {
    let base: Vec<bool> = p.iter().map(|&q| q >= 0.5).collect();
    let lp = |q: f64| if q > 0.0 { math::ln(q) } else { f64::NEG_INFINITY };
    let base_log: f64 = p.iter().map(|&q| lp(q.max(1.0 - q))).sum();
    if k == 0 || base_log == f64::NEG_INFINITY {
        return Vec::new();
    }
    let mut flips: Vec<(f64, usize)> = p
        .iter()
        .enumerate()
        .map(|(i, &q)| (lp(q.max(1.0 - q)) - lp(q.min(1.0 - q)), i))
        .filter(|(c, _)| c.is_finite())
        .collect();
    flips.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));

    let mut out = alloc::vec![(base.clone(), base_log)];
    // frontier entries: flip set given as sorted positions into `flips`
    let mut sets: Vec<Vec<usize>> = Vec::new();
    let mut heap: BinaryHeap<core::cmp::Reverse<(OrdF64, usize)>> = BinaryHeap::new();
    if !flips.is_empty() {
        sets.push(alloc::vec![0]);
        heap.push(core::cmp::Reverse((OrdF64(flips[0].0), 0)));
    }
    while out.len() < k {
        let Some(core::cmp::Reverse((OrdF64(cost), id))) = heap.pop() else { break };
        let set = sets[id].clone();
        let mut mask = base.clone();
        for &f in &set {
            mask[flips[f].1] = !mask[flips[f].1];
        }
        out.push((mask, base_log - cost));
        let last = *set.last().unwrap_or(&0);
        if last + 1 < flips.len() {
            let mut add = set.clone();
            add.push(last + 1);
            sets.push(add);
            heap.push(core::cmp::Reverse((OrdF64(cost + flips[last + 1].0), sets.len() - 1)));
            let mut swap = set;
            *swap.last_mut().unwrap() = last + 1;
            sets.push(swap);
            heap.push(core::cmp::Reverse((OrdF64(cost - flips[last].0 + flips[last + 1].0), sets.len() - 1)));
        }
    }
    out
}

#[derive(Clone, Copy, PartialEq, Debug)]
struct OrdF64(f64);

impl Eq for OrdF64 {}

impl PartialOrd for OrdF64 {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for OrdF64 {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0)
    }
}

/// The `k` best association maps. `miss[a]` and `det[a][z]` are log scores of track `a`
/// being missed or generating measurement `z`. With `require_all`, every measurement must be
/// assigned. Returns `(theta, score)` with `theta[a] = 0` for a miss and `z + 1` otherwise.
pub fn k_best_assignments(miss: &[f64], det: &[Vec<f64>], m: usize, k: usize, require_all: bool) -> Vec<(Vec<usize>, f64)> {
    let n = miss.len();
    let mut options: Vec<Vec<(f64, usize)>> = (0..n)
        .map(|a| {
            let mut o: Vec<(f64, usize)> = core::iter::once((miss[a], 0)).chain((0..m).map(|z| (det[a][z], z + 1))).filter(|(s, _)| *s > f64::NEG_INFINITY).collect();
            o.sort_by(|x, y| y.0.total_cmp(&x.0).then(x.1.cmp(&y.1)));
            o
        })
        .collect();
    if k == 0 || options.iter().any(|o| o.is_empty()) || (require_all && m > n) {
        return Vec::new();
    }
    let mut bound = alloc::vec![0.0; n + 1];
    for a in (0..n).rev() {
        bound[a] = bound[a + 1] + options[a][0].0;
    }
    struct Search<'a> {
        options: &'a mut Vec<Vec<(f64, usize)>>,
        bound: &'a [f64],
        k: usize,
        m: usize,
        require_all: bool,
        heap: BinaryHeap<Scored>,
        found: Vec<Vec<usize>>,
        used: Vec<bool>,
        theta: Vec<usize>,
        n_used: usize,
    }
    impl Search<'_> {
        fn go(&mut self, a: usize, score: f64) {
            let n = self.theta.len();
            if self.heap.len() == self.k && score + self.bound[a] <= self.heap.peek().map_or(f64::NEG_INFINITY, |s| s.0) {
                return;
            }
            if self.require_all && n - a < self.m - self.n_used {
                return;
            }
            if a == n {
                self.found.push(self.theta.clone());
                self.heap.push(Scored(score, self.found.len() - 1));
                if self.heap.len() > self.k {
                    self.heap.pop();
                }
                return;
            }
            for o in 0..self.options[a].len() {
                let (s, t) = self.options[a][o];
                if t > 0 && self.used[t - 1] {
                    continue;
                }
                if t > 0 {
                    self.used[t - 1] = true;
                    self.n_used += 1;
                }
                self.theta[a] = t;
                self.go(a + 1, score + s);
                if t > 0 {
                    self.used[t - 1] = false;
                    self.n_used -= 1;
                }
            }
        }
    }
    let mut search = Search {
        options: &mut options,
        bound: &bound,
        k,
        m,
        require_all,
        heap: BinaryHeap::new(),
        found: Vec::new(),
        used: alloc::vec![false; m],
        theta: alloc::vec![0; n],
        n_used: 0,
    };
    search.go(0, 0.0);
    let mut best: Vec<Scored> = search.heap.into_vec();
    best.sort_by(|x, y| y.0.total_cmp(&x.0).then(x.1.cmp(&y.1)));
    let found = search.found;
    best.into_iter().map(|s| (found[s.1].clone(), s.0)).collect()
}

fn check_disjoint(existing: &[Label], birth: &Lmb) -> Result<()> {
    if birth.tracks.iter().any(|t| existing.binary_search(&t.label).is_ok()) {
        Err(Error::LabelCollision)
    } else {
        Ok(())
    }
}

fn predict_gm(gm: &GaussianMixture, dynamics: &dyn Dynamics, filter: &FilterKind) -> Result<GaussianMixture> {
    let mut out = GaussianMixture::default();
    for c in &gm.components {
        out.push(c.weight, filter.predict(&c.density, dynamics)?);
    }
    Ok(out)
}

/// Keeps the `cap` heaviest hypotheses above `min_weight` and renormalises.
pub fn cap_hypotheses(d: &mut DeltaGlmb, cap: usize, min_weight: f64) -> Result<()> {
    d.normalize()?;
    d.hypotheses.retain(|h| h.weight >= min_weight && h.weight > 0.0);
    if d.hypotheses.len() > cap {
        let mut idx: Vec<usize> = (0..d.hypotheses.len()).collect();
        idx.sort_by(|&a, &b| d.hypotheses[b].weight.total_cmp(&d.hypotheses[a].weight).then(a.cmp(&b)));
        let mut keep = alloc::vec![false; d.hypotheses.len()];
        for &i in idx.iter().take(cap) {
            keep[i] = true;
        }
        let mut it = keep.into_iter();
        d.hypotheses.retain(|_| it.next().unwrap_or(false));
    }
    d.normalize()
}

/// δ-GLMB prediction with state-independent survival `p_s` and an LMB birth.
pub fn dglmb_predict(d: &DeltaGlmb, birth: &Lmb, p_s: f64, dynamics: &dyn Dynamics, filter: &FilterKind, params: &LabeledParams) -> Result<DeltaGlmb> {
    if !(0.0..=1.0).contains(&p_s) {
        return Err(Error::InvalidParameter("survival probability"));
    }
    check_disjoint(&d.labels(), birth)?;
    let births: Vec<(Label, &GaussianMixture)> = birth.tracks.iter().map(|t| (t.label, &t.p)).collect();
    let mut out = Vec::new();
    for h in &d.hypotheses {
        if h.weight <= 0.0 {
            continue;
        }
        let predicted: Vec<GaussianMixture> = h.densities.iter().map(|p| predict_gm(p, dynamics, filter)).collect::<Result<_>>()?;
        let probs: Vec<f64> = h.labels.iter().map(|_| p_s).chain(birth.tracks.iter().map(|t| t.r)).collect();
        for (mask, lw) in k_best_subsets(&probs, params.hypothesis_cap) {
            let mut items: Vec<(Label, GaussianMixture)> = Vec::new();
            for (a, l) in h.labels.iter().enumerate() {
                if mask[a] {
                    items.push((*l, predicted[a].clone()));
                }
            }
            for (b, (l, p)) in births.iter().enumerate() {
                if mask[h.labels.len() + b] {
                    items.push((*l, (*p).clone()));
                }
            }
            items.sort_by_key(|(l, _)| *l);
            let (labels, densities) = items.into_iter().unzip();
            out.push(Hypothesis { labels, key: h.key.clone(), weight: h.weight * math::exp(lw), densities });
        }
    }
    let mut d = DeltaGlmb { hypotheses: out };
    cap_hypotheses(&mut d, params.hypothesis_cap, params.min_weight)?;
    Ok(d)
}

/// Per-track measurement terms: log of `P_D int p g(y_z|.) / kappa` and the posterior mixtures.
struct TrackTerms {
    det: Vec<f64>,
    posts: Vec<Option<GaussianMixture>>,
}

fn track_terms(p: &GaussianMixture, ys: &[DVector<f64>], model: &DetectionModel<'_>, filter: &FilterKind, gate: f64) -> Result<TrackTerms> {
    let m = ys.len();
    let mut det = alloc::vec![f64::NEG_INFINITY; m];
    let mut posts = alloc::vec![None; m];
    if model.p_d <= 0.0 || m == 0 {
        return Ok(TrackTerms { det, posts });
    }
    let kappa = model.clutter_intensity();
    let offset = math::ln(model.p_d) - if kappa > 0.0 { math::ln(kappa) } else { 0.0 };
    let terms: Vec<_> = p.components.iter().map(|c| filter.terms(&c.density, model.sensor)).collect::<Result<_>>()?;
    for (z, y) in ys.iter().enumerate() {
        let mut lws = Vec::with_capacity(terms.len());
        let mut gated = true;
        let mut comps = Vec::with_capacity(terms.len());
        for (c, t) in p.components.iter().zip(&terms) {
            let e = t.innovation(y, model.sensor);
            if gate.is_finite() && t.mahalanobis_sq(&e) <= gate {
                gated = false;
            }
            let lw = if c.weight > 0.0 { math::ln(c.weight) + t.log_likelihood(&e) } else { f64::NEG_INFINITY };
            lws.push(lw);
            comps.push(t.posterior(&e));
        }
        if gate.is_finite() && gated {
            continue;
        }
        let lse = math::log_sum_exp(&lws);
        if lse == f64::NEG_INFINITY {
            continue;
        }
        det[z] = offset + lse;
        let mut post = GaussianMixture::default();
        for (lw, g) in lws.iter().zip(comps) {
            post.push(math::exp(lw - lse), g);
        }
        posts[z] = Some(post);
    }
    Ok(TrackTerms { det, posts })
}

/// δ-GLMB update with the `maps_per_hypothesis` best association maps of each hypothesis.
/// The association history of each output hypothesis is its parent's extended by `theta`.
pub fn dglmb_update(d: &DeltaGlmb, ys: &[DVector<f64>], model: &DetectionModel<'_>, filter: &FilterKind, params: &LabeledParams) -> Result<DeltaGlmb> {
    if !(0.0..=1.0).contains(&model.p_d) {
        return Err(Error::InvalidParameter("detection probability"));
    }
    if !(model.clutter_rate >= 0.0) || !(model.clutter_density >= 0.0) {
        return Err(Error::InvalidParameter("clutter model"));
    }
    let m = ys.len();
    let require_all = model.clutter_intensity() <= 0.0;
    let log_miss = if model.p_d < 1.0 { math::ln(1.0 - model.p_d) } else { f64::NEG_INFINITY };
    let mut logs = Vec::new();
    let mut out = Vec::new();
    for h in &d.hypotheses {
        if h.weight <= 0.0 {
            continue;
        }
        let terms: Vec<TrackTerms> = h.densities.iter().map(|p| track_terms(p, ys, model, filter, params.gate)).collect::<Result<_>>()?;
        let miss = alloc::vec![log_miss; h.labels.len()];
        let det: Vec<Vec<f64>> = terms.iter().map(|t| t.det.clone()).collect();
        for (theta, score) in k_best_assignments(&miss, &det, m, params.maps_per_hypothesis, require_all) {
            let mut densities = Vec::with_capacity(theta.len());
            for (a, &t) in theta.iter().enumerate() {
                densities.push(if t == 0 { h.densities[a].clone() } else { terms[a].posts[t - 1].clone().ok_or(Error::Degenerate("missing posterior"))? });
            }
            let mut key = h.key.clone();
            key.extend(theta.iter().map(|&t| t as u32));
            logs.push(math::ln(h.weight) + score);
            out.push(Hypothesis { labels: h.labels.clone(), key, weight: 0.0, densities });
        }
    }
    let lse = math::log_sum_exp(&logs);
    if out.is_empty() || lse == f64::NEG_INFINITY {
        return Err(Error::Degenerate("no association map has positive weight"));
    }
    for (h, l) in out.iter_mut().zip(&logs) {
        h.weight = math::exp(l - lse);
    }
    let mut d = DeltaGlmb { hypotheses: out };
    cap_hypotheses(&mut d, params.hypothesis_cap, params.min_weight)?;
    Ok(d)
}

/// Groups hypotheses by label set: weights add up and each label density becomes the
/// weight mixture of its per-history densities. Output is sorted by label set.
pub fn mdglmb_marginalize(d: &DeltaGlmb) -> DeltaGlmb {
    let mut groups: BTreeMap<&[Label], (f64, Vec<usize>)> = BTreeMap::new();
    for (i, h) in d.hypotheses.iter().enumerate() {
        let e = groups.entry(&h.labels[..]).or_insert((0.0, Vec::new()));
        e.0 += h.weight;
        e.1.push(i);
    }
    let mut out = Vec::with_capacity(groups.len());
    for (labels, (w, members)) in groups {
        if !(w > 0.0) {
            continue;
        }
        let densities = (0..labels.len())
            .map(|a| {
                if members.len() == 1 {
                    return d.hypotheses[members[0]].densities[a].clone();
                }
                let mut p = GaussianMixture::default();
                for &i in &members {
                    let h = &d.hypotheses[i];
                    p.extend(&h.densities[a], h.weight / w);
                }
                p
            })
            .collect();
        out.push(Hypothesis { labels: labels.to_vec(), key: Vec::new(), weight: w, densities });
    }
    DeltaGlmb { hypotheses: out }
}

/// `rho(n) = sum_{|I| = n} w^(I)` on `{0, ..., n_max}`. Weights are first accumulated per
/// label set in label-set order, so marginalization leaves the result bit-for-bit unchanged.
pub fn glmb_cardinality(d: &DeltaGlmb, n_max: usize) -> CardinalityPmf {
    let mut groups: BTreeMap<&[Label], f64> = BTreeMap::new();
    for h in &d.hypotheses {
        *groups.entry(&h.labels[..]).or_insert(0.0) += h.weight;
    }
    let mut rho = alloc::vec![0.0; n_max + 1];
    for (labels, w) in groups {
        if labels.len() <= n_max {
            rho[labels.len()] += w;
        }
    }
    CardinalityPmf { rho }
}

/// Labeled PHD `d(x, l) = sum_{I contains l} w^(I) p^(I)(x, l)`.
pub fn glmb_phd(d: &DeltaGlmb, label: &Label, x: &DVector<f64>) -> Result<f64> {
    let mut acc = 0.0;
    for h in &d.hypotheses {
        if let Some(p) = h.density(label) {
            acc += h.weight * p.eval(x)?;
        }
    }
    Ok(acc)
}

/// Per-label PHD as unnormalised mixtures.
pub fn labeled_phd(d: &DeltaGlmb) -> Vec<(Label, GaussianMixture)> {
    let mut map: BTreeMap<Label, GaussianMixture> = BTreeMap::new();
    for h in &d.hypotheses {
        for (l, p) in h.labels.iter().zip(&h.densities) {
            map.entry(*l).or_default().extend(p, h.weight);
        }
    }
    map.into_iter().collect()
}

pub fn lmb_predict(l: &Lmb, birth: &Lmb, p_s: f64, dynamics: &dyn Dynamics, filter: &FilterKind) -> Result<Lmb> {
    if !(0.0..=1.0).contains(&p_s) {
        return Err(Error::InvalidParameter("survival probability"));
    }
    let labels: Vec<Label> = l.tracks.iter().map(|t| t.label).collect();
    check_disjoint(&labels, birth)?;
    let mut tracks = Vec::with_capacity(l.len() + birth.len());
    for t in &l.tracks {
        tracks.push(Track { label: t.label, r: p_s * t.r, p: predict_gm(&t.p, dynamics, filter)? });
    }
    tracks.extend(birth.tracks.iter().cloned());
    Lmb::new(tracks)
}

/// δ-GLMB over the `cap` most likely tracks (by `r`, ties by label) plus the tracks left out.
pub fn lmb_to_glmb(l: &Lmb, cap: usize, k: usize) -> (DeltaGlmb, Vec<Track>) {
    let mut idx: Vec<usize> = (0..l.len()).collect();
    idx.sort_by(|&a, &b| l.tracks[b].r.total_cmp(&l.tracks[a].r).then(a.cmp(&b)));
    let mut expand: Vec<usize> = idx.iter().copied().take(cap).collect();
    expand.sort();
    let carried: Vec<Track> = idx.iter().skip(cap).map(|&i| l.tracks[i].clone()).collect();
    let r: Vec<f64> = expand.iter().map(|&i| l.tracks[i].r).collect();
    let mut hyps = Vec::new();
    for (mask, lw) in k_best_subsets(&r, k) {
        let sel: Vec<usize> = expand.iter().zip(&mask).filter(|(_, m)| **m).map(|(i, _)| *i).collect();
        hyps.push(Hypothesis {
            labels: sel.iter().map(|&i| l.tracks[i].label).collect(),
            key: Vec::new(),
            weight: math::exp(lw),
            densities: sel.iter().map(|&i| l.tracks[i].p.clone()).collect(),
        });
    }
    let mut d = DeltaGlmb { hypotheses: hyps };
    let _ = d.normalize();
    (d, carried)
}

/// `r = sum_{I contains l} w`, `p = sum w p^(I) / r`.
pub fn glmb_to_lmb(d: &DeltaGlmb) -> Lmb {
    let mut map: BTreeMap<Label, (f64, GaussianMixture)> = BTreeMap::new();
    for h in &d.hypotheses {
        for (l, p) in h.labels.iter().zip(&h.densities) {
            let e = map.entry(*l).or_default();
            e.0 += h.weight;
            e.1.extend(p, h.weight);
        }
    }
    let tracks = map
        .into_iter()
        .filter(|(_, (r, _))| *r > 0.0)
        .map(|(label, (r, p))| Track { label, r: r.min(1.0), p: p.scaled(1.0 / r) })
        .collect();
    Lmb { tracks }
}

pub fn lmb_update(l: &Lmb, ys: &[DVector<f64>], model: &DetectionModel<'_>, filter: &FilterKind, params: &LabeledParams) -> Result<Lmb> {
    let (d, carried) = lmb_to_glmb(l, params.lmb_expansion_cap, params.hypothesis_cap);
    let post = dglmb_update(&d, ys, model, filter, params)?;
    let mut out = glmb_to_lmb(&post);
    // Tracks outside the expansion are updated as missed.
    out.tracks.extend(carried.into_iter().map(|t| {
        let r = t.r * (1.0 - model.p_d) / (1.0 - t.r * model.p_d);
        Track { r: if r.is_finite() { r } else { t.r }, ..t }
    }));
    Lmb::new(out.tracks)
}

/// MAP cardinality, then the heaviest label set of that size, then each label's heaviest component mean.
pub fn mdglmb_extract(d: &DeltaGlmb) -> Vec<LabeledState> {
    if d.is_empty() {
        return Vec::new();
    }
    let rho = glmb_cardinality(d, d.max_cardinality());
    let c_hat = rho.map_estimate();
    let mut best: Option<&Hypothesis> = None;
    for h in d.hypotheses.iter().filter(|h| h.labels.len() == c_hat) {
        if best.is_none_or(|b| h.weight > b.weight) {
            best = Some(h);
        }
    }
    best.map(|h| h.labels.iter().zip(&h.densities).filter_map(|(l, p)| p.peak_mean().map(|x| (*l, x.clone()))).collect()).unwrap_or_default()
}

/// Cardinality mode of the LMB, then the most likely tracks (ties by label).
pub fn lmb_extract(l: &Lmb) -> Vec<LabeledState> {
    let Ok(rho) = l.cardinality() else { return Vec::new() };
    let c_hat = rho.map_estimate();
    let mut idx: Vec<usize> = (0..l.len()).collect();
    idx.sort_by(|&a, &b| l.tracks[b].r.total_cmp(&l.tracks[a].r).then(a.cmp(&b)));
    let mut out: Vec<LabeledState> = idx.into_iter().take(c_hat).filter_map(|i| l.tracks[i].p.peak_mean().map(|x| (l.tracks[i].label, x.clone()))).collect();
    out.sort_by_key(|(l, _)| *l);
    out
}

pub fn sample_labeled_poisson<R: Rng + ?Sized>(intensity: &GaussianMixture, k: u32, rng: &mut R) -> Result<Vec<LabeledState>> {
    let xs = rfs::sample_poisson_rfs(intensity, rng)?;
    Ok(xs.into_iter().enumerate().map(|(i, x)| (Label::new(k, i as u32), x)).collect())
}

pub fn sample_labeled_iid_cluster<R: Rng + ?Sized>(d: &IidClusterDensity, k: u32, rng: &mut R) -> Result<Vec<LabeledState>> {
    let xs = rfs::sample_iid_cluster(d, rng)?;
    Ok(xs.into_iter().enumerate().map(|(i, x)| (Label::new(k, i as u32), x)).collect())
}

pub fn sample_labeled_lmb<R: Rng + ?Sized>(l: &Lmb, rng: &mut R) -> Result<Vec<LabeledState>> {
    let mut out = Vec::new();
    for t in &l.tracks {
        if let Some(x) = rfs::sample_bernoulli(t.r, &t.p, rng)?.pop() {
            out.push((t.label, x));
        }
    }
    Ok(out)
}

/// Merge, cap and renormalise a location density.
pub fn reduce_density(p: &GaussianMixture, gamma_m: f64, max_components: usize) -> Result<GaussianMixture> {
    if p.len() <= 1 {
        return Ok(p.clone());
    }
    let merged = gaussian::merge(p, gamma_m)?;
    Ok(gaussian::prune(&merged, max_components)?.normalized())
}

pub fn reduce_glmb(d: &mut DeltaGlmb, params: &LabeledParams) -> Result<()> {
    for h in &mut d.hypotheses {
        for p in &mut h.densities {
            *p = reduce_density(p, params.gamma_m, params.max_components)?;
        }
    }
    Ok(())
}

/// Survival, birth components and single-object motion of the labeled trackers.
pub struct LabeledMotion<'a> {
    pub p_s: f64,
    pub birth: Vec<(f64, GaussianMixture)>,
    pub dynamics: &'a dyn Dynamics,
    pub filter: FilterKind,
}

impl LabeledMotion<'_> {
    pub fn birth_lmb(&self, k: u32) -> Result<Lmb> {
        Lmb::birth(k, &self.birth)
    }
}

pub type Scan<'s, 'a> = (&'s [DVector<f64>], &'s DetectionModel<'a>);

/// Predict, then for each scan update and marginalize, then reduce the location densities.
pub fn mdglmb_local(d: &DeltaGlmb, k: u32, motion: &LabeledMotion<'_>, scans: &[Scan<'_, '_>], params: &LabeledParams) -> Result<DeltaGlmb> {
    let mut cur = dglmb_predict(d, &motion.birth_lmb(k)?, motion.p_s, motion.dynamics, &motion.filter, params)?;
    if scans.is_empty() {
        cur = mdglmb_marginalize(&cur);
    }
    for (ys, model) in scans {
        cur = mdglmb_marginalize(&dglmb_update(&cur, ys, model, &motion.filter, params)?);
        reduce_glmb(&mut cur, params)?;
    }
    if scans.is_empty() {
        reduce_glmb(&mut cur, params)?;
    }
    Ok(cur)
}

/// One cycle of the centralized Mδ-GLMB filter.
pub fn mdglmb_step(d: &DeltaGlmb, k: u32, motion: &LabeledMotion<'_>, scans: &[Scan<'_, '_>], params: &LabeledParams) -> Result<(DeltaGlmb, Vec<LabeledState>)> {
    let out = mdglmb_local(d, k, motion, scans, params)?;
    let est = mdglmb_extract(&out);
    Ok((out, est))
}

pub fn prune_tracks(l: &mut Lmb, params: &LabeledParams) -> Result<()> {
    l.tracks.retain(|t| t.r >= params.r_min);
    for t in &mut l.tracks {
        t.p = reduce_density(&t.p, params.gamma_m, params.max_components)?;
    }
    Ok(())
}

pub fn lmb_local(l: &Lmb, k: u32, motion: &LabeledMotion<'_>, scans: &[Scan<'_, '_>], params: &LabeledParams) -> Result<Lmb> {
    let mut cur = lmb_predict(l, &motion.birth_lmb(k)?, motion.p_s, motion.dynamics, &motion.filter)?;
    for (ys, model) in scans {
        cur = lmb_update(&cur, ys, model, &motion.filter, params)?;
        prune_tracks(&mut cur, params)?;
    }
    if scans.is_empty() {
        prune_tracks(&mut cur, params)?;
    }
    Ok(cur)
}

/// One cycle of the centralized LMB filter.
pub fn lmb_step(l: &Lmb, k: u32, motion: &LabeledMotion<'_>, scans: &[Scan<'_, '_>], params: &LabeledParams) -> Result<(Lmb, Vec<LabeledState>)> {
    let out = lmb_local(l, k, motion, scans, params)?;
    let est = lmb_extract(&out);
    Ok((out, est))
}

/// Labeled densities on a 1-D grid, used to check the GLMB moment-matching approximation.
pub mod grid {
    use super::*;

    /// Joint masses `pi(L, x_1..x_|L|)` per label set, row-major over the grid in label order.
    #[derive(Debug, Clone, PartialEq)]
    pub struct GridLabeledDensity {
        pub grid_size: usize,
        pub tables: Vec<(Vec<Label>, Vec<f64>)>,
    }

    /// Per label set: weight and one marginal PMF on the grid per label.
    #[derive(Debug, Clone, PartialEq)]
    pub struct GridGlmb {
        pub grid_size: usize,
        pub hypotheses: Vec<(Vec<Label>, f64, Vec<Vec<f64>>)>,
    }

    fn validate(g: &GridLabeledDensity) -> Result<()> {
        for (labels, t) in &g.tables {
            if labels.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::InvalidParameter("labels must be sorted and distinct"));
            }
            let expect = (0..labels.len()).fold(1usize, |a, _| a * g.grid_size);
            if t.len() != expect {
                return Err(Error::Dimension("grid table size"));
            }
        }
        Ok(())
    }

    fn marginal(table: &[f64], n: usize, g: usize, a: usize) -> Vec<f64> {
        let mut out = alloc::vec![0.0; g];
        let stride = (a + 1..n).fold(1usize, |s, _| s * g);
        for (idx, v) in table.iter().enumerate() {
            out[(idx / stride) % g] += v;
        }
        out
    }

    /// Weights `w(L)` are the masses of each label set and `p^(L)(., l)` the normalised
    /// single-label marginals of the joint table.
    pub fn glmb_approximate(d: &GridLabeledDensity) -> Result<GridGlmb> {
        validate(d)?;
        let g = d.grid_size;
        let mut hyps = Vec::new();
        for (labels, table) in &d.tables {
            let w: f64 = table.iter().sum();
            if !(w > 0.0) {
                continue;
            }
            let n = labels.len();
            let ps = (0..n).map(|a| marginal(table, n, g, a).into_iter().map(|v| v / w).collect()).collect();
            hyps.push((labels.clone(), w, ps));
        }
        Ok(GridGlmb { grid_size: g, hypotheses: hyps })
    }

    pub fn cardinality(d: &GridLabeledDensity, n_max: usize) -> Vec<f64> {
        let mut rho = alloc::vec![0.0; n_max + 1];
        for (labels, t) in &d.tables {
            rho[labels.len()] += t.iter().sum::<f64>();
        }
        rho
    }

    pub fn glmb_cardinality(d: &GridGlmb, n_max: usize) -> Vec<f64> {
        let mut rho = alloc::vec![0.0; n_max + 1];
        for (labels, w, _) in &d.hypotheses {
            rho[labels.len()] += w;
        }
        rho
    }

    /// `d(x_i, l)` by summing the joint tables over every other coordinate.
    pub fn labeled_phd(d: &GridLabeledDensity, label: &Label) -> Vec<f64> {
        let mut out = alloc::vec![0.0; d.grid_size];
        for (labels, t) in &d.tables {
            if let Ok(a) = labels.binary_search(label) {
                for (o, v) in out.iter_mut().zip(marginal(t, labels.len(), d.grid_size, a)) {
                    *o += v;
                }
            }
        }
        out
    }

    pub fn glmb_labeled_phd(d: &GridGlmb, label: &Label) -> Vec<f64> {
        let mut out = alloc::vec![0.0; d.grid_size];
        for (labels, w, ps) in &d.hypotheses {
            if let Ok(a) = labels.binary_search(label) {
                for (o, v) in out.iter_mut().zip(&ps[a]) {
                    *o += w * v;
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::grid::{glmb_approximate, glmb_labeled_phd, cardinality, GridLabeledDensity};
    use super::*;
    use crate::gaussian::{Gaussian, GmComponent};
    use crate::kalman::{kf_correct, LinearModel};
    use alloc::vec;
    use nalgebra::DMatrix;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn l(i: u32) -> Label {
        Label::new(0, i)
    }

    fn g1(m: f64, v: f64) -> GaussianMixture {
        GaussianMixture::single(Gaussian::scalar(m, v))
    }

    fn lm(q: f64, r: f64) -> LinearModel {
        let m = |v| DMatrix::from_element(1, 1, v);
        LinearModel::new(m(1.0), m(q), m(1.0), m(r)).unwrap()
    }

    fn hyp(labels: &[u32], w: f64, ps: Vec<GaussianMixture>) -> Hypothesis {
        Hypothesis::new(labels.iter().map(|&i| l(i)).collect(), w, ps).unwrap()
    }

    #[test]
    fn k_best_subsets_matches_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..30 {
            let n = rng.random_range(0..7);
            let p: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
            let mut all: Vec<f64> = (0..1usize << n)
                .map(|mask| (0..n).map(|i| if mask >> i & 1 == 1 { p[i].ln() } else { (1.0 - p[i]).ln() }).sum())
                .collect();
            all.sort_by(|a, b| b.total_cmp(a));
            let k = rng.random_range(1..(1 << n) + 3);
            let got = k_best_subsets(&p, k);
            assert_eq!(got.len(), k.min(1 << n));
            for (g, e) in got.iter().zip(&all) {
                assert!((g.1 - e).abs() < 1e-12);
                let direct: f64 = g.0.iter().zip(&p).map(|(m, q)| if *m { q.ln() } else { (1.0 - q).ln() }).sum();
                assert!((direct - g.1).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn k_best_assignments_matches_enumeration() {
        fn all_maps(n: usize, m: usize) -> Vec<Vec<usize>> {
            if n == 0 {
                return vec![vec![]];
            }
            let mut out = Vec::new();
            for rest in all_maps(n - 1, m) {
                for t in 0..=m {
                    if t == 0 || !rest.contains(&t) {
                        let mut v = rest.clone();
                        v.push(t);
                        out.push(v);
                    }
                }
            }
            out
        }
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for trial in 0..40 {
            let n = rng.random_range(0..5);
            let m = rng.random_range(0..5);
            let require_all = trial % 3 == 0;
            let miss: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..0.0)).collect();
            let det: Vec<Vec<f64>> = (0..n).map(|_| (0..m).map(|_| if rng.random_bool(0.2) { f64::NEG_INFINITY } else { rng.random_range(-4.0..4.0) }).collect()).collect();
            let mut scores: Vec<f64> = all_maps(n, m)
                .into_iter()
                .filter(|t| !require_all || t.iter().filter(|x| **x > 0).count() == m)
                .map(|t| t.iter().enumerate().map(|(a, &x)| if x == 0 { miss[a] } else { det[a][x - 1] }).sum::<f64>())
                .filter(|s| s.is_finite())
                .collect();
            scores.sort_by(|a, b| b.total_cmp(a));
            let k = rng.random_range(1..30);
            let got = k_best_assignments(&miss, &det, m, k, require_all);
            assert_eq!(got.len(), k.min(scores.len()), "trial {trial}");
            for (g, e) in got.iter().zip(&scores) {
                assert!((g.1 - e).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn predict_identity_when_everything_survives() {
        let m = lm(0.0, 1.0);
        let d = DeltaGlmb { hypotheses: vec![hyp(&[1], 0.3, vec![g1(1.0, 2.0)]), hyp(&[1, 2], 0.7, vec![g1(1.0, 2.0), g1(-4.0, 1.0)])] };
        let p = dglmb_predict(&d, &Lmb::default(), 1.0, &m, &FilterKind::Ekf, &LabeledParams::default()).unwrap();
        assert_eq!(p.len(), 2);
        for (a, b) in p.hypotheses.iter().zip(&d.hypotheses) {
            assert_eq!(a.labels, b.labels);
            assert!((a.weight - b.weight).abs() < 1e-15);
            assert_eq!(a.densities, b.densities);
        }
    }

    #[test]
    fn predict_survival_split() {
        let m = lm(0.0, 1.0);
        let d = DeltaGlmb { hypotheses: vec![hyp(&[1], 1.0, vec![g1(0.0, 1.0)])] };
        let p = dglmb_predict(&d, &Lmb::default(), 0.5, &m, &FilterKind::Ekf, &LabeledParams::default()).unwrap();
        let card = glmb_cardinality(&p, 1);
        assert!((card.rho[0] - 0.5).abs() < 1e-15 && (card.rho[1] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn birth_only_cardinality_is_poisson_binomial() {
        let m = lm(1.0, 1.0);
        let birth = Lmb::birth(1, &[(0.09, g1(0.0, 1.0)), (0.09, g1(5.0, 1.0))]).unwrap();
        let p = dglmb_predict(&DeltaGlmb::empty(), &birth, 0.99, &m, &FilterKind::Ekf, &LabeledParams { min_weight: 0.0, ..Default::default() }).unwrap();
        let card = glmb_cardinality(&p, 2);
        let expect = rfs::multi_bernoulli_cardinality(&[0.09, 0.09]).unwrap();
        for (a, b) in card.rho.iter().zip(&expect.rho) {
            assert!((a - b).abs() < 1e-15);
        }
        assert!(dglmb_predict(&p, &birth, 0.99, &m, &FilterKind::Ekf, &LabeledParams::default()).is_err());
    }

    #[test]
    fn update_examples() {
        let m = lm(1.0, 0.5);
        let params = LabeledParams::default();
        let y = [DVector::from_element(1, 0.8)];

        let model = DetectionModel { p_d: 0.9, clutter_rate: 2.0, clutter_density: 0.1, sensor: &m };
        let u = dglmb_update(&DeltaGlmb::empty(), &y, &model, &FilterKind::Ekf, &params).unwrap();
        assert_eq!(u.len(), 1);
        assert!((u.hypotheses[0].weight - 1.0).abs() < 1e-15);

        let prior = Gaussian::scalar(0.0, 2.0);
        let d = DeltaGlmb { hypotheses: vec![hyp(&[1], 1.0, vec![GaussianMixture::single(prior.clone())])] };
        let model = DetectionModel { p_d: 1.0, clutter_rate: 0.0, clutter_density: 0.1, sensor: &m };
        let u = dglmb_update(&d, &y, &model, &FilterKind::Ekf, &params).unwrap();
        assert_eq!(u.len(), 1);
        let (kf, _) = kf_correct(&prior, &y[0], &m).unwrap();
        let c = &u.hypotheses[0].densities[0].components[0].density;
        assert!((c.mean[0] - kf.mean[0]).abs() < 1e-12 && (c.cov[(0, 0)] - kf.cov[(0, 0)]).abs() < 1e-12);

        let (p_d, kappa) = (0.7, 0.05);
        let model = DetectionModel { p_d, clutter_rate: 0.5, clutter_density: kappa / 0.5, sensor: &m };
        let u = dglmb_update(&d, &y, &model, &FilterKind::Ekf, &params).unwrap();
        assert_eq!(u.len(), 2);
        let g = Gaussian::scalar(0.0, 2.5).pdf(&y[0]).unwrap();
        let (a, b) = (1.0 - p_d, p_d * g / kappa);
        let detected = u.hypotheses.iter().find(|h| h.key == vec![1]).unwrap();
        assert!((detected.weight - b / (a + b)).abs() < 1e-12);
    }

    #[test]
    fn perfect_detection_keeps_injective_maps() {
        let m = lm(1.0, 0.5);
        let d = DeltaGlmb { hypotheses: vec![hyp(&[1, 2, 3], 1.0, vec![g1(0.0, 1.0), g1(2.0, 1.0), g1(4.0, 1.0)])] };
        let ys: Vec<DVector<f64>> = [0.1, 2.2, 3.9].iter().map(|&v| DVector::from_element(1, v)).collect();
        let model = DetectionModel { p_d: 1.0, clutter_rate: 0.0, clutter_density: 0.1, sensor: &m };
        let u = dglmb_update(&d, &ys, &model, &FilterKind::Ekf, &LabeledParams { min_weight: 0.0, ..Default::default() }).unwrap();
        assert_eq!(u.len(), 6);
        assert!((u.total_weight() - 1.0).abs() < 1e-12);
        let ys2 = &ys[..2];
        assert!(dglmb_update(&d, ys2, &model, &FilterKind::Ekf, &LabeledParams::default()).is_err());
    }

    fn example_e2() -> (DeltaGlmb, GaussianMixture, GaussianMixture) {
        let (pa, pb) = (g1(0.0, 1.0), g1(3.0, 2.0));
        let (qa, qb) = (g1(10.0, 1.0), g1(12.0, 1.0));
        let d = DeltaGlmb {
            hypotheses: vec![
                Hypothesis { labels: vec![l(1)], key: vec![1], weight: 0.3, densities: vec![pa.clone()] },
                Hypothesis { labels: vec![l(1)], key: vec![2], weight: 0.1, densities: vec![pb.clone()] },
                Hypothesis { labels: vec![l(1), l(2)], key: vec![1], weight: 0.4, densities: vec![pa.clone(), qa] },
                Hypothesis { labels: vec![l(1), l(2)], key: vec![2], weight: 0.2, densities: vec![pb.clone(), qb] },
            ],
        };
        (d, pa, pb)
    }

    #[test]
    fn marginalization_example() {
        let (d, pa, pb) = example_e2();
        let m = mdglmb_marginalize(&d);
        assert_eq!(m.len(), 2);
        assert!((m.hypotheses[0].weight - 0.4).abs() < 1e-15);
        assert!((m.hypotheses[1].weight - 0.6).abs() < 1e-15);
        let x = DVector::from_element(1, 0.7);
        let expect = (0.3 * pa.eval(&x).unwrap() + 0.1 * pb.eval(&x).unwrap()) / 0.4;
        assert!((m.hypotheses[0].densities[0].eval(&x).unwrap() - expect).abs() < 1e-15);
        assert_eq!(glmb_cardinality(&d, 2), glmb_cardinality(&m, 2));
        let single = mdglmb_marginalize(&m);
        assert_eq!(single, m);
    }

    #[test]
    fn example_e1_cardinality_phd_and_extraction() {
        let d = DeltaGlmb { hypotheses: vec![hyp(&[1], 0.4, vec![g1(0.0, 1.0)]), hyp(&[1, 2], 0.6, vec![g1(0.0, 1.0), g1(5.0, 1.0)])] };
        let c = glmb_cardinality(&d, 2);
        assert_eq!(c.rho, vec![0.0, 0.4, 0.6]);
        let phd = labeled_phd(&d);
        assert!((phd[0].1.total_weight() - 1.0).abs() < 1e-15);
        assert!((phd[1].1.total_weight() - 0.6).abs() < 1e-15);
        let est = mdglmb_extract(&d);
        assert_eq!(est.iter().map(|e| e.0).collect::<Vec<_>>(), vec![l(1), l(2)]);
        assert!(mdglmb_extract(&DeltaGlmb::default()).is_empty());
        assert_eq!(glmb_cardinality(&DeltaGlmb::empty(), 2).rho, vec![1.0, 0.0, 0.0]);
        let one = DeltaGlmb { hypotheses: vec![hyp(&[1], 1.0, vec![g1(2.5, 1.0)])] };
        assert_eq!(mdglmb_extract(&one), vec![(l(1), DVector::from_element(1, 2.5))]);
    }

    #[test]
    fn marginalization_preserves_phd_on_random_densities() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..20 {
            let mut hyps = Vec::new();
            for mask in 0u32..16 {
                let labels: Vec<u32> = (0..4).filter(|i| mask >> i & 1 == 1).collect();
                for k in 0..rng.random_range(0..4) {
                    let ps = labels.iter().map(|_| g1(rng.random_range(-5.0..5.0), rng.random_range(0.2..3.0))).collect();
                    let mut h = hyp(&labels, rng.random_range(0.0..1.0), ps);
                    h.key = vec![k];
                    hyps.push(h);
                }
            }
            let mut d = DeltaGlmb { hypotheses: hyps };
            if d.normalize().is_err() {
                continue;
            }
            let m = mdglmb_marginalize(&d);
            assert_eq!(glmb_cardinality(&d, 4), glmb_cardinality(&m, 4));
            for i in 0..4 {
                for s in 0..50 {
                    let x = DVector::from_element(1, -8.0 + 16.0 * s as f64 / 49.0);
                    assert!((glmb_phd(&d, &l(i), &x).unwrap() - glmb_phd(&m, &l(i), &x).unwrap()).abs() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn lmb_predict_and_update_examples() {
        let m = lm(0.0, 0.5);
        let l0 = Lmb::new(vec![Track { label: l(1), r: 0.8, p: g1(1.0, 2.0) }]).unwrap();
        let same = lmb_predict(&l0, &Lmb::default(), 1.0, &m, &FilterKind::Ekf).unwrap();
        assert_eq!(same, l0);
        let half = lmb_predict(&l0, &Lmb::default(), 0.5, &m, &FilterKind::Ekf).unwrap();
        assert!((half.tracks[0].r - 0.4).abs() < 1e-15);
        let clash = Lmb::new(vec![Track { label: l(1), r: 0.1, p: g1(0.0, 1.0) }]).unwrap();
        assert_eq!(lmb_predict(&l0, &clash, 0.5, &m, &FilterKind::Ekf), Err(Error::LabelCollision));

        let params = LabeledParams::default();
        let y = [DVector::from_element(1, 1.4)];
        let model = DetectionModel { p_d: 1.0, clutter_rate: 0.0, clutter_density: 0.1, sensor: &m };
        let u = lmb_update(&l0, &y, &model, &FilterKind::Ekf, &params).unwrap();
        assert!((u.tracks[0].r - 1.0).abs() < 1e-12);
        let (kf, _) = kf_correct(&Gaussian::scalar(1.0, 2.0), &y[0], &m).unwrap();
        assert!((u.tracks[0].p.components[0].density.mean[0] - kf.mean[0]).abs() < 1e-12);

        let model = DetectionModel { p_d: 0.0, clutter_rate: 1.0, clutter_density: 0.1, sensor: &m };
        let u = lmb_update(&l0, &[], &model, &FilterKind::Ekf, &params).unwrap();
        assert!((u.tracks[0].r - 0.8).abs() < 1e-12);
        assert_eq!(u.tracks[0].p, l0.tracks[0].p);
    }

    #[test]
    fn lmb_collapse_preserves_phd() {
        let m = lm(0.0, 0.5);
        let lmb = Lmb::new(vec![
            Track { label: l(1), r: 0.7, p: g1(0.0, 1.0) },
            Track { label: l(2), r: 0.4, p: g1(1.5, 2.0) },
            Track { label: l(3), r: 0.95, p: g1(6.0, 1.0) },
        ])
        .unwrap();
        let ys: Vec<DVector<f64>> = [0.3, 1.0, 5.5, -7.0].iter().map(|&v| DVector::from_element(1, v)).collect();
        let model = DetectionModel { p_d: 0.8, clutter_rate: 1.0, clutter_density: 0.05, sensor: &m };
        let params = LabeledParams { min_weight: 0.0, maps_per_hypothesis: 1000, ..Default::default() };
        let (d, _) = lmb_to_glmb(&lmb, 12, 1000);
        let post = dglmb_update(&d, &ys, &model, &FilterKind::Ekf, &params).unwrap();
        let collapsed = glmb_to_lmb(&post);
        for t in &collapsed.tracks {
            for s in 0..40 {
                let x = DVector::from_element(1, -8.0 + 0.4 * s as f64);
                let a = t.r * t.p.eval(&x).unwrap();
                let b = glmb_phd(&post, &t.label, &x).unwrap();
                assert!((a - b).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn lmb_extraction() {
        let lmb = Lmb::new(vec![Track { label: l(1), r: 0.9, p: g1(1.0, 1.0) }, Track { label: l(2), r: 0.1, p: g1(2.0, 1.0) }]).unwrap();
        let c = lmb.cardinality().unwrap();
        assert!((c.rho[1] - 0.82).abs() < 1e-12);
        assert_eq!(lmb_extract(&lmb), vec![(l(1), DVector::from_element(1, 1.0))]);
        let none = Lmb::new(vec![Track { label: l(1), r: 0.0, p: g1(1.0, 1.0) }]).unwrap();
        assert!(lmb_extract(&none).is_empty());
        let tie = Lmb::new(vec![Track { label: l(2), r: 0.6, p: g1(2.0, 1.0) }, Track { label: l(1), r: 0.6, p: g1(1.0, 1.0) }, Track { label: l(3), r: 0.05, p: g1(3.0, 1.0) }]).unwrap();
        let est = lmb_extract(&tie);
        assert!(est.len() == 1 || est.len() == 2);
        assert_eq!(est[0].0, l(1));
    }

    #[test]
    fn labeled_samplers() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let all = Lmb::new((0..5).map(|i| Track { label: l(i), r: 1.0, p: g1(i as f64, 1.0) }).collect()).unwrap();
        let s = sample_labeled_lmb(&all, &mut rng).unwrap();
        assert_eq!(s.iter().map(|x| x.0).collect::<Vec<_>>(), (0..5).map(l).collect::<Vec<_>>());

        let p = sample_labeled_poisson(&GaussianMixture::new(vec![GmComponent::new(4.0, DVector::zeros(1), DMatrix::identity(1, 1))]), 3, &mut rng).unwrap();
        for (i, (lab, _)) in p.iter().enumerate() {
            assert_eq!(*lab, Label::new(3, i as u32));
        }

        let lmb = Lmb::new(vec![Track { label: l(0), r: 0.3, p: g1(0.0, 1.0) }, Track { label: l(1), r: 0.75, p: g1(0.0, 1.0) }]).unwrap();
        let mut hits = [0usize; 2];
        for _ in 0..10_000 {
            for (lab, _) in sample_labeled_lmb(&lmb, &mut rng).unwrap() {
                hits[lab.index as usize] += 1;
            }
        }
        assert!((hits[0] as f64 / 1e4 - 0.3).abs() < 0.02);
        assert!((hits[1] as f64 / 1e4 - 0.75).abs() < 0.02);
    }

    #[test]
    fn grid_approximation_matches_moments() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let g: usize = 10;
        for _ in 0..20 {
            let mut tables = Vec::new();
            for mask in 0u32..8 {
                let labels: Vec<Label> = (0..3).filter(|i| mask >> i & 1 == 1).map(l).collect();
                let size = g.pow(labels.len() as u32);
                tables.push((labels, (0..size).map(|_| rng.random_range(0.0..1.0f64).powi(3)).collect::<Vec<f64>>()));
            }
            let total: f64 = tables.iter().flat_map(|t| t.1.iter()).sum();
            for t in &mut tables {
                t.1.iter_mut().for_each(|v| *v /= total);
            }
            let dens = GridLabeledDensity { grid_size: g, tables };
            let approx = glmb_approximate(&dens).unwrap();
            for (a, b) in cardinality(&dens, 3).iter().zip(grid::glmb_cardinality(&approx, 3)) {
                assert!((a - b).abs() < 1e-9);
            }
            for i in 0..3 {
                for (a, b) in grid::labeled_phd(&dens, &l(i)).iter().zip(glmb_labeled_phd(&approx, &l(i))) {
                    assert!((a - b).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn mdglmb_cycle_hypothesis_bound() {
        let m = lm(0.1, 0.5);
        let motion = LabeledMotion { p_s: 0.95, birth: vec![(0.1, g1(0.0, 4.0)), (0.1, g1(10.0, 4.0))], dynamics: &m, filter: FilterKind::Ekf };
        let model = DetectionModel { p_d: 0.9, clutter_rate: 1.0, clutter_density: 0.05, sensor: &m };
        let params = LabeledParams::default();
        let mut d = DeltaGlmb::empty();
        for k in 0..6u32 {
            let ys = vec![DVector::from_element(1, 0.2), DVector::from_element(1, 9.7)];
            let pred_labels = d.labels().len() + 2;
            let (nd, est) = mdglmb_step(&d, k, &motion, &[(&ys, &model)], &params).unwrap();
            assert!(nd.len() <= 1 << pred_labels);
            assert!((nd.total_weight() - 1.0).abs() < 1e-9);
            let mut labs: Vec<Label> = est.iter().map(|e| e.0).collect();
            labs.dedup();
            assert_eq!(labs.len(), est.len());
            d = nd;
        }
        let (_, est) = mdglmb_step(&d, 6, &motion, &[(&[DVector::from_element(1, 0.1), DVector::from_element(1, 10.1)][..], &model)], &params).unwrap();
        assert_eq!(est.len(), 2);
    }
}
