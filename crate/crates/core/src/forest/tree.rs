//! Hoeffding tree over binned features.
//!
//! Leaves accumulate per-class counts for every (feature, bin). Once a leaf
//! has seen `grace_period` weighted examples since its last attempt, it
//! compares the best and runner-up information gains (in nats) across
//! features and splits when the lead exceeds the Hoeffding bound or the
//! bound falls below the tie threshold.

use crate::codec::{ByteReader, ByteWriter, CodecError};
use crate::featurizer::Binning;
use crate::hash::fnv1a64;
use crate::model::ClassLabel;

pub const DEFAULT_GRACE_PERIOD: u32 = 50;
pub const DEFAULT_SPLIT_CONFIDENCE: f64 = 1e-6;
pub const DEFAULT_TIE_THRESHOLD: f64 = 0.05;
pub const DEFAULT_MAX_DEPTH: u32 = 9;

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TreeParams {
    pub grace_period: u32,
    pub split_confidence: f64,
    pub tie_threshold: f64,
    pub max_depth: u32,
}

impl Default for TreeParams {
    fn default() -> Self {
        Self {
            grace_period: DEFAULT_GRACE_PERIOD,
            split_confidence: DEFAULT_SPLIT_CONFIDENCE,
            tie_threshold: DEFAULT_TIE_THRESHOLD,
            max_depth: DEFAULT_MAX_DEPTH,
        }
    }
}

impl TreeParams {
    pub fn validate(&self) -> Result<(), String> {
        if self.grace_period == 0 {
            return Err("grace period must be positive".into());
        }
        if !(self.split_confidence > 0.0 && self.split_confidence < 1.0) {
            return Err("split confidence must lie in (0, 1)".into());
        }
        if !(self.tie_threshold >= 0.0 && self.tie_threshold.is_finite()) {
            return Err("tie threshold must be finite and nonnegative".into());
        }
        Ok(())
    }
}

/// `sqrt(R^2 ln(1/delta) / (2n))`.
pub fn hoeffding_bound(range: f64, delta: f64, n: f64) -> f64 {
    (range * range * (1.0 / delta).ln() / (2.0 * n)).sqrt()
}

/// Entropy range for two classes, in nats.
pub const GAIN_RANGE: f64 = std::f64::consts::LN_2;

/// Feature bin layout shared by every tree of a forest.
#[derive(Debug, Clone, PartialEq)]
pub struct Geometry {
    pub binnings: Vec<Binning>,
    offsets: Vec<usize>,
    total_bins: usize,
}

impl Geometry {
    pub fn new(binnings: Vec<Binning>) -> Self {
        let mut offsets = Vec::with_capacity(binnings.len());
        let mut total = 0;
        for b in &binnings {
            offsets.push(total);
            total += b.bin_count();
        }
        Self { binnings, offsets, total_bins: total }
    }

    pub fn dim(&self) -> usize {
        self.binnings.len()
    }

    pub fn bins_of(&self, x: &[f64]) -> Vec<usize> {
        self.binnings.iter().zip(x).map(|(b, &v)| b.bin(v)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Origin {
    pub org_id: String,
    pub round: u64,
}

#[derive(Debug, Clone)]
pub(crate) enum Node {
    Leaf {
        counts: [f64; 2],
        /// Flattened (feature, bin) -> per-class weight; allocated on first use.
        stats: Option<Vec<[u32; 2]>>,
        weight_since_attempt: f64,
        depth: u32,
    },
    Split {
        feature: usize,
        /// Records with bin < split_bin go left.
        split_bin: usize,
        threshold: f64,
        counts: [f64; 2],
        left: usize,
        right: usize,
    },
}

#[derive(Debug, Clone)]
pub struct HoeffdingTree {
    nodes: Vec<Node>,
    pub origin: Option<Origin>,
}

impl Default for HoeffdingTree {
    fn default() -> Self {
        Self::new()
    }
}

fn leaf(counts: [f64; 2], depth: u32) -> Node {
    Node::Leaf { counts, stats: None, weight_since_attempt: 0.0, depth }
}

fn entropy(c: [f64; 2]) -> f64 {
    let n = c[0] + c[1];
    if n <= 0.0 {
        return 0.0;
    }
    c.iter().filter(|&&v| v > 0.0).map(|&v| -(v / n) * (v / n).ln()).sum()
}

#[derive(Debug, Clone, Copy)]
struct Candidate {
    gain: f64,
    feature: usize,
    split_bin: usize,
    left: [f64; 2],
}

impl HoeffdingTree {
    pub fn new() -> Self {
        Self { nodes: vec![leaf([0.0, 0.0], 0)], origin: None }
    }

    /// Builds a single-leaf tree with the given class counts.
    pub fn leaf_with_counts(benign: f64, malicious: f64) -> Self {
        Self { nodes: vec![leaf([benign, malicious], 0)], origin: None }
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn leaf_count(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, Node::Leaf { .. })).count()
    }

    /// Feature tested at the root, if the root has split.
    pub fn root_feature(&self) -> Option<usize> {
        match self.nodes[0] {
            Node::Split { feature, .. } => Some(feature),
            Node::Leaf { .. } => None,
        }
    }

    fn leaf_index(&self, bins: &[usize]) -> usize {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Leaf { .. } => return i,
                Node::Split { feature, split_bin, left, right, .. } => {
                    i = if bins[*feature] < *split_bin { *left } else { *right };
                }
            }
        }
    }

    /// Class-probability estimate of the leaf reached by `bins`; uniform
    /// for an empty leaf.
    pub fn estimate(&self, bins: &[usize]) -> [f64; 2] {
        match &self.nodes[self.leaf_index(bins)] {
            Node::Leaf { counts, .. } => {
                let n = counts[0] + counts[1];
                if n > 0.0 {
                    [counts[0] / n, counts[1] / n]
                } else {
                    [0.5, 0.5]
                }
            }
            Node::Split { .. } => unreachable!("leaf_index returns leaves"),
        }
    }

    pub fn learn(&mut self, bins: &[usize], y: ClassLabel, weight: u32, geom: &Geometry, params: &TreeParams) {
        if weight == 0 {
            return;
        }
        let idx = self.leaf_index(bins);
        let k = y.index();
        let w = weight as f64;
        let ready = {
            let Node::Leaf { counts, stats, weight_since_attempt, depth } = &mut self.nodes[idx] else {
                unreachable!()
            };
            counts[k] += w;
            let stats = stats.get_or_insert_with(|| vec![[0, 0]; geom.total_bins]);
            for (f, &b) in bins.iter().enumerate() {
                let cell = &mut stats[geom.offsets[f] + b];
                cell[k] = cell[k].saturating_add(weight);
            }
            *weight_since_attempt += w;
            *weight_since_attempt >= params.grace_period as f64 && *depth < params.max_depth
        };
        if ready {
            self.attempt_split(idx, geom, params);
        }
    }

    fn best_split_per_feature(stats: &[[u32; 2]], geom: &Geometry, parent: [f64; 2]) -> Vec<Candidate> {
        let n = parent[0] + parent[1];
        let h_parent = entropy(parent);
        let mut out = Vec::with_capacity(geom.dim());
        for (f, b) in geom.binnings.iter().enumerate() {
            let cells = &stats[geom.offsets[f]..geom.offsets[f] + b.bin_count()];
            let mut left = [0.0f64; 2];
            let mut best: Option<Candidate> = None;
            for (j, cell) in cells.iter().enumerate().take(cells.len() - 1) {
                left[0] += cell[0] as f64;
                left[1] += cell[1] as f64;
                let right = [parent[0] - left[0], parent[1] - left[1]];
                let (nl, nr) = (left[0] + left[1], right[0] + right[1]);
                if nl <= 0.0 || nr <= 0.0 {
                    continue;
                }
                let gain = h_parent - (nl / n) * entropy(left) - (nr / n) * entropy(right);
                if best.is_none_or(|c| gain > c.gain) {
                    best = Some(Candidate { gain, feature: f, split_bin: j + 1, left });
                }
            }
            if let Some(c) = best {
                out.push(c);
            }
        }
        out
    }

    fn attempt_split(&mut self, idx: usize, geom: &Geometry, params: &TreeParams) {
        let Node::Leaf { counts, stats, weight_since_attempt, depth } = &mut self.nodes[idx] else {
            return;
        };
        *weight_since_attempt = 0.0;
        let parent = *counts;
        let depth = *depth;
        if parent[0] <= 0.0 || parent[1] <= 0.0 {
            return; // pure leaf: no split can gain anything
        }
        let Some(stats) = stats.as_ref() else { return };
        let mut candidates = Self::best_split_per_feature(stats, geom, parent);
        candidates.sort_by(|a, b| b.gain.total_cmp(&a.gain).then(a.feature.cmp(&b.feature)));
        let Some(best) = candidates.first().copied() else { return };
        let runner_up = candidates.get(1).map_or(0.0, |c| c.gain);
        let n = parent[0] + parent[1];
        let eps = hoeffding_bound(GAIN_RANGE, params.split_confidence, n);
        if !(best.gain > 0.0 && (best.gain - runner_up > eps || eps < params.tie_threshold)) {
            return;
        }
        let right = [parent[0] - best.left[0], parent[1] - best.left[1]];
        let left_idx = self.nodes.len();
        self.nodes.push(leaf(best.left, depth + 1));
        self.nodes.push(leaf(right, depth + 1));
        self.nodes[idx] = Node::Split {
            feature: best.feature,
            split_bin: best.split_bin,
            threshold: geom.binnings[best.feature].edge(best.split_bin),
            counts: parent,
            left: left_idx,
            right: left_idx + 1,
        };
    }

    /// Preorder encoding: origin, node count, then per node
    /// `kind u8 | feature u32 | split_bin u32 | threshold f64 | counts 2xf64`.
    pub fn encode(&self, w: &mut ByteWriter, default_origin: Option<&Origin>) {
        match self.origin.as_ref().or(default_origin) {
            Some(o) => {
                w.u8(1);
                w.str(&o.org_id);
                w.u64(o.round);
            }
            None => w.u8(0),
        }
        w.u64(self.nodes.len() as u64);
        let mut stack = vec![0usize];
        while let Some(i) = stack.pop() {
            match &self.nodes[i] {
                Node::Leaf { counts, .. } => {
                    w.u8(0);
                    w.u32(0);
                    w.u32(0);
                    w.f64(0.0);
                    w.f64(counts[0]);
                    w.f64(counts[1]);
                }
                Node::Split { feature, split_bin, threshold, counts, left, right } => {
                    w.u8(1);
                    w.u32(*feature as u32);
                    w.u32(*split_bin as u32);
                    w.f64(*threshold);
                    w.f64(counts[0]);
                    w.f64(counts[1]);
                    stack.push(*right);
                    stack.push(*left);
                }
            }
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = ByteWriter::new();
        self.encode(&mut w, None);
        w.into_bytes()
    }

    /// Digest of the canonical encoding.
    pub fn digest(&self) -> u64 {
        fnv1a64(&self.to_bytes())
    }

    pub fn decode(r: &mut ByteReader<'_>, geom: &Geometry) -> Result<Self, CodecError> {
        let origin = match r.u8()? {
            0 => None,
            1 => Some(Origin { org_id: r.str()?, round: r.u64()? }),
            t => return Err(CodecError::Invalid(format!("bad origin flag {t}"))),
        };
        let count = r.count(33)?;
        if count == 0 {
            return Err(CodecError::Invalid("tree has no nodes".into()));
        }
        let mut nodes: Vec<Option<Node>> = vec![None; count];
        // (slot to fill, depth, parent split slot + side)
        let mut next = 0usize;
        let mut pending: Vec<(Option<(usize, bool)>, u32)> = vec![(None, 0)];
        while let Some((parent, depth)) = pending.pop() {
            if next >= count {
                return Err(CodecError::Invalid("tree node list too short".into()));
            }
            let slot = next;
            next += 1;
            let kind = r.u8()?;
            let feature = r.u32()? as usize;
            let split_bin = r.u32()? as usize;
            let threshold = r.f64()?;
            let counts = [r.f64()?, r.f64()?];
            if !counts.iter().all(|c| c.is_finite() && *c >= 0.0) {
                return Err(CodecError::Invalid("negative or non-finite class count".into()));
            }
            nodes[slot] = Some(match kind {
                0 => leaf(counts, depth),
                1 => {
                    let b = geom.binnings.get(feature).ok_or_else(|| CodecError::Invalid("split feature out of range".into()))?;
                    if split_bin == 0 || split_bin >= b.bin_count() || !threshold.is_finite() {
                        return Err(CodecError::Invalid("split bin outside feature range".into()));
                    }
                    pending.push((Some((slot, false)), depth + 1));
                    pending.push((Some((slot, true)), depth + 1));
                    Node::Split { feature, split_bin, threshold, counts, left: usize::MAX, right: usize::MAX }
                }
                k => return Err(CodecError::Invalid(format!("bad node kind {k}"))),
            });
            if let Some((p, is_left)) = parent {
                if let Some(Node::Split { left, right, .. }) = nodes[p].as_mut() {
                    if is_left {
                        *left = slot;
                    } else {
                        *right = slot;
                    }
                }
            }
        }
        if next != count {
            return Err(CodecError::Invalid("tree node count mismatch".into()));
        }
        Ok(Self { nodes: nodes.into_iter().map(|n| n.expect("filled")).collect(), origin })
    }
}
