//! Online random forest: `m` Hoeffding trees trained with Poisson(1)
//! online bagging. Shared ensembles merge by sampling constituent trees in
//! proportion to the merge weights so the result still holds `m` trees.

mod tree;

pub use tree::{
    hoeffding_bound, Geometry, HoeffdingTree, Origin, TreeParams, DEFAULT_GRACE_PERIOD, DEFAULT_MAX_DEPTH,
    DEFAULT_SPLIT_CONFIDENCE, DEFAULT_TIE_THRESHOLD, GAIN_RANGE,
};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};

use crate::codec::{ByteReader, ByteWriter, CodecError};
use crate::featurizer::{Binning, FeatureSchema, FeatureVector};
use crate::model::envelope_internal::{payload_writer, section};
use crate::model::{
    check_compatible, check_dim, ClassLabel, ClassScores, Classifier, EnvelopeError, MergeWeights, ModelEnvelope,
    ModelError, ModelKind, PayloadHeader,
};

pub const DEFAULT_TREES: usize = 20;
const PAYLOAD_VERSION: u8 = 1;

#[derive(Debug, Clone)]
pub struct Forest {
    trees: Vec<HoeffdingTree>,
    params: TreeParams,
    geom: Geometry,
    schema_hash: u64,
    rng: ChaCha8Rng,
    records_seen: u64,
}

/// Largest-remainder apportionment of `m` seats by `weights`: floors
/// first, then one extra seat each to the largest fractional parts (ties to
/// the lower index).
pub fn largest_remainder(weights: &[f64], m: usize) -> Vec<usize> {
    let total: f64 = weights.iter().sum();
    if weights.is_empty() || total <= 0.0 {
        return vec![0; weights.len()];
    }
    let quotas: Vec<f64> = weights.iter().map(|w| w / total * m as f64).collect();
    let mut seats: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let assigned: usize = seats.iter().sum();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = quotas[a] - quotas[a].floor();
        let rb = quotas[b] - quotas[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &i in order.iter().take(m.saturating_sub(assigned)) {
        seats[i] += 1;
    }
    seats
}

impl Forest {
    pub fn new(schema: &FeatureSchema, m: usize, params: TreeParams, seed: u64) -> Result<Self, ModelError> {
        Self::with_geometry(schema.binnings(), schema.digest(), m, params, seed)
    }

    pub fn with_geometry(
        binnings: Vec<Binning>,
        schema_hash: u64,
        m: usize,
        params: TreeParams,
        seed: u64,
    ) -> Result<Self, ModelError> {
        if m == 0 {
            return Err(ModelError::InvalidConfig("forest needs at least one tree".into()));
        }
        params.validate().map_err(ModelError::InvalidConfig)?;
        Ok(Self {
            trees: (0..m).map(|_| HoeffdingTree::new()).collect(),
            params,
            geom: Geometry::new(binnings),
            schema_hash,
            rng: ChaCha8Rng::seed_from_u64(seed),
            records_seen: 0,
        })
    }

    /// Ensemble from explicit trees (hand-built fixtures, tests).
    pub fn from_trees(binnings: Vec<Binning>, schema_hash: u64, trees: Vec<HoeffdingTree>, seed: u64) -> Result<Self, ModelError> {
        let mut f = Self::with_geometry(binnings, schema_hash, trees.len(), TreeParams::default(), seed)?;
        f.trees = trees;
        Ok(f)
    }

    pub fn trees(&self) -> &[HoeffdingTree] {
        &self.trees
    }

    pub fn m(&self) -> usize {
        self.trees.len()
    }

    pub fn params(&self) -> &TreeParams {
        &self.params
    }

    /// Per-tree Poisson(1) weights the next record would receive; does not
    /// advance the generator.
    pub fn peek_bagging_weights(&self) -> Vec<u32> {
        let mut rng = self.rng.clone();
        Self::draw_weights(&mut rng, self.trees.len())
    }

    fn draw_weights(rng: &mut ChaCha8Rng, m: usize) -> Vec<u32> {
        let poisson = Poisson::new(1.0).expect("valid rate");
        (0..m).map(|_| poisson.sample(rng) as u32).collect()
    }

    pub fn merge(forests: &[Forest], a: &MergeWeights, seed: u64) -> Result<Forest, ModelError> {
        let first = forests.first().ok_or(ModelError::EmptyMerge)?;
        if a.len() != forests.len() {
            return Err(ModelError::WeightArityMismatch { weights: a.len(), models: forests.len() });
        }
        if let Some(f) = forests.iter().find(|f| f.schema_hash != first.schema_hash) {
            return Err(ModelError::SchemaMismatch { expected: first.schema_hash, got: f.schema_hash });
        }
        if forests.iter().any(|f| f.geom != first.geom) {
            return Err(ModelError::ArchMismatch("bin geometry differs".into()));
        }
        let m = first.m();
        if forests.iter().any(|f| f.m() != m) {
            return Err(ModelError::ArchMismatch("ensembles have different tree counts".into()));
        }
        let allocation = largest_remainder(a.as_slice(), m);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut trees = Vec::with_capacity(m);
        for (f, &n) in forests.iter().zip(&allocation) {
            let mut picked = rand::seq::index::sample(&mut rng, m, n).into_vec();
            picked.sort_unstable();
            trees.extend(picked.into_iter().map(|i| f.trees[i].clone()));
        }
        Ok(Forest {
            trees,
            params: first.params,
            geom: first.geom.clone(),
            schema_hash: first.schema_hash,
            rng,
            records_seen: forests.iter().map(|f| f.records_seen).sum(),
        })
    }

    fn encode(&self, default_origin: Option<&Origin>) -> Vec<u8> {
        let mut w = payload_writer(ModelKind::Forest, PAYLOAD_VERSION);

        let mut params = ByteWriter::new();
        params.u64(self.trees.len() as u64);
        params.f64(self.params.split_confidence);
        params.f64(self.params.tie_threshold);
        params.u32(self.params.grace_period);
        params.u32(self.params.max_depth);
        w.section(section::FOREST_PARAMS, &params.into_bytes());
        w.section(section::FOREST_GEOMETRY, &Binning::encode_all(&self.geom.binnings));

        let mut rng = ByteWriter::new();
        rng.bytes(&self.rng.get_seed());
        rng.u64(self.rng.get_stream());
        rng.u128(self.rng.get_word_pos());
        w.section(section::FOREST_RNG, &rng.into_bytes());

        let mut trees = ByteWriter::new();
        trees.u64(self.trees.len() as u64);
        for t in &self.trees {
            let mut tw = ByteWriter::new();
            t.encode(&mut tw, default_origin);
            let body = tw.into_bytes();
            trees.u64(body.len() as u64);
            trees.bytes(&body);
        }
        w.section(section::FOREST_TREES, &trees.into_bytes());
        w.into_bytes()
    }

    pub fn from_envelope(env: &ModelEnvelope) -> Result<Self, ModelError> {
        let p = PayloadHeader::parse(&env.payload, ModelKind::Forest)?;
        if p.version != PAYLOAD_VERSION {
            return Err(EnvelopeError::UnsupportedVersion(p.version).into());
        }
        let codec = |e: CodecError| ModelError::from(EnvelopeError::from(e));

        let mut r = ByteReader::new(p.section(section::FOREST_PARAMS));
        let m = r.u64().map_err(codec)? as usize;
        let params = TreeParams {
            split_confidence: r.f64().map_err(codec)?,
            tie_threshold: r.f64().map_err(codec)?,
            grace_period: r.u32().map_err(codec)?,
            max_depth: r.u32().map_err(codec)?,
        };
        r.finish().map_err(codec)?;
        params.validate().map_err(|e| ModelError::from(EnvelopeError::Invalid(e)))?;

        let geom = Geometry::new(Binning::decode_all(p.section(section::FOREST_GEOMETRY)).map_err(codec)?);

        let mut r = ByteReader::new(p.section(section::FOREST_RNG));
        let seed: [u8; 32] = r.take(32).map_err(codec)?.try_into().expect("32 bytes");
        let stream = r.u64().map_err(codec)?;
        let word_pos = r.u128().map_err(codec)?;
        r.finish().map_err(codec)?;
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_stream(stream);
        rng.set_word_pos(word_pos);

        let mut r = ByteReader::new(p.section(section::FOREST_TREES));
        let n = r.count(9).map_err(codec)?;
        if n != m || m == 0 {
            return Err(EnvelopeError::Invalid(format!("expected {m} trees, found {n}")).into());
        }
        let mut trees = Vec::with_capacity(n);
        for _ in 0..n {
            let len = r.count(1).map_err(codec)?;
            let mut tr = ByteReader::new(r.take(len).map_err(codec)?);
            trees.push(HoeffdingTree::decode(&mut tr, &geom).map_err(codec)?);
            tr.finish().map_err(codec)?;
        }
        r.finish().map_err(codec)?;
        Ok(Self { trees, params, geom, schema_hash: env.schema_hash, rng, records_seen: env.records_seen })
    }
}

impl Classifier for Forest {
    fn kind(&self) -> ModelKind {
        ModelKind::Forest
    }

    fn dim(&self) -> usize {
        self.geom.dim()
    }

    fn schema_hash(&self) -> u64 {
        self.schema_hash
    }

    fn records_seen(&self) -> u64 {
        self.records_seen
    }

    /// Unweighted mean of the trees' leaf estimates.
    fn predict(&self, x: &FeatureVector) -> Result<ClassScores, ModelError> {
        check_dim(self.geom.dim(), x)?;
        let bins = self.geom.bins_of(&x.values);
        let mut sum = [0.0f64; 2];
        for t in &self.trees {
            let e = t.estimate(&bins);
            sum[0] += e[0];
            sum[1] += e[1];
        }
        let m = self.trees.len() as f64;
        Ok(ClassScores::new(sum[0] / m, sum[1] / m))
    }

    fn train_one(&mut self, x: &FeatureVector, y: ClassLabel) -> Result<(), ModelError> {
        check_dim(self.geom.dim(), x)?;
        let bins = self.geom.bins_of(&x.values);
        let weights = Self::draw_weights(&mut self.rng, self.trees.len());
        for (t, k) in self.trees.iter_mut().zip(weights) {
            t.learn(&bins, y, k, &self.geom, &self.params);
        }
        self.records_seen += 1;
        Ok(())
    }

    /// Untagged trees are tagged with this export's `(org_id, round)`.
    fn export(&self, org_id: &str, round: u64) -> ModelEnvelope {
        let origin = Origin { org_id: org_id.to_string(), round };
        ModelEnvelope {
            org_id: org_id.to_string(),
            model_kind: ModelKind::Forest,
            schema_hash: self.schema_hash,
            round,
            records_seen: self.records_seen,
            payload: self.encode(Some(&origin)),
        }
    }

    fn apply_consensus(&mut self, consensus: &ModelEnvelope) -> Result<(), ModelError> {
        check_compatible(self, consensus)?;
        let incoming = Self::from_envelope(consensus)?;
        if incoming.geom != self.geom {
            return Err(ModelError::ArchMismatch("bin geometry differs".into()));
        }
        *self = incoming;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn schema() -> FeatureSchema {
        FeatureSchema::numeric(3, 0.0, 1.0, 8).unwrap()
    }

    #[test]
    fn init_contract() {
        let s = schema();
        let f = Forest::new(&s, 20, TreeParams::default(), 1).unwrap();
        assert_eq!(f.m(), 20);
        assert!(Forest::new(&s, 0, TreeParams::default(), 1).is_err());
        let x = FeatureVector::new(vec![0.2, 0.3, 0.4], s.digest());
        assert_eq!(f.predict(&x).unwrap(), ClassScores::UNIFORM);
        let g = Forest::new(&s, 20, TreeParams::default(), 1).unwrap();
        assert_eq!(f.export("a", 0).payload, g.export("a", 0).payload);
    }

    #[test]
    fn apportionment() {
        assert_eq!(largest_remainder(&[1.0, 0.0], 10), vec![10, 0]);
        assert_eq!(largest_remainder(&[0.5, 0.5], 10), vec![5, 5]);
        // quotas 8.0, 7.0, 5.0
        assert_eq!(largest_remainder(&[0.4, 0.35, 0.25], 20), vec![8, 7, 5]);
        // quotas 3.33.., 3.33.., 3.33.. -> one extra to the first
        assert_eq!(largest_remainder(&[1.0, 1.0, 1.0], 10), vec![4, 3, 3]);
        // quotas 1.4, 2.6 -> (1, 3)
        assert_eq!(largest_remainder(&[0.35, 0.65], 4), vec![1, 3]);
    }

    #[test]
    fn hand_built_mean() {
        let s = schema();
        let trees = vec![HoeffdingTree::leaf_with_counts(8.0, 2.0), HoeffdingTree::leaf_with_counts(6.0, 4.0)];
        let f = Forest::from_trees(s.binnings(), s.digest(), trees, 0).unwrap();
        let p = f.predict(&FeatureVector::new(vec![0.0; 3], s.digest())).unwrap();
        assert!((p.benign - 0.7).abs() < 1e-15 && (p.malicious - 0.3).abs() < 1e-15);
    }

    #[test]
    fn single_tree_equals_its_estimate() {
        let s = schema();
        let trees = vec![HoeffdingTree::leaf_with_counts(1.0, 3.0)];
        let f = Forest::from_trees(s.binnings(), s.digest(), trees, 0).unwrap();
        let p = f.predict(&FeatureVector::new(vec![0.0; 3], s.digest())).unwrap();
        assert_eq!((p.benign, p.malicious), (0.25, 0.75));
    }

    #[test]
    fn merge_allocation_and_origin() {
        let s = schema();
        let mut a = Forest::new(&s, 10, TreeParams::default(), 1).unwrap();
        let b = Forest::new(&s, 10, TreeParams::default(), 2).unwrap();
        let x = FeatureVector::new(vec![0.9, 0.1, 0.5], s.digest());
        for _ in 0..30 {
            a.train_one(&x, ClassLabel::Malicious).unwrap();
        }
        let ea = Forest::from_envelope(&a.export("org-a", 1)).unwrap();
        let eb = Forest::from_envelope(&b.export("org-b", 1)).unwrap();
        let merged = Forest::merge(&[ea.clone(), eb.clone()], &MergeWeights::new(vec![0.5, 0.5]).unwrap(), 9).unwrap();
        assert_eq!(merged.m(), 10);
        let from_a = merged.trees().iter().filter(|t| t.origin.as_ref().unwrap().org_id == "org-a").count();
        assert_eq!(from_a, 5);
        let all_a = Forest::merge(&[ea, eb], &MergeWeights::one_hot(2, 0).unwrap(), 9).unwrap();
        assert!(all_a.trees().iter().all(|t| t.origin.as_ref().unwrap().org_id == "org-a"));
    }

    #[test]
    fn rng_state_survives_export() {
        let s = schema();
        let mut f = Forest::new(&s, 4, TreeParams::default(), 5).unwrap();
        let x = FeatureVector::new(vec![0.1, 0.2, 0.3], s.digest());
        f.train_one(&x, ClassLabel::Benign).unwrap();
        let back = Forest::from_envelope(&f.export("a", 0)).unwrap();
        assert_eq!(back.peek_bagging_weights(), f.peek_bagging_weights());
    }
}
