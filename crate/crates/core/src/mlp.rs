//! Small multilayer perceptron: ReLU hidden layers, softmax over
//! (benign, malicious), cross-entropy loss, one SGD step per record.
//! Merging is an elementwise weighted average of weights and biases.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::codec::{ByteReader, ByteWriter, CodecError};
use crate::featurizer::{Binning, FeatureSchema, FeatureVector};
use crate::model::envelope_internal::{payload_writer, section};
use crate::model::{
    check_compatible, check_dim, ordered_sum, ClassLabel, ClassScores, Classifier, EnvelopeError, MergeWeights,
    ModelEnvelope, ModelError, ModelKind, PayloadHeader,
};

pub const DEFAULT_HIDDEN: [usize; 5] = [64, 32, 16, 8, 4];
pub const DEFAULT_LEARNING_RATE: f64 = 0.01;
pub const OUTPUT_DIM: usize = 2;

const PAYLOAD_VERSION: u8 = 1;

/// One dense layer; `weights` is row-major `out_dim x in_dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub out_dim: usize,
    pub in_dim: usize,
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

impl Layer {
    pub fn zeros(out_dim: usize, in_dim: usize) -> Self {
        Self { out_dim, in_dim, weights: vec![0.0; out_dim * in_dim], biases: vec![0.0; out_dim] }
    }

    pub fn weight(&self, row: usize, col: usize) -> f64 {
        self.weights[row * self.in_dim + col]
    }

    fn apply(&self, input: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.extend(self.biases.iter().enumerate().map(|(r, &b)| {
            let row = &self.weights[r * self.in_dim..(r + 1) * self.in_dim];
            row.iter().zip(input).fold(b, |acc, (w, x)| acc + w * x)
        }));
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    pub layers: Vec<Layer>,
}

impl MlpParams {
    pub fn input_dim(&self) -> usize {
        self.layers.first().map_or(0, |l| l.in_dim)
    }

    pub fn shapes(&self) -> Vec<(usize, usize)> {
        self.layers.iter().map(|l| (l.out_dim, l.in_dim)).collect()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.biases.len()).sum()
    }

    pub fn zeros_like(&self) -> Self {
        Self { layers: self.layers.iter().map(|l| Layer::zeros(l.out_dim, l.in_dim)).collect() }
    }

    /// Every parameter, layer by layer, weights before biases.
    pub fn flat(&self) -> Vec<f64> {
        self.layers.iter().flat_map(|l| l.weights.iter().chain(&l.biases).copied()).collect()
    }

    pub fn flat_mut(&mut self) -> Vec<&mut f64> {
        self.layers.iter_mut().flat_map(|l| l.weights.iter_mut().chain(l.biases.iter_mut())).collect()
    }

    pub fn validate(&self) -> Result<(), String> {
        let last = self.layers.last().ok_or("no layers")?;
        if last.out_dim != OUTPUT_DIM {
            return Err(format!("output dimension {} != {OUTPUT_DIM}", last.out_dim));
        }
        for (i, l) in self.layers.iter().enumerate() {
            if l.weights.len() != l.out_dim * l.in_dim || l.biases.len() != l.out_dim || l.in_dim == 0 {
                return Err(format!("layer {i} has inconsistent dimensions"));
            }
            if i > 0 && self.layers[i - 1].out_dim != l.in_dim {
                return Err(format!("layer {i} input {} does not chain from {}", l.in_dim, self.layers[i - 1].out_dim));
            }
            if !l.weights.iter().chain(&l.biases).all(|v| v.is_finite()) {
                return Err(format!("layer {i} has non-finite parameters"));
            }
        }
        Ok(())
    }
}

/// Glorot-uniform weights from a seeded generator, zero biases.
pub fn mlp_init(input_dim: usize, hidden: &[usize], seed: u64) -> Result<MlpParams, ModelError> {
    if hidden.is_empty() || hidden.contains(&0) || input_dim == 0 {
        return Err(ModelError::InvalidConfig("hidden sizes must be nonempty and positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dims: Vec<usize> = std::iter::once(input_dim).chain(hidden.iter().copied()).chain([OUTPUT_DIM]).collect();
    let layers = dims
        .windows(2)
        .map(|w| {
            let (fan_in, fan_out) = (w[0], w[1]);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let mut layer = Layer::zeros(fan_out, fan_in);
            for v in &mut layer.weights {
                *v = rng.random_range(-limit..=limit);
            }
            layer
        })
        .collect();
    Ok(MlpParams { layers })
}

struct Trace {
    /// Input followed by each hidden layer's post-ReLU activation.
    activations: Vec<Vec<f64>>,
    logits: Vec<f64>,
}

fn forward_trace(p: &MlpParams, x: &[f64]) -> Trace {
    let mut activations = vec![x.to_vec()];
    let mut buf = Vec::new();
    let n = p.layers.len();
    for (i, layer) in p.layers.iter().enumerate() {
        layer.apply(activations.last().expect("nonempty"), &mut buf);
        if i + 1 < n {
            activations.push(buf.iter().map(|&z| z.max(0.0)).collect());
        }
    }
    Trace { activations, logits: buf }
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

fn check_input(p: &MlpParams, x: &[f64]) -> Result<(), ModelError> {
    if x.len() != p.input_dim() {
        return Err(ModelError::DimensionMismatch { expected: p.input_dim(), got: x.len() });
    }
    Ok(())
}

pub fn mlp_forward(p: &MlpParams, x: &[f64]) -> Result<ClassScores, ModelError> {
    check_input(p, x)?;
    let probs = softmax(&forward_trace(p, x).logits);
    Ok(ClassScores::new(probs[0], probs[1]))
}

/// Cross-entropy of the true class.
pub fn mlp_loss(p: &MlpParams, x: &[f64], y: ClassLabel) -> Result<f64, ModelError> {
    check_input(p, x)?;
    let logits = forward_trace(p, x).logits;
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + logits.iter().map(|l| (l - m).exp()).sum::<f64>().ln();
    Ok(lse - logits[y.index()])
}

/// Loss and its gradient with respect to every parameter (backprop).
pub fn mlp_gradients(p: &MlpParams, x: &[f64], y: ClassLabel) -> Result<(f64, MlpParams), ModelError> {
    check_input(p, x)?;
    let trace = forward_trace(p, x);
    let probs = softmax(&trace.logits);
    let loss = -probs[y.index()].ln();

    let mut grads = p.zeros_like();
    let mut delta: Vec<f64> = probs.clone();
    delta[y.index()] -= 1.0;

    for li in (0..p.layers.len()).rev() {
        let layer = &p.layers[li];
        let input = &trace.activations[li];
        let g = &mut grads.layers[li];
        for r in 0..layer.out_dim {
            g.biases[r] = delta[r];
            let row = &mut g.weights[r * layer.in_dim..(r + 1) * layer.in_dim];
            for (gw, &a) in row.iter_mut().zip(input) {
                *gw = delta[r] * a;
            }
        }
        if li > 0 {
            // input[c] > 0 exactly when the pre-activation was positive
            delta = (0..layer.in_dim)
                .map(|c| {
                    if input[c] > 0.0 {
                        (0..layer.out_dim).map(|r| layer.weight(r, c) * delta[r]).sum()
                    } else {
                        0.0
                    }
                })
                .collect();
        }
    }
    Ok((loss, grads))
}

/// One SGD step on a single record.
pub fn mlp_step(p: &mut MlpParams, x: &[f64], y: ClassLabel, learning_rate: f64) -> Result<(), ModelError> {
    let (_, grads) = mlp_gradients(p, x, y)?;
    if learning_rate == 0.0 {
        return Ok(());
    }
    for (layer, g) in p.layers.iter_mut().zip(&grads.layers) {
        for (w, gw) in layer.weights.iter_mut().zip(&g.weights) {
            *w -= learning_rate * gw;
        }
        for (b, gb) in layer.biases.iter_mut().zip(&g.biases) {
            *b -= learning_rate * gb;
        }
    }
    Ok(())
}

/// Weighted average `w' = <a, w>` of every weight and bias. Zero-weight
/// members are skipped, terms are summed in sorted order so the result does
/// not depend on member order, and the result is clamped to the
/// contributors' range to absorb rounding.
pub fn mlp_merge(models: &[&MlpParams], a: &MergeWeights) -> Result<MlpParams, ModelError> {
    let first = models.first().ok_or(ModelError::EmptyMerge)?;
    if a.len() != models.len() {
        return Err(ModelError::WeightArityMismatch { weights: a.len(), models: models.len() });
    }
    if let Some(m) = models.iter().find(|m| m.shapes() != first.shapes()) {
        return Err(ModelError::ArchMismatch(format!("{:?} vs {:?}", first.shapes(), m.shapes())));
    }
    let contributors: Vec<(f64, Vec<f64>)> = models
        .iter()
        .zip(a.as_slice())
        .filter(|(_, &w)| w > 0.0)
        .map(|(m, &w)| (w, m.flat()))
        .collect();

    let mut out = first.zeros_like();
    for (idx, slot) in out.flat_mut().into_iter().enumerate() {
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        let avg = ordered_sum(contributors.iter().map(|(w, flat)| {
            lo = lo.min(flat[idx]);
            hi = hi.max(flat[idx]);
            w * flat[idx]
        }));
        *slot = avg.clamp(lo, hi);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpHyper {
    pub learning_rate: f64,
    pub hidden: Vec<usize>,
    pub init_seed: u64,
}

impl Default for MlpHyper {
    fn default() -> Self {
        Self { learning_rate: DEFAULT_LEARNING_RATE, hidden: DEFAULT_HIDDEN.to_vec(), init_seed: 0 }
    }
}

/// MLP bound to a schema. Inputs are rescaled per feature to `[0, 1]` using
/// the schema geometry before the forward pass.
#[derive(Debug, Clone)]
pub struct MlpModel {
    params: MlpParams,
    learning_rate: f64,
    init_seed: u64,
    /// Per-input `(offset, scale)`: `z = (x - offset) * scale`.
    input_scale: Vec<(f64, f64)>,
    schema_hash: u64,
    records_seen: u64,
}

fn scale_for(b: &Binning) -> (f64, f64) {
    match *b {
        Binning::Numeric { lo, hi, .. } => (lo, 1.0 / (hi - lo)),
        Binning::Categorical { count } => (0.0, 1.0 / (count.max(2) - 1) as f64),
    }
}

impl MlpModel {
    pub fn new(schema: &FeatureSchema, hyper: &MlpHyper) -> Result<Self, ModelError> {
        if !(hyper.learning_rate >= 0.0 && hyper.learning_rate.is_finite()) {
            return Err(ModelError::InvalidConfig("learning rate must be finite and nonnegative".into()));
        }
        let params = mlp_init(schema.dim(), &hyper.hidden, hyper.init_seed)?;
        Ok(Self {
            params,
            learning_rate: hyper.learning_rate,
            init_seed: hyper.init_seed,
            input_scale: schema.binnings().iter().map(scale_for).collect(),
            schema_hash: schema.digest(),
            records_seen: 0,
        })
    }

    pub fn params(&self) -> &MlpParams {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut MlpParams {
        &mut self.params
    }

    pub fn learning_rate(&self) -> f64 {
        self.learning_rate
    }

    pub fn set_learning_rate(&mut self, lr: f64) {
        self.learning_rate = lr;
    }

    pub fn scaled(&self, x: &FeatureVector) -> Result<Vec<f64>, ModelError> {
        check_dim(self.input_scale.len(), x)?;
        Ok(x.values.iter().zip(&self.input_scale).map(|(v, (off, s))| (v - off) * s).collect())
    }

    pub fn merge(models: &[MlpModel], a: &MergeWeights) -> Result<MlpModel, ModelError> {
        let first = models.first().ok_or(ModelError::EmptyMerge)?;
        if let Some(m) = models.iter().find(|m| m.schema_hash != first.schema_hash) {
            return Err(ModelError::SchemaMismatch { expected: first.schema_hash, got: m.schema_hash });
        }
        if models.iter().any(|m| m.input_scale != first.input_scale) {
            return Err(ModelError::ArchMismatch("input scaling differs".into()));
        }
        let params: Vec<&MlpParams> = models.iter().map(|m| &m.params).collect();
        Ok(MlpModel {
            params: mlp_merge(&params, a)?,
            records_seen: models.iter().map(|m| m.records_seen).sum(),
            ..first.clone()
        })
    }

    fn encode(&self) -> Vec<u8> {
        let mut w = payload_writer(ModelKind::Mlp, PAYLOAD_VERSION);

        // Distinct (offset, scale) pairs once, then one u16 index per input;
        // schemas reuse a handful of ranges and this keeps the default
        // envelope under 64 KiB.
        let mut table: Vec<(f64, f64)> = Vec::new();
        let mut index = Vec::with_capacity(self.input_scale.len());
        for &(off, sc) in &self.input_scale {
            let pos = table.iter().position(|&(o, t)| o.to_bits() == off.to_bits() && t.to_bits() == sc.to_bits());
            index.push(pos.unwrap_or_else(|| {
                table.push((off, sc));
                table.len() - 1
            }) as u16);
        }
        let mut scale = ByteWriter::new();
        scale.u64(table.len() as u64);
        for &(off, sc) in &table {
            scale.f64(off);
            scale.f64(sc);
        }
        scale.u64(index.len() as u64);
        index.iter().for_each(|&i| scale.u16(i));
        w.section(section::MLP_INPUT_SCALE, &scale.into_bytes());

        let mut layers = ByteWriter::new();
        layers.u64(self.params.layers.len() as u64);
        for l in &self.params.layers {
            layers.u32(l.out_dim as u32);
            layers.u32(l.in_dim as u32);
            l.weights.iter().for_each(|&v| layers.f64(v));
            l.biases.iter().for_each(|&v| layers.f64(v));
        }
        w.section(section::MLP_LAYERS, &layers.into_bytes());

        let mut hyper = ByteWriter::new();
        hyper.f64(self.learning_rate);
        hyper.u64(self.init_seed);
        w.section(section::MLP_HYPER, &hyper.into_bytes());
        w.into_bytes()
    }

    pub fn from_envelope(env: &ModelEnvelope) -> Result<Self, ModelError> {
        let p = PayloadHeader::parse(&env.payload, ModelKind::Mlp)?;
        if p.version != PAYLOAD_VERSION {
            return Err(EnvelopeError::UnsupportedVersion(p.version).into());
        }
        let codec = |e: CodecError| ModelError::from(EnvelopeError::from(e));
        let invalid = |m: String| ModelError::from(EnvelopeError::Invalid(m));

        let mut r = ByteReader::new(p.section(section::MLP_INPUT_SCALE));
        let n = r.count(16).map_err(codec)?;
        let table = (0..n)
            .map(|_| Ok((r.f64()?, r.f64()?)))
            .collect::<Result<Vec<_>, CodecError>>()
            .map_err(codec)?;
        let n = r.count(2).map_err(codec)?;
        let input_scale = (0..n)
            .map(|_| {
                let i = r.u16().map_err(codec)? as usize;
                table.get(i).copied().ok_or_else(|| invalid(format!("input scale index {i} out of range")))
            })
            .collect::<Result<Vec<_>, ModelError>>()?;
        r.finish().map_err(codec)?;

        let mut r = ByteReader::new(p.section(section::MLP_LAYERS));
        let count = r.count(8).map_err(codec)?;
        let mut layers = Vec::with_capacity(count);
        for _ in 0..count {
            let out_dim = r.u32().map_err(codec)? as usize;
            let in_dim = r.u32().map_err(codec)? as usize;
            let n_w = out_dim.checked_mul(in_dim).ok_or_else(|| invalid("layer too large".into()))?;
            if (n_w + out_dim).saturating_mul(8) > r.remaining() {
                return Err(codec(CodecError::Truncated(r.position())));
            }
            let weights = (0..n_w).map(|_| r.f64()).collect::<Result<Vec<_>, _>>().map_err(codec)?;
            let biases = (0..out_dim).map(|_| r.f64()).collect::<Result<Vec<_>, _>>().map_err(codec)?;
            layers.push(Layer { out_dim, in_dim, weights, biases });
        }
        r.finish().map_err(codec)?;
        let params = MlpParams { layers };
        params.validate().map_err(invalid)?;
        if params.input_dim() != input_scale.len() {
            return Err(invalid("input scaling does not match the first layer".into()));
        }

        let mut r = ByteReader::new(p.section(section::MLP_HYPER));
        let learning_rate = r.f64().map_err(codec)?;
        let init_seed = r.u64().map_err(codec)?;
        r.finish().map_err(codec)?;

        Ok(Self { params, learning_rate, init_seed, input_scale, schema_hash: env.schema_hash, records_seen: env.records_seen })
    }
}

impl Classifier for MlpModel {
    fn kind(&self) -> ModelKind {
        ModelKind::Mlp
    }

    fn dim(&self) -> usize {
        self.input_scale.len()
    }

    fn schema_hash(&self) -> u64 {
        self.schema_hash
    }

    fn records_seen(&self) -> u64 {
        self.records_seen
    }

    fn predict(&self, x: &FeatureVector) -> Result<ClassScores, ModelError> {
        mlp_forward(&self.params, &self.scaled(x)?)
    }

    fn train_one(&mut self, x: &FeatureVector, y: ClassLabel) -> Result<(), ModelError> {
        let z = self.scaled(x)?;
        mlp_step(&mut self.params, &z, y, self.learning_rate)?;
        self.records_seen += 1;
        Ok(())
    }

    fn export(&self, org_id: &str, round: u64) -> ModelEnvelope {
        ModelEnvelope {
            org_id: org_id.to_string(),
            model_kind: ModelKind::Mlp,
            schema_hash: self.schema_hash,
            round,
            records_seen: self.records_seen,
            payload: self.encode(),
        }
    }

    fn apply_consensus(&mut self, consensus: &ModelEnvelope) -> Result<(), ModelError> {
        check_compatible(self, consensus)?;
        let incoming = Self::from_envelope(consensus)?;
        if incoming.params.shapes() != self.params.shapes() {
            return Err(ModelError::ArchMismatch("consensus architecture differs".into()));
        }
        *self = Self { learning_rate: self.learning_rate, ..incoming };
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_architecture_shapes() {
        let p = mlp_init(81, &DEFAULT_HIDDEN, 7).unwrap();
        assert_eq!(p.shapes(), vec![(64, 81), (32, 64), (16, 32), (8, 16), (4, 8), (2, 4)]);
        let expected: usize = [(81, 64), (64, 32), (32, 16), (16, 8), (8, 4), (4, 2)].iter().map(|(i, o)| i * o + o).sum();
        assert_eq!(p.param_count(), expected);
        assert_eq!(p.param_count(), 8_038);
        assert!(p.layers.iter().all(|l| l.biases.iter().all(|&b| b == 0.0)));
        let limit = (6.0f64 / (81 + 64) as f64).sqrt();
        assert!(p.layers[0].weights.iter().all(|w| w.abs() <= limit));
        assert_eq!(p, mlp_init(81, &DEFAULT_HIDDEN, 7).unwrap());
        assert_ne!(p, mlp_init(81, &DEFAULT_HIDDEN, 8).unwrap());
        assert!(mlp_init(81, &[], 7).is_err());
    }

    #[test]
    fn zero_network_is_uniform() {
        let p = mlp_init(3, &[4], 1).unwrap().zeros_like();
        assert_eq!(mlp_forward(&p, &[1.0, 2.0, 3.0]).unwrap(), ClassScores::UNIFORM);
        assert!(mlp_forward(&p, &[1.0]).is_err());
    }

    #[test]
    fn hand_computed_forward_pass() {
        // 2 inputs -> 1 hidden ReLU unit -> 2 logits.
        // h = relu(0.5*1 + (-0.25)*2 + 0.1) = 0.1
        // logits = (2*0.1 + 0, -1*0.1 + 0.3) = (0.2, 0.2) -> uniform
        // with x = (2, 0): h = relu(1.0 + 0.1) = 1.1, logits = (2.2, -0.8)
        let p = MlpParams {
            layers: vec![
                Layer { out_dim: 1, in_dim: 2, weights: vec![0.5, -0.25], biases: vec![0.1] },
                Layer { out_dim: 2, in_dim: 1, weights: vec![2.0, -1.0], biases: vec![0.0, 0.3] },
            ],
        };
        let s = mlp_forward(&p, &[1.0, 2.0]).unwrap();
        assert!((s.benign - 0.5).abs() < 1e-15);
        let s = mlp_forward(&p, &[2.0, 0.0]).unwrap();
        let expected = 1.0 / (1.0 + (-3.0f64).exp());
        assert!((s.benign - expected).abs() < 1e-15);
        assert!((s.benign + s.malicious - 1.0).abs() < 1e-12);
        // negative pre-activation: h = 0, logits = (0, 0.3)
        let s = mlp_forward(&p, &[-1.0, 0.0]).unwrap();
        assert!((s.malicious - 1.0 / (1.0 + (-0.3f64).exp())).abs() < 1e-15);
    }

    #[test]
    fn zero_learning_rate_is_a_no_op() {
        let mut p = mlp_init(5, &[4, 3], 3).unwrap();
        let before = p.clone();
        mlp_step(&mut p, &[0.1, 0.2, 0.3, 0.4, 0.5], ClassLabel::Malicious, 0.0).unwrap();
        assert_eq!(p, before);
    }

    #[test]
    fn merge_examples() {
        let mut a = mlp_init(2, &[2], 1).unwrap();
        let mut b = a.zeros_like();
        a.layers[0].weights[0] = 2.0;
        b.layers[0].weights[0] = 4.0;
        let m = mlp_merge(&[&a, &b], &MergeWeights::new(vec![0.5, 0.5]).unwrap()).unwrap();
        assert_eq!(m.layers[0].weights[0], 3.0);

        a.layers[0].weights[0] = 1.0;
        b.layers[0].weights[0] = 2.0;
        let m = mlp_merge(&[&a, &b], &MergeWeights::new(vec![0.3, 0.7]).unwrap()).unwrap();
        assert!((m.layers[0].weights[0] - 1.7).abs() < 1e-15);

        let m = mlp_merge(&[&a, &b], &MergeWeights::one_hot(2, 0).unwrap()).unwrap();
        assert_eq!(m, a);

        let other = mlp_init(3, &[2], 1).unwrap();
        assert!(matches!(mlp_merge(&[&a, &other], &MergeWeights::uniform(2).unwrap()), Err(ModelError::ArchMismatch(_))));
        assert!(matches!(
            mlp_merge(&[&a, &b], &MergeWeights::uniform(3).unwrap()),
            Err(ModelError::WeightArityMismatch { .. })
        ));
    }

    #[test]
    fn envelope_is_under_64k() {
        let m = MlpModel::new(&FeatureSchema::default_http(), &MlpHyper::default()).unwrap();
        let env = m.export("a", 0);
        assert!(env.to_bytes().len() < 64 * 1024);
        let back = MlpModel::from_envelope(&env).unwrap();
        assert_eq!(back.params(), m.params());
    }
}
