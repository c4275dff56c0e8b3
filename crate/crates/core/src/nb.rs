//! Histogram naive Bayes.
//!
//! Each feature keeps one count histogram per class. The class score is
//!
//! ```text
//! score_k = prior_k * prod_i L_{k,i}(x_i) / E_i(x_i)
//! L_{k,i}(b) = h~_{k,i}(b) / N~_{k,i}
//! E_i(b)     = sum_k h~_{k,i}(b) / sum_k N~_{k,i}
//! ```
//!
//! where `h~ = h + alpha` per bin and `N~_{k,i} = N_k + alpha * bins_i`.
//! Counts are stored raw; smoothing is applied only at query time, so merging
//! by summing histograms is exact. Scores are not renormalized.

use crate::codec::{ByteReader, ByteWriter, CodecError};
use crate::featurizer::{Binning, FeatureSchema, FeatureVector};
use crate::model::envelope_internal::{payload_writer, section};
use crate::model::{check_compatible, check_dim, ClassLabel, ClassScores, Classifier, ModelEnvelope, ModelError, ModelKind, PayloadHeader};

pub const DEFAULT_ALPHA: f64 = 1.0;

const VERSION_U32: u8 = 1;
const VERSION_U64: u8 = 2;

/// Largest log-score kept; bounds scores below `f64::MAX`.
const MAX_LOG_SCORE: f64 = 700.0;

/// Per-class, per-feature bin counts plus per-class record totals.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HistogramSet {
    counts: [Vec<Vec<u64>>; 2],
    totals: [u64; 2],
}

impl HistogramSet {
    pub fn empty(bin_counts: &[usize]) -> Self {
        let zeros: Vec<Vec<u64>> = bin_counts.iter().map(|&b| vec![0; b]).collect();
        Self { counts: [zeros.clone(), zeros], totals: [0, 0] }
    }

    /// Builds a set from explicit histograms, checking that every feature's
    /// histogram sums to the class total.
    pub fn from_counts(benign: Vec<Vec<u64>>, malicious: Vec<Vec<u64>>) -> Result<Self, ModelError> {
        if benign.len() != malicious.len() || benign.iter().zip(&malicious).any(|(b, m)| b.len() != m.len()) {
            return Err(ModelError::ArchMismatch("benign and malicious histogram shapes differ".into()));
        }
        let total = |h: &Vec<Vec<u64>>| h.first().map_or(0, |c| c.iter().sum());
        let set = Self { totals: [total(&benign), total(&malicious)], counts: [benign, malicious] };
        set.check_consistency()?;
        Ok(set)
    }

    pub fn dim(&self) -> usize {
        self.counts[0].len()
    }

    pub fn bin_counts(&self) -> Vec<usize> {
        self.counts[0].iter().map(Vec::len).collect()
    }

    pub fn total(&self, k: ClassLabel) -> u64 {
        self.totals[k.index()]
    }

    pub fn histogram(&self, k: ClassLabel, feature: usize) -> &[u64] {
        &self.counts[k.index()][feature]
    }

    pub fn count(&self, k: ClassLabel, feature: usize, bin: usize) -> u64 {
        self.counts[k.index()][feature][bin]
    }

    /// Every class histogram of every feature sums to that class's total.
    pub fn check_consistency(&self) -> Result<(), ModelError> {
        for k in ClassLabel::ALL {
            for (i, h) in self.counts[k.index()].iter().enumerate() {
                let sum: u128 = h.iter().map(|&c| c as u128).sum();
                if sum != self.totals[k.index()] as u128 {
                    return Err(ModelError::InvalidConfig(format!(
                        "{k} histogram of feature {i} sums to {sum}, expected N_{k} = {}",
                        self.totals[k.index()]
                    )));
                }
            }
        }
        Ok(())
    }

    /// One record: one bin per feature for class `y`.
    pub fn observe_bins(&mut self, bins: &[usize], y: ClassLabel) {
        let k = y.index();
        for (h, &b) in self.counts[k].iter_mut().zip(bins) {
            h[b] += 1;
        }
        self.totals[k] += 1;
    }

    fn same_shape(&self, other: &Self) -> bool {
        self.dim() == other.dim() && self.counts[0].iter().zip(&other.counts[0]).all(|(a, b)| a.len() == b.len())
    }

    fn add_assign(&mut self, other: &Self) {
        for k in 0..2 {
            for (mine, theirs) in self.counts[k].iter_mut().zip(&other.counts[k]) {
                for (a, b) in mine.iter_mut().zip(theirs) {
                    *a += b;
                }
            }
            self.totals[k] += other.totals[k];
        }
    }

    /// `self - base`, or `None` when some count would go negative.
    fn checked_sub(&self, base: &Self) -> Option<Self> {
        if !self.same_shape(base) {
            return None;
        }
        let mut out = self.clone();
        for k in 0..2 {
            for (mine, theirs) in out.counts[k].iter_mut().zip(&base.counts[k]) {
                for (a, b) in mine.iter_mut().zip(theirs) {
                    *a = a.checked_sub(*b)?;
                }
            }
            out.totals[k] = out.totals[k].checked_sub(base.totals[k])?;
        }
        Some(out)
    }

    fn max_count(&self) -> u64 {
        self.totals.iter().copied().max().unwrap_or(0)
    }
}

/// Bin index of `x` for one feature.
pub fn nb_bin(binning: &Binning, x: f64) -> usize {
    binning.bin(x)
}

/// Adds one labeled record to the histograms.
pub fn nb_observe(h: &mut HistogramSet, binnings: &[Binning], x: &FeatureVector, y: ClassLabel) -> Result<(), ModelError> {
    check_dim(h.dim(), x)?;
    let bins: Vec<usize> = binnings.iter().zip(&x.values).map(|(b, &v)| b.bin(v)).collect();
    h.observe_bins(&bins, y);
    Ok(())
}

/// Smoothed `(L_benign, L_malicious, E)` for feature `i` at bin `bin`.
pub fn nb_likelihood_evidence(h: &HistogramSet, i: usize, bin: usize, alpha: f64) -> (f64, f64, f64) {
    let bins = h.counts[0][i].len() as f64;
    let mut num = [0.0; 2];
    let mut den = [0.0; 2];
    for k in ClassLabel::ALL {
        num[k.index()] = h.count(k, i, bin) as f64 + alpha;
        den[k.index()] = h.total(k) as f64 + alpha * bins;
    }
    let lik = |k: usize| if den[k] > 0.0 { num[k] / den[k] } else { 0.0 };
    let den_sum = den[0] + den[1];
    let evidence = if den_sum > 0.0 { (num[0] + num[1]) / den_sum } else { 0.0 };
    (lik(0), lik(1), evidence)
}

/// Smoothed class prior `(N_k + alpha) / (N_b + N_m + 2 alpha)`.
pub fn nb_prior(h: &HistogramSet, k: ClassLabel, alpha: f64) -> f64 {
    let n = h.total(ClassLabel::Benign) as f64 + h.total(ClassLabel::Malicious) as f64;
    (h.total(k) as f64 + alpha) / (n + 2.0 * alpha)
}

/// Class scores for a record whose per-feature bins are `bins`, evaluated
/// in log space. Features whose evidence is zero (possible only without
/// smoothing) carry no information and are skipped.
pub fn nb_posterior(h: &HistogramSet, bins: &[usize], alpha: f64) -> ClassScores {
    if h.total(ClassLabel::Benign) == 0 && h.total(ClassLabel::Malicious) == 0 {
        return ClassScores::UNIFORM;
    }
    let mut log_score = [0.0f64; 2];
    for k in ClassLabel::ALL {
        log_score[k.index()] = nb_prior(h, k, alpha).ln();
    }
    for (i, &b) in bins.iter().enumerate() {
        let (lb, lm, e) = nb_likelihood_evidence(h, i, b, alpha);
        if e <= 0.0 {
            continue;
        }
        let le = e.ln();
        log_score[0] += lb.ln() - le;
        log_score[1] += lm.ln() - le;
    }
    let score = |l: f64| if l == f64::NEG_INFINITY { 0.0 } else { l.min(MAX_LOG_SCORE).exp() };
    ClassScores::new(score(log_score[0]), score(log_score[1]))
}

/// Elementwise sum of histograms.
pub fn nb_merge(sets: &[&HistogramSet]) -> Result<HistogramSet, ModelError> {
    let first = sets.first().ok_or(ModelError::EmptyMerge)?;
    let mut out = (*first).clone();
    for s in &sets[1..] {
        if !out.same_shape(s) {
            return Err(ModelError::ArchMismatch("histogram shapes differ".into()));
        }
        out.add_assign(s);
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct NaiveBayes {
    binnings: Vec<Binning>,
    schema_hash: u64,
    alpha: f64,
    hist: HistogramSet,
    records_seen: u64,
    /// State as of the last applied consensus; shares post only the growth
    /// beyond it.
    baseline: Option<(HistogramSet, u64)>,
}

impl NaiveBayes {
    pub fn new(schema: &FeatureSchema) -> Self {
        Self::with_geometry(schema.binnings(), schema.digest(), DEFAULT_ALPHA)
    }

    pub fn with_geometry(binnings: Vec<Binning>, schema_hash: u64, alpha: f64) -> Self {
        let bins: Vec<usize> = binnings.iter().map(Binning::bin_count).collect();
        Self { hist: HistogramSet::empty(&bins), binnings, schema_hash, alpha, records_seen: 0, baseline: None }
    }

    pub fn with_alpha(mut self, alpha: f64) -> Self {
        self.alpha = alpha.max(0.0);
        self
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn histograms(&self) -> &HistogramSet {
        &self.hist
    }

    pub fn binnings(&self) -> &[Binning] {
        &self.binnings
    }

    /// Replaces the histograms (geometry must match).
    pub fn set_histograms(&mut self, hist: HistogramSet) -> Result<(), ModelError> {
        if hist.bin_counts() != self.hist.bin_counts() {
            return Err(ModelError::ArchMismatch("histogram shape does not match geometry".into()));
        }
        self.records_seen = hist.total(ClassLabel::Benign) + hist.total(ClassLabel::Malicious);
        self.hist = hist;
        Ok(())
    }

    pub fn bins_of(&self, x: &FeatureVector) -> Result<Vec<usize>, ModelError> {
        check_dim(self.binnings.len(), x)?;
        Ok(self.binnings.iter().zip(&x.values).map(|(b, &v)| b.bin(v)).collect())
    }

    pub fn likelihood_evidence(&self, i: usize, xi: f64) -> (f64, f64, f64) {
        nb_likelihood_evidence(&self.hist, i, self.binnings[i].bin(xi), self.alpha)
    }

    pub fn merge(models: &[NaiveBayes]) -> Result<NaiveBayes, ModelError> {
        let first = models.first().ok_or(ModelError::EmptyMerge)?;
        if let Some(m) = models.iter().find(|m| m.schema_hash != first.schema_hash) {
            return Err(ModelError::SchemaMismatch { expected: first.schema_hash, got: m.schema_hash });
        }
        if models.iter().any(|m| m.binnings != first.binnings) {
            return Err(ModelError::ArchMismatch("bin geometry differs".into()));
        }
        let sets: Vec<&HistogramSet> = models.iter().map(|m| &m.hist).collect();
        let mut out = Self::with_geometry(first.binnings.clone(), first.schema_hash, first.alpha);
        out.hist = nb_merge(&sets)?;
        out.records_seen = models.iter().map(|m| m.records_seen).sum();
        Ok(out)
    }

    fn encode(&self, hist: &HistogramSet) -> Vec<u8> {
        let wide = hist.max_count() > u32::MAX as u64;
        let mut w = payload_writer(ModelKind::Nb, if wide { VERSION_U64 } else { VERSION_U32 });

        let mut header = ByteWriter::new();
        header.u64(hist.dim() as u64);
        header.f64(self.alpha);
        header.u64(hist.totals[0]);
        header.u64(hist.totals[1]);
        w.section(section::NB_HEADER, &header.into_bytes());
        w.section(section::NB_GEOMETRY, &Binning::encode_all(&self.binnings));

        for (tag, k) in [(section::NB_BENIGN, 0), (section::NB_MALICIOUS, 1)] {
            let mut body = ByteWriter::new();
            for h in &hist.counts[k] {
                body.u32(h.len() as u32);
                for &c in h {
                    if wide {
                        body.u64(c);
                    } else {
                        body.u32(c as u32);
                    }
                }
            }
            w.section(tag, &body.into_bytes());
        }
        w.into_bytes()
    }

    pub fn from_envelope(env: &ModelEnvelope) -> Result<Self, ModelError> {
        let p = PayloadHeader::parse(&env.payload, ModelKind::Nb)?;
        let wide = match p.version {
            VERSION_U32 => false,
            VERSION_U64 => true,
            v => return Err(crate::model::EnvelopeError::UnsupportedVersion(v).into()),
        };
        let codec = |e: CodecError| ModelError::from(crate::model::EnvelopeError::from(e));

        let mut r = ByteReader::new(p.section(section::NB_HEADER));
        let dim = r.u64().map_err(codec)? as usize;
        let alpha = r.f64().map_err(codec)?;
        let totals = [r.u64().map_err(codec)?, r.u64().map_err(codec)?];
        r.finish().map_err(codec)?;
        if !(alpha.is_finite() && alpha >= 0.0) {
            return Err(invalid("smoothing must be finite and nonnegative"));
        }

        let binnings = Binning::decode_all(p.section(section::NB_GEOMETRY)).map_err(codec)?;
        if binnings.len() != dim {
            return Err(invalid("geometry dimension does not match header"));
        }
        let mut counts: [Vec<Vec<u64>>; 2] = [Vec::with_capacity(dim), Vec::with_capacity(dim)];
        for (tag, k) in [(section::NB_BENIGN, 0), (section::NB_MALICIOUS, 1)] {
            let mut r = ByteReader::new(p.section(tag));
            for b in &binnings {
                let n = r.u32().map_err(codec)? as usize;
                if n != b.bin_count() {
                    return Err(invalid("histogram length does not match bin count"));
                }
                let h = (0..n)
                    .map(|_| if wide { r.u64() } else { r.u32().map(u64::from) })
                    .collect::<Result<Vec<_>, _>>()
                    .map_err(codec)?;
                counts[k].push(h);
            }
            r.finish().map_err(codec)?;
        }
        let hist = HistogramSet { counts, totals };
        hist.check_consistency().map_err(|e| invalid(&e.to_string()))?;
        Ok(Self { binnings, schema_hash: env.schema_hash, alpha, hist, records_seen: env.records_seen, baseline: None })
    }

    fn envelope(&self, org_id: &str, round: u64, hist: &HistogramSet, records_seen: u64) -> ModelEnvelope {
        ModelEnvelope {
            org_id: org_id.to_string(),
            model_kind: ModelKind::Nb,
            schema_hash: self.schema_hash,
            round,
            records_seen,
            payload: self.encode(hist),
        }
    }
}

fn invalid(msg: &str) -> ModelError {
    crate::model::EnvelopeError::Invalid(msg.to_string()).into()
}

impl Classifier for NaiveBayes {
    fn kind(&self) -> ModelKind {
        ModelKind::Nb
    }

    fn dim(&self) -> usize {
        self.binnings.len()
    }

    fn schema_hash(&self) -> u64 {
        self.schema_hash
    }

    fn records_seen(&self) -> u64 {
        self.records_seen
    }

    fn predict(&self, x: &FeatureVector) -> Result<ClassScores, ModelError> {
        let bins = self.bins_of(x)?;
        Ok(nb_posterior(&self.hist, &bins, self.alpha))
    }

    fn train_one(&mut self, x: &FeatureVector, y: ClassLabel) -> Result<(), ModelError> {
        nb_observe(&mut self.hist, &self.binnings, x, y)?;
        self.records_seen += 1;
        Ok(())
    }

    fn export(&self, org_id: &str, round: u64) -> ModelEnvelope {
        self.envelope(org_id, round, &self.hist, self.records_seen)
    }

    fn share_export(&self, org_id: &str, round: u64) -> ModelEnvelope {
        match &self.baseline {
            Some((base, base_seen)) => {
                let delta = self.hist.checked_sub(base).expect("histograms only grow after a consensus");
                self.envelope(org_id, round, &delta, self.records_seen.saturating_sub(*base_seen))
            }
            None => self.export(org_id, round),
        }
    }

    fn apply_consensus(&mut self, consensus: &ModelEnvelope) -> Result<(), ModelError> {
        check_compatible(self, consensus)?;
        let incoming = Self::from_envelope(consensus)?;
        if incoming.binnings != self.binnings {
            return Err(ModelError::ArchMismatch("bin geometry differs".into()));
        }
        self.hist = incoming.hist;
        self.alpha = incoming.alpha;
        self.records_seen = incoming.records_seen;
        self.baseline = Some((self.hist.clone(), self.records_seen));
        Ok(())
    }
}
