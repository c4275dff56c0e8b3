//! Acceptance criteria, run in order with one PASS/FAIL line each.

mod common;

use std::collections::{BTreeMap, HashSet};
use std::io::Write;
use std::time::{Duration, Instant};

use common::{http_record, oracle_apportion, oracle_bin, random_value, rel_diff, rng};
use fedstream::featurizer::{parse_record, Binning, FeatureSchema, Featurizer, RecordFormat};
use fedstream::forest::{Forest, HoeffdingTree, TreeParams};
use fedstream::mlp::{mlp_gradients, mlp_init, mlp_loss, mlp_merge, MlpHyper, MlpModel, MlpParams};
use fedstream::nb::{nb_likelihood_evidence, nb_posterior, nb_prior, HistogramSet, NaiveBayes};
use fedstream::pipeline::{run_stream, ModelSpec, Pipeline, PipelineConfig, PrequentialMetrics};
use fedstream::simulator::{gen_synthetic, run_experiment, DriftEvent, ExperimentConfig, ExperimentOutcome, SyntheticConfig};
use fedstream::{merge, ClassLabel, Classifier, FeatureVector, MergeWeights, Model, ModelEnvelope};
use rand::seq::SliceRandom;
use rand::Rng;

type Outcome = Result<String, String>;

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(start: Instant, budget: Duration) -> Result<(), String> {
    let t = start.elapsed();
    check(t < budget, || format!("took {:.1} s, budget {:.0} s", t.as_secs_f64(), budget.as_secs_f64()))
}

fn random_vectors<R: Rng>(r: &mut R, binnings: &[Binning], digest: u64, n: usize) -> Vec<(FeatureVector, ClassLabel)> {
    (0..n)
        .map(|_| {
            let x = binnings.iter().map(|b| random_value(r, b)).collect();
            let y = if r.random::<bool>() { ClassLabel::Malicious } else { ClassLabel::Benign };
            (FeatureVector::new(x, digest), y)
        })
        .collect()
}

fn nb_merge_exactness() -> Outcome {
    let start = Instant::now();
    let schema = FeatureSchema::default_http();
    let binnings = schema.binnings();
    let mut r = rng(1);
    for trial in 0..50 {
        let n = r.random_range(500..=5_000);
        let parts = r.random_range(2..=5);
        let data = random_vectors(&mut r, &binnings, schema.digest(), n);
        let mut cuts: Vec<usize> = (0..parts - 1).map(|_| r.random_range(0..=n)).collect();
        cuts.push(0);
        cuts.push(n);
        cuts.sort_unstable();

        let mut whole = NaiveBayes::new(&schema);
        let mut recount: Vec<[Vec<u64>; 2]> = binnings.iter().map(|b| [vec![0; b.bin_count()], vec![0; b.bin_count()]]).collect();
        for (x, y) in &data {
            whole.train_one(x, *y).unwrap();
            for (i, b) in binnings.iter().enumerate() {
                recount[i][y.index()][oracle_bin(b, x.values[i])] += 1;
            }
        }
        let envs: Vec<ModelEnvelope> = cuts
            .windows(2)
            .enumerate()
            .map(|(p, w)| {
                let mut nb = NaiveBayes::new(&schema);
                for (x, y) in &data[w[0]..w[1]] {
                    nb.train_one(x, *y).unwrap();
                }
                nb.export(&format!("part{p}"), 1)
            })
            .collect();
        let merged = merge(&envs, &MergeWeights::uniform(envs.len()).unwrap(), 0).unwrap();
        let merged = NaiveBayes::from_envelope(&merged).unwrap();
        check(merged.histograms() == whole.histograms(), || format!("trial {trial}: merged histograms differ"))?;
        for (i, counts) in recount.iter().enumerate() {
            for k in ClassLabel::ALL {
                check(whole.histograms().histogram(k, i) == counts[k.index()].as_slice(), || {
                    format!("trial {trial}: feature {i} disagrees with the recount oracle")
                })?;
            }
        }
    }
    within(start, Duration::from_secs(30))?;
    Ok(format!("50 streams exact, {:.2} s", start.elapsed().as_secs_f64()))
}

/// Histograms with consistent class totals over random bin counts.
fn random_histograms<R: Rng>(r: &mut R, dims: &[usize], min_count: u64) -> HistogramSet {
    let mut per_class = Vec::new();
    for _ in ClassLabel::ALL {
        let extra = r.random_range(0..200u64);
        let h: Vec<Vec<u64>> = dims
            .iter()
            .map(|&bins| {
                let mut v = vec![min_count; bins];
                for _ in 0..extra {
                    v[r.random_range(0..bins)] += 1;
                }
                v
            })
            .collect();
        per_class.push(h);
    }
    // equalize totals across features by topping up the first bin
    for h in per_class.iter_mut() {
        let max = h.iter().map(|v| v.iter().sum::<u64>()).max().unwrap();
        for v in h.iter_mut() {
            let s: u64 = v.iter().sum();
            v[0] += max - s;
        }
    }
    let m = per_class.pop().unwrap();
    let b = per_class.pop().unwrap();
    HistogramSet::from_counts(b, m).unwrap()
}

fn nb_posterior_equivalence() -> Outcome {
    let start = Instant::now();
    let mut r = rng(2);
    let mut worst: f64 = 0.0;
    let mut ties = 0;
    for case in 0..1_000 {
        let n = r.random_range(1..=20);
        let dims: Vec<usize> = (0..n).map(|_| r.random_range(2..=16)).collect();
        let (alpha, min_count) = if case % 4 == 0 { (0.0, 1) } else { (1.0, 0) };
        let h = random_histograms(&mut r, &dims, min_count);
        let bins: Vec<usize> = dims.iter().map(|&d| r.random_range(0..d)).collect();

        // independent evaluation from raw counts
        let nk = [h.total(ClassLabel::Benign) as f64, h.total(ClassLabel::Malicious) as f64];
        let mut lik = [1.0f64; 2];
        let mut z = 1.0f64;
        let mut eq43 = [(nk[0] + alpha) / (nk[0] + nk[1] + 2.0 * alpha), (nk[1] + alpha) / (nk[0] + nk[1] + 2.0 * alpha)];
        let prior = eq43;
        for (i, &b) in bins.iter().enumerate() {
            let width = dims[i] as f64;
            let hb = h.count(ClassLabel::Benign, i, b) as f64 + alpha;
            let hm = h.count(ClassLabel::Malicious, i, b) as f64 + alpha;
            let nb_ = nk[0] + alpha * width;
            let nm_ = nk[1] + alpha * width;
            let (lb, lm, e) = (hb / nb_, hm / nm_, (hb + hm) / (nb_ + nm_));
            lik[0] *= lb;
            lik[1] *= lm;
            z *= e;
            eq43[0] *= lb / e;
            eq43[1] *= lm / e;
        }
        let zform = [prior[0] * lik[0] / z, prior[1] * lik[1] / z];
        let lib = nb_posterior(&h, &bins, alpha);
        for k in 0..2 {
            let lib_k = [lib.benign, lib.malicious][k];
            let d = rel_diff(eq43[k], zform[k]).max(rel_diff(lib_k, zform[k]));
            worst = worst.max(d);
            check(d < 1e-12, || format!("case {case}: class {k} forms differ by {d:e}"))?;
        }
        // library pieces agree with the hand formulas too
        let (lb, _, _) = nb_likelihood_evidence(&h, 0, bins[0], alpha);
        let hb = h.count(ClassLabel::Benign, 0, bins[0]) as f64 + alpha;
        check(rel_diff(lb, hb / (nk[0] + alpha * dims[0] as f64)) < 1e-15, || format!("case {case}: likelihood"))?;
        check(rel_diff(nb_prior(&h, ClassLabel::Benign, alpha), prior[0]) < 1e-15, || format!("case {case}: prior"))?;

        let unnorm = [prior[0] * lik[0], prior[1] * lik[1]];
        if rel_diff(unnorm[0], unnorm[1]) < 1e-12 {
            ties += 1;
            continue;
        }
        let want = if unnorm[1] > unnorm[0] { ClassLabel::Malicious } else { ClassLabel::Benign };
        check(lib.predicted() == want, || format!("case {case}: argmax disagrees"))?;
    }
    within(start, Duration::from_secs(5))?;
    Ok(format!("1000 cases, worst relative difference {worst:.1e}, {ties} exact ties skipped for ranking"))
}

fn random_params<R: Rng>(r: &mut R, shapes_seed: u64) -> MlpParams {
    let input = r.random_range(2..=8);
    let depth = r.random_range(1..=3);
    let hidden: Vec<usize> = (0..depth).map(|_| r.random_range(2..=8)).collect();
    let mut p = mlp_init(input, &hidden, shapes_seed).unwrap();
    for l in p.layers.iter_mut() {
        l.biases.iter_mut().for_each(|b| *b = r.random_range(-0.5..0.5));
    }
    p
}

fn mlp_gradient_check() -> Outcome {
    let start = Instant::now();
    let mut r = rng(3);
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    for net in 0..100 {
        let p = random_params(&mut r, net);
        let x: Vec<f64> = (0..p.input_dim()).map(|_| r.random_range(-1.0..1.0)).collect();
        let y = if r.random::<bool>() { ClassLabel::Malicious } else { ClassLabel::Benign };
        let (_, g) = mlp_gradients(&p, &x, y).unwrap();
        let analytic = g.flat();
        let mut numeric = Vec::with_capacity(analytic.len());
        for j in 0..analytic.len() {
            let mut plus = p.clone();
            *plus.flat_mut()[j] += h;
            let mut minus = p.clone();
            *minus.flat_mut()[j] -= h;
            numeric.push((mlp_loss(&plus, &x, y).unwrap() - mlp_loss(&minus, &x, y).unwrap()) / (2.0 * h));
        }
        let diff: f64 = analytic.iter().zip(&numeric).map(|(a, n)| (a - n).powi(2)).sum::<f64>().sqrt();
        let na: f64 = analytic.iter().map(|a| a * a).sum::<f64>().sqrt();
        let nn: f64 = numeric.iter().map(|a| a * a).sum::<f64>().sqrt();
        let err = if diff == 0.0 { 0.0 } else { diff / na.max(nn) };
        worst = worst.max(err);
        check(err < 1e-5, || format!("network {net}: relative error {err:e}"))?;
    }
    within(start, Duration::from_secs(30))?;
    Ok(format!("100 networks, max relative error {worst:.1e}"))
}

fn bits(p: &MlpParams) -> Vec<u64> {
    p.flat().iter().map(|v| v.to_bits()).collect()
}

fn mlp_merge_properties() -> Outcome {
    let start = Instant::now();
    let mut r = rng(4);
    for trial in 0..1_000 {
        let base = random_params(&mut r, trial);
        let k = r.random_range(1..=6);
        let models: Vec<MlpParams> = (0..k)
            .map(|_| {
                let mut m = base.clone();
                m.flat_mut().into_iter().for_each(|v| *v = r.random_range(-3.0..3.0));
                m
            })
            .collect();
        let refs: Vec<&MlpParams> = models.iter().collect();
        let raw: Vec<f64> = (0..k).map(|_| if r.random::<f64>() < 0.2 { 0.0 } else { r.random_range(0.0..5.0) }).collect();
        let raw = if raw.iter().sum::<f64>() == 0.0 { vec![1.0; k] } else { raw };
        let a = MergeWeights::new(raw.clone()).unwrap();

        // one-hot identity
        let j = r.random_range(0..k);
        let id = mlp_merge(&refs, &MergeWeights::one_hot(k, j).unwrap()).unwrap();
        check(bits(&id) == bits(&models[j]), || format!("trial {trial}: one-hot merge is not the identity"))?;

        // convex hull of the contributing models
        let merged = mlp_merge(&refs, &a).unwrap();
        let flats: Vec<Vec<f64>> = models.iter().map(|m| m.flat()).collect();
        for (e, v) in merged.flat().iter().enumerate() {
            let contrib = flats.iter().zip(a.as_slice()).filter(|(_, w)| **w > 0.0).map(|(f, _)| f[e]);
            let (lo, hi) = contrib.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), c| (lo.min(c), hi.max(c)));
            check(*v >= lo && *v <= hi, || format!("trial {trial}: element {e} = {v} outside [{lo}, {hi}]"))?;
        }

        // permutation equivariance
        let mut perm: Vec<usize> = (0..k).collect();
        perm.shuffle(&mut r);
        let prefs: Vec<&MlpParams> = perm.iter().map(|&i| &models[i]).collect();
        let pa = MergeWeights::new(perm.iter().map(|&i| raw[i]).collect()).unwrap();
        let pm = mlp_merge(&prefs, &pa).unwrap();
        check(bits(&pm) == bits(&merged), || format!("trial {trial}: permuted merge differs"))?;
    }
    Ok(format!("3 x 1000 trials, 0 failures, {:.2} s", start.elapsed().as_secs_f64()))
}

fn forest_merge_contract() -> Outcome {
    let start = Instant::now();
    let mut r = rng(5);
    let schema = FeatureSchema::numeric(4, 0.0, 1.0, 8).unwrap();
    let params = TreeParams { grace_period: 10, ..TreeParams::default() };
    for trial in 0..200u64 {
        let k = r.random_range(1..=5);
        let m = r.random_range(1..=25);
        let mut envs = Vec::new();
        let mut digests: Vec<HashSet<u64>> = Vec::new();
        for s in 0..k {
            let mut f = Forest::new(&schema, m, params, trial * 10 + s as u64).unwrap();
            for _ in 0..r.random_range(0..120) {
                let x: Vec<f64> = (0..4).map(|_| r.random::<f64>()).collect();
                let y = if x[0] + r.random_range(-0.2..0.2) > 0.5 { ClassLabel::Malicious } else { ClassLabel::Benign };
                f.train_one(&FeatureVector::new(x, schema.digest()), y).unwrap();
            }
            let env = f.export(&format!("src{s}"), trial);
            let back = Forest::from_envelope(&env).unwrap();
            digests.push(back.trees().iter().map(HoeffdingTree::digest).collect());
            envs.push(env);
        }
        let raw: Vec<f64> = (0..k).map(|_| if r.random::<f64>() < 0.15 { 0.0 } else { r.random_range(0.0..1.0) }).collect();
        let raw = if raw.iter().sum::<f64>() == 0.0 { vec![1.0; k] } else { raw };
        let a = MergeWeights::new(raw).unwrap();
        let seed = r.random::<u64>();
        let out = merge(&envs, &a, seed).unwrap();
        let again = merge(&envs, &a, seed).unwrap();
        check(out.payload == again.payload, || format!("trial {trial}: same seed gave different selections"))?;
        let merged = Forest::from_envelope(&out).unwrap();
        check(merged.m() == m, || format!("trial {trial}: {} trees, expected {m}", merged.m()))?;
        let mut per_source = vec![0usize; k];
        for t in merged.trees() {
            let org = &t.origin.as_ref().ok_or("merged tree lost its origin")?.org_id;
            let s: usize = org.trim_start_matches("src").parse().map_err(|_| "bad origin".to_string())?;
            check(digests[s].contains(&t.digest()), || format!("trial {trial}: tree matches no input tree"))?;
            per_source[s] += 1;
        }
        let want = oracle_apportion(a.as_slice(), m);
        check(per_source == want, || format!("trial {trial}: allocation {per_source:?}, expected {want:?}"))?;
    }
    Ok(format!("200 merges, {:.2} s", start.elapsed().as_secs_f64()))
}

fn pipeline_offline_equivalence() -> Outcome {
    let start = Instant::now();
    let mut cfg = SyntheticConfig::block_patterns(1, 20_000, 3, 12, 3, 0.1, 6);
    cfg.label_fraction = 0.5;
    let stream = gen_synthetic(&cfg).map_err(|e| e.to_string())?.remove(0);
    let schema = cfg.schema();
    let mut summary = Vec::new();
    for spec in [ModelSpec::nb(), ModelSpec::mlp(3), ModelSpec::forest(5, 9)] {
        let pc = PipelineConfig::new("org0");
        let mut p = Pipeline::new(pc.clone(), schema.clone(), spec.build(&schema).unwrap()).unwrap();
        let report = run_stream(stream.records.iter().cloned().map(Ok), &mut p, None).unwrap();

        let mut model: Model = spec.build(&schema).unwrap();
        let f = Featurizer::new(schema.clone());
        let mut metrics = PrequentialMetrics::new(pc.window);
        let mut alerts = 0u64;
        for rec in &stream.records {
            let x = f.featurize(rec);
            let s = model.predict(&x).unwrap();
            match rec.label {
                Some(y) => {
                    metrics.update(s.classify(pc.threshold), y);
                    model.train_one(&x, y).unwrap();
                }
                None if s.classify(pc.threshold) == ClassLabel::Malicious => alerts += 1,
                None => {}
            }
        }
        let kind = spec.kind;
        check(p.model().export("org0", 0).payload == model.export("org0", 0).payload, || {
            format!("{kind}: final model payloads differ")
        })?;
        check(p.metrics().windowed() == metrics.windowed() && p.metrics().cumulative() == metrics.cumulative(), || {
            format!("{kind}: metrics differ")
        })?;
        check(report.counters.alerts_emitted == alerts, || format!("{kind}: alert counts differ"))?;
        check(report.counters.records_processed == 20_000, || format!("{kind}: processed count"))?;
        summary.push(format!("{kind} acc={:.3}", report.cumulative.accuracy));
    }
    Ok(format!("20000 records, identical payloads and metrics ({}), {:.1} s", summary.join(", "), start.elapsed().as_secs_f64()))
}

fn criterion7_config(seed: u64) -> ExperimentConfig {
    let mut s = SyntheticConfig::block_patterns(4, 10_000, 4, 16, 2, 0.1, seed);
    s.label_fraction = 0.5;
    s.holdout = 4_000;
    let mut cfg = ExperimentConfig::new(s, ModelSpec::nb(), 2_000);
    cfg.merge_seed = seed;
    cfg
}

fn federated_benefit(outcomes: &mut Vec<ExperimentOutcome>) -> Outcome {
    let start = Instant::now();
    let mut wins = 0;
    let mut lines = Vec::new();
    for seed in 1..=5u64 {
        let cfg = criterion7_config(seed);
        let out = run_experiment(&cfg).map_err(|e| e.to_string())?;
        let consensus = out.report.federated.consensus_holdout.ok_or("no consensus")?.accuracy;
        let isolated = out.report.isolated.mean_holdout_accuracy();
        if consensus > isolated {
            wins += 1;
        }
        lines.push(format!("{consensus:.3}>{isolated:.3}"));

        // the NB consensus is the pooled-data model
        let streams = gen_synthetic(&cfg.synthetic).unwrap();
        let schema = cfg.synthetic.schema();
        let f = Featurizer::new(schema.clone());
        let mut pooled = NaiveBayes::new(&schema);
        for s in &streams {
            for rec in s.records.iter().filter(|r| r.label.is_some()) {
                pooled.train_one(&f.featurize(rec), rec.label.unwrap()).unwrap();
            }
        }
        let c = NaiveBayes::from_envelope(out.final_consensus.as_ref().ok_or("no consensus")?).unwrap();
        check(c.histograms() == pooled.histograms(), || format!("seed {seed}: consensus differs from the pooled model"))?;
        outcomes.push(out);
    }
    check(wins >= 4, || format!("federated won in {wins} of 5 seeds ({})", lines.join(", ")))?;
    within(start, Duration::from_secs(120))?;
    Ok(format!(
        "consensus beat mean isolated in {wins}/5 seeds ({}), consensus == pooled in 5/5, {:.1} s",
        lines.join(", "),
        start.elapsed().as_secs_f64()
    ))
}

fn drift_recovery() -> Outcome {
    let start = Instant::now();
    let mut ok = 0;
    let mut notes = Vec::new();
    for seed in 1..=5u64 {
        // the attack mean moves from the first feature block to the second
        // while benign traffic rises on the first
        let mut cfg = SyntheticConfig::block_patterns(1, 20_000, 2, 16, 1, 0.1, seed);
        cfg.label_fraction = 1.0;
        let attack: Vec<f64> = (0..16).map(|f| if f < 8 { -0.6 } else { 0.6 }).collect();
        let benign: Vec<f64> = (0..16).map(|f| if f < 8 { 0.6 } else { 0.0 }).collect();
        cfg.drift_events.push(DriftEvent { at: 10_000, pattern: Some(0), shift: attack });
        cfg.drift_events.push(DriftEvent { at: 10_000, pattern: None, shift: benign });
        let stream = gen_synthetic(&cfg).unwrap().remove(0);
        let schema = cfg.schema();
        let pc = PipelineConfig { window: 200, trace_every: 50, ..PipelineConfig::new("org0") };
        let model = MlpModel::new(&schema, &MlpHyper { init_seed: seed, ..MlpHyper::default() }).unwrap();
        let mut p = Pipeline::new(pc, schema, model).unwrap();
        let report = run_stream(stream.records.iter().cloned().map(Ok), &mut p, None).unwrap();
        let acc: BTreeMap<u64, f64> = report.trace.iter().map(|t| (t.records_processed, t.window_accuracy)).collect();
        let pre = acc[&10_000];
        let (dip_at, dip) = acc.range(10_001..=10_500).fold((0, f64::INFINITY), |b, (&k, &v)| if v < b.1 { (k, v) } else { b });
        let recovered = acc.range(dip_at..=15_000).find(|(_, &v)| v >= pre - 0.05).map(|(&k, _)| k);
        let pass = pre - dip >= 0.10 && recovered.is_some();
        if pass {
            ok += 1;
        }
        notes.push(format!(
            "pre {pre:.3} dip {dip:.3} back@{}",
            recovered.map_or("never".to_string(), |k| (k - 10_000).to_string())
        ));
    }
    check(ok >= 4, || format!("{ok}/5 seeds recovered: {}", notes.join("; ")))?;
    within(start, Duration::from_secs(60))?;
    Ok(format!("{ok}/5 seeds: {}, {:.1} s", notes.join("; "), start.elapsed().as_secs_f64()))
}

fn resource_bounds() -> Outcome {
    let schema = FeatureSchema::default_http();
    let mut r = rng(9);
    let records: Vec<_> = (0..50_000).map(|i| http_record(&mut r, i, i % 2 == 0)).collect();
    let f = Featurizer::new(schema.clone());

    let mut nb = NaiveBayes::new(&schema);
    let mut forest = Forest::new(&schema, 20, TreeParams::default(), 1).unwrap();
    for rec in records.iter().take(20_000).filter(|r| r.label.is_some()) {
        let x = f.featurize(rec);
        nb.train_one(&x, rec.label.unwrap()).unwrap();
        forest.train_one(&x, rec.label.unwrap()).unwrap();
    }
    let nb_size = nb.export("org", 1).to_bytes().len();
    let mlp = MlpModel::new(&schema, &MlpHyper::default()).unwrap();
    let mlp_size = mlp.export("org", 1).to_bytes().len();
    let forest_size = forest.export("org", 1).to_bytes().len();
    check(nb_size < 64 * 1024, || format!("NB envelope {nb_size} bytes"))?;
    check(mlp_size < 64 * 1024, || format!("MLP envelope {mlp_size} bytes"))?;
    check(forest_size < 1 << 20, || format!("forest envelope {forest_size} bytes"))?;
    check(mlp.params().param_count() == 8_038, || "unexpected MLP parameter count".into())?;

    let lines: Vec<String> = records.iter().map(|r| r.to_json_line()).collect();
    let mut p = Pipeline::new(PipelineConfig::new("org"), schema.clone(), NaiveBayes::new(&schema)).unwrap();
    let start = Instant::now();
    let report = run_stream(lines.iter().map(|l| parse_record(l, RecordFormat::Jsonl)), &mut p, None).unwrap();
    let rate = report.counters.records_processed as f64 / start.elapsed().as_secs_f64();
    check(rate >= 10_000.0, || format!("NB pipeline throughput {rate:.0} records/s"))?;
    Ok(format!(
        "NB {nb_size} B, MLP {mlp_size} B (8038 params), forest(m=20) {forest_size} B, NB pipeline {rate:.0} records/s"
    ))
}

fn raw_data_firewall(outcomes: &[ExperimentOutcome]) -> Outcome {
    check(outcomes.len() == 5, || "criterion 7 runs unavailable".into())?;
    let forbidden: [&[u8]; 5] = [b"-r0", b"record_id", b"synthetic", b"\"f0\"", b"timestamp"];
    let mut messages = 0;
    let mut bytes = 0;
    for out in outcomes {
        for log in std::iter::once(&out.federated_log).chain(&out.isolated_logs) {
            messages += log.audit()?;
            for (entry, wire) in log.wire_messages() {
                bytes += wire.len();
                for pat in forbidden {
                    check(!wire.windows(pat.len()).any(|w| w == pat), || {
                        format!("round {} from {}: record bytes {:?} found", entry.round, entry.from, String::from_utf8_lossy(pat))
                    })?;
                }
            }
        }
    }
    Ok(format!("{messages} messages ({bytes} bytes) parse as envelopes, 0 record bytes"))
}

#[test]
fn acceptance_criteria() {
    let mut outcomes = Vec::new();
    let results: Vec<(&str, Outcome)> = vec![
        ("1 NB merge exactness", nb_merge_exactness()),
        ("2 NB posterior equivalence", nb_posterior_equivalence()),
        ("3 MLP gradient check", mlp_gradient_check()),
        ("4 weighted-average merge properties", mlp_merge_properties()),
        ("5 forest merge contract", forest_merge_contract()),
        ("6 pipeline/offline equivalence", pipeline_offline_equivalence()),
        ("7 federated benefit", federated_benefit(&mut outcomes)),
        ("8 drift recovery", drift_recovery()),
        ("9 resource bounds", resource_bounds()),
        ("10 raw-data firewall", raw_data_firewall(&outcomes)),
    ];
    let mut out = std::io::stdout().lock();
    let mut failed = Vec::new();
    for (name, res) in &results {
        let line = match res {
            Ok(detail) => format!("criterion {name}: PASS - {detail}"),
            Err(why) => {
                failed.push(*name);
                format!("criterion {name}: FAIL - {why}")
            }
        };
        writeln!(out, "{line}").unwrap();
    }
    out.flush().unwrap();
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
