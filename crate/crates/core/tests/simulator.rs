use std::collections::BTreeMap;

use fedstream::nb::NaiveBayes;
use fedstream::pipeline::ModelSpec;
use fedstream::simulator::{
    evaluate, gen_holdout, gen_pooled, gen_synthetic, partition, run_experiment, ExperimentConfig, OrgStream, Partition,
    RunMode, SyntheticConfig,
};
use fedstream::featurizer::Featurizer;
use fedstream::{ClassLabel, Classifier, Model};

fn multiset(streams: &[&OrgStream]) -> BTreeMap<String, usize> {
    let mut m = BTreeMap::new();
    for s in streams {
        for r in &s.records {
            *m.entry(r.to_json_line()).or_insert(0) += 1;
        }
    }
    m
}

fn nb_on(cfg: &SyntheticConfig, streams: &[&OrgStream]) -> NaiveBayes {
    let s = cfg.schema();
    let f = Featurizer::new(s.clone());
    let mut nb = NaiveBayes::new(&s);
    for st in streams {
        for (r, &y) in st.records.iter().zip(&st.truth) {
            nb.train_one(&f.featurize(r), y).unwrap();
        }
    }
    nb
}

#[test]
fn round_robin_splits_evenly_and_preserves_records() {
    let cfg = SyntheticConfig::block_patterns(1, 10, 2, 8, 2, 0.05, 1);
    let pooled = gen_pooled(&cfg, 10).unwrap();
    let parts = partition(&pooled, 2, &Partition::RoundRobin).unwrap();
    assert_eq!(parts.iter().map(OrgStream::len).collect::<Vec<_>>(), vec![5, 5]);
    assert_eq!(multiset(&parts.iter().collect::<Vec<_>>()), multiset(&[&pooled]));
}

#[test]
fn by_pattern_routes_each_pattern_to_its_orgs() {
    let cfg = SyntheticConfig::block_patterns(1, 3_000, 3, 12, 3, 0.05, 2);
    let pooled = gen_pooled(&cfg, 3_000).unwrap();
    let map = vec![vec![0], vec![1, 2], vec![2]];
    let parts = partition(&pooled, 3, &Partition::ByPattern { map: map.clone() }).unwrap();
    assert_eq!(multiset(&parts.iter().collect::<Vec<_>>()), multiset(&[&pooled]));

    // recount: pattern k lands only on its mapped orgs, background round-robin
    let mut want = [[0usize; 4]; 3];
    let (mut bg, mut next) = (0usize, vec![0usize; 3]);
    for src in &pooled.source {
        match src {
            Some(k) => {
                want[map[*k][next[*k] % map[*k].len()]][*k] += 1;
                next[*k] += 1;
            }
            None => {
                want[bg % 3][3] += 1;
                bg += 1;
            }
        }
    }
    for (o, part) in parts.iter().enumerate() {
        let mut got = [0usize; 4];
        for src in &part.source {
            got[src.unwrap_or(3)] += 1;
        }
        assert_eq!(got, want[o], "org {o}");
    }
    assert!(partition(&pooled, 3, &Partition::ByPattern { map: vec![vec![0]] }).is_err());
    assert!(partition(&pooled, 0, &Partition::RoundRobin).is_err());
}

#[test]
fn well_separated_patterns_are_learned_by_pooled_nb() {
    // 0.6 apart at std 0.05: twelve standard deviations
    let mut cfg = SyntheticConfig::block_patterns(1, 5_000, 3, 12, 3, 0.05, 3);
    cfg.holdout = 3_000;
    let pooled = gen_pooled(&cfg, 5_000).unwrap();
    let nb = nb_on(&cfg, &[&pooled]);
    let acc = evaluate(&nb, &cfg.schema(), &gen_holdout(&cfg).unwrap(), 0.5).unwrap().accuracy;
    assert!(acc > 0.99, "accuracy {acc}");
}

fn disjoint_two_org(mode: RunMode) -> (SyntheticConfig, ExperimentConfig) {
    let mut syn = SyntheticConfig::block_patterns(2, 2_000, 2, 8, 1, 0.05, 4);
    syn.label_fraction = 1.0;
    syn.holdout = 2_000;
    let mut cfg = ExperimentConfig::new(syn.clone(), ModelSpec::nb(), 2_000);
    cfg.mode = mode;
    (syn, cfg)
}

#[test]
fn federated_nb_equals_pooled_and_isolated_misses_the_unseen_pattern() {
    let (syn, cfg) = disjoint_two_org(RunMode::Sequential);
    let out = run_experiment(&cfg).unwrap();
    let streams = gen_synthetic(&syn).unwrap();
    let pooled = nb_on(&syn, &streams.iter().collect::<Vec<_>>());
    for env in &out.federated_models {
        let Model::Nb(m) = Model::from_envelope(env).unwrap() else { panic!("nb expected") };
        assert_eq!(m.histograms(), pooled.histograms());
    }

    // records of the pattern org 0 never saw
    let mut unseen = gen_holdout(&syn).unwrap();
    let keep: Vec<bool> = unseen.source.iter().map(|s| *s == Some(1)).collect();
    let mut k = keep.iter();
    unseen.records.retain(|_| *k.next().unwrap());
    unseen.truth = vec![ClassLabel::Malicious; unseen.records.len()];
    unseen.source = vec![Some(1); unseen.records.len()];
    assert!(unseen.len() > 100);

    let s = syn.schema();
    let iso = Model::from_envelope(&out.isolated_models[0]).unwrap();
    let fed = Model::from_envelope(&out.federated_models[0]).unwrap();
    let iso_tpr = evaluate(&iso, &s, &unseen, 0.5).unwrap().tpr;
    let fed_tpr = evaluate(&fed, &s, &unseen, 0.5).unwrap().tpr;
    assert!(fed_tpr > 0.99, "federated tpr {fed_tpr}");
    assert!(iso_tpr < fed_tpr, "isolated {iso_tpr} vs federated {fed_tpr}");
    assert!(out.report.federated.mean_holdout_accuracy() > out.report.isolated.mean_holdout_accuracy());
}

#[test]
fn single_org_arms_are_identical() {
    for spec in [ModelSpec::nb(), ModelSpec::mlp(1), ModelSpec::forest(4, 1)] {
        let syn = SyntheticConfig::block_patterns(1, 1_500, 2, 8, 2, 0.1, 5);
        let out = run_experiment(&ExperimentConfig::new(syn, spec, 500)).unwrap();
        let (i, f) = (&out.report.isolated, &out.report.federated);
        assert_eq!(i.orgs[0].holdout, f.orgs[0].holdout);
        assert_eq!(i.orgs[0].run.counters, f.orgs[0].run.counters);
        assert_eq!(out.isolated_models[0].to_bytes(), out.federated_models[0].to_bytes());
    }
}

#[test]
fn arms_see_identical_streams() {
    let syn = SyntheticConfig::block_patterns(3, 1_000, 3, 9, 1, 0.1, 6);
    let out = run_experiment(&ExperimentConfig::new(syn.clone(), ModelSpec::nb(), 250)).unwrap();
    let streams = gen_synthetic(&syn).unwrap();
    for (o, s) in streams.iter().enumerate() {
        let want = format!("{:016x}", s.digest());
        assert_eq!(out.report.isolated.orgs[o].stream_digest, want);
        assert_eq!(out.report.federated.orgs[o].stream_digest, want);
        assert_eq!(out.report.isolated.orgs[o].run.records_processed(), 1_000);
        assert_eq!(out.report.federated.orgs[o].run.records_processed(), 1_000);
    }
}

#[test]
fn experiments_are_deterministic_across_modes() {
    let (_, threaded) = disjoint_two_org(RunMode::Threaded);
    let (_, sequential) = disjoint_two_org(RunMode::Sequential);
    let a = run_experiment(&threaded).unwrap();
    let b = run_experiment(&threaded).unwrap();
    let c = run_experiment(&sequential).unwrap();
    assert_eq!(a.report, b.report);
    assert_eq!(a.report, c.report);
    assert_eq!(a.federated_log.to_jsonl(), c.federated_log.to_jsonl());
}
