use std::collections::HashSet;

use protoclust::capture::{strip_lower_layers, OsiLayer, RawPacket};
use protoclust::hybrid::{
    method_for, run_benchmark, run_pipeline, FeatureMethod, ParamSource, RunConfig, Strategy, StrategyName, Tokenizer,
};
use protoclust::optimize::{select_header_length, select_topic_size, TopicScoring};
use protoclust::synth::{presets, ClassSpec, Encapsulation, LengthRange, Segment, SyntheticSpec};
use protoclust::tokenize::{TokenCorpus, TokenMethod};

fn small(name: &str, total: usize, seed: u64) -> protoclust::capture::Dataset {
    presets::by_name(name).unwrap().scaled(total).unwrap().dataset(seed).unwrap()
}

fn quick() -> RunConfig {
    RunConfig {
        seed: 5,
        lda_iters: 60,
        k_range: (2..=5).collect(),
        len_range: vec![6, 8, 10],
        ..RunConfig::default()
    }
}

#[test]
fn rerun_with_recorded_choices_reproduces_labels() {
    let d = small("icmp_types", 50, 1);
    let cfg = quick();
    let first = run_pipeline(&d, Strategy::LDA_UPGMA, &cfg).unwrap();
    assert_eq!(first.header_len.source, ParamSource::HeaderSweep);
    assert_eq!(first.topic_size.unwrap().source, ParamSource::HeaderSweep);

    // the report carries everything needed to pin the run
    let json = first.to_json().unwrap();
    let v: serde_json::Value = serde_json::from_str(&json).unwrap();
    let pinned = RunConfig {
        header_len: Some(v["header_len"]["value"].as_u64().unwrap() as usize),
        topic_size: Some(v["topic_size"]["value"].as_u64().unwrap() as usize),
        ..serde_json::from_value(v["config"].clone()).unwrap()
    };
    let again = run_pipeline(&d, Strategy::LDA_UPGMA, &pinned).unwrap();
    assert_eq!(again.assignment.labels, first.assignment.labels);
    assert_eq!(again.header_len.source, ParamSource::Config);
}

#[test]
fn hybrid_matches_tf_upgma_below_application_layer() {
    for (name, layer) in [("link", OsiLayer::Link), ("transport", OsiLayer::Transport)] {
        let d = small(name, 60, 2);
        assert_eq!(d.osi_target, layer);
        let cfg = RunConfig {
            header_len: Some(12),
            ..quick()
        };
        let h = run_pipeline(&d, Strategy::HYBRID, &cfg).unwrap();
        let t = run_pipeline(&d, Strategy::TF_UPGMA, &cfg).unwrap();
        assert_eq!(h.strategy.name, StrategyName::Hybrid);
        assert_eq!((h.strategy.tokenizer, h.strategy.features), (Tokenizer::Ngram3, FeatureMethod::Tf));
        assert_eq!(h.assignment.labels, t.assignment.labels, "{name}");
    }
}

#[test]
fn hybrid_routes_application_payloads() {
    let cfg = RunConfig::default();
    let text = method_for(&small("app_text", 40, 0), &cfg);
    assert_eq!((text.tokenizer, text.features), (Tokenizer::Nemesys, FeatureMethod::Tf));
    let bin = method_for(&small("app_binary", 40, 0), &cfg);
    assert_eq!((bin.tokenizer, bin.features), (Tokenizer::Ngram3, FeatureMethod::Lda));
    let lda_text = method_for(
        &small("app_text", 40, 0),
        &RunConfig {
            text_features: FeatureMethod::Lda,
            ..cfg
        },
    );
    assert_eq!(lda_text.features, FeatureMethod::Lda);
}

#[test]
fn unscorable_lengths_are_skipped_without_shifting_the_rest() {
    let d = small("planted_header", 60, 3);
    let payloads: Vec<Vec<u8>> = d.packets.iter().map(|p| strip_lower_layers(p, d.osi_target).unwrap()).collect();
    let scoring = TopicScoring {
        lda: protoclust::features::LdaConfig {
            iters: 40,
            ..Default::default()
        },
        ..Default::default()
    };
    // a 2-byte header yields a single 3-gram-free corpus: too few tokens to score
    let lens = [2, 6, 8, 10, 12];
    let ks: Vec<usize> = (2..=5).collect();
    let s = select_header_length(&payloads, d.osi_target, &lens, &ks, &scoring, 3, 9).unwrap();
    let got: Vec<usize> = s.rows.iter().map(|r| r.length).collect();
    assert!(!got.contains(&2));
    assert_eq!(got, vec![6, 8, 10, 12]);

    // each surviving row matches a sweep run on that length alone
    for r in &s.rows {
        let alone = select_header_length(&payloads, d.osi_target, &[r.length], &ks, &scoring, 3, 9).unwrap();
        assert_eq!(alone.rows[0], *r);
    }
}

#[test]
fn vocabulary_smaller_than_top_m_is_an_error() {
    let docs = vec![vec!["a".to_string(), "b".to_string()], vec!["b".to_string(), "c".to_string()]];
    let c = TokenCorpus::from_docs(docs, TokenMethod::Ngram);
    let err = select_topic_size(&c, &[2, 3, 4], &TopicScoring::default(), 0, 0).unwrap_err();
    assert!(err.to_string().contains("smaller than M"), "{err}");
}

#[test]
fn pool_segments_share_one_flow_per_packet() {
    let spec = SyntheticSpec {
        name: "flows".into(),
        encapsulation: Encapsulation::Ipv4,
        classes: vec![
            ClassSpec {
                label: "a".into(),
                support: 80,
                template: vec![
                    Segment::Pool { len: 2, size: 3 },
                    Segment::Fixed("aa".into()),
                    Segment::Pool { len: 4, size: 3 },
                ],
                ip_protocol: Some(253),
                port: None,
                tail: LengthRange::ZERO,
            },
            ClassSpec {
                label: "b".into(),
                support: 20,
                template: vec![Segment::Fixed("bbbb".into()), Segment::Random(2)],
                ip_protocol: Some(253),
                port: None,
                tail: LengthRange { min: 0, max: 4 },
            },
        ],
    };
    let d = spec.dataset(4).unwrap();
    let a: Vec<Vec<u8>> = d
        .packets
        .iter()
        .filter(|p: &&RawPacket| p.truth_label.as_deref() == Some("a"))
        .map(|p| strip_lower_layers(p, d.osi_target).unwrap())
        .collect();
    assert_eq!(a.len(), 80);
    let firsts: HashSet<&[u8]> = a.iter().map(|p| &p[..2]).collect();
    let pairs: HashSet<(&[u8], &[u8])> = a.iter().map(|p| (&p[..2], &p[3..7])).collect();
    assert!(firsts.len() <= 3);
    // both pools follow the same conversation index
    assert_eq!(pairs.len(), firsts.len());
    assert!(a.iter().all(|p| p[2] == 0xaa && p.len() == 7));
}

#[test]
fn benchmark_independent_of_thread_count() {
    let datasets = vec![small("icmp_types", 40, 6), small("dns_types", 40, 6)];
    let cfg = RunConfig {
        header_len: Some(8),
        topic_size: Some(3),
        kmeans_k: Some(3),
        ..quick()
    };
    let grid = |threads| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        let mut g = pool.install(|| run_benchmark(&datasets, &Strategy::ALL, &cfg)).unwrap();
        g.cells.iter_mut().for_each(|c| c.seconds = None);
        g
    };
    let one = grid(1);
    assert_eq!(one.cells.len(), 10);
    assert_eq!(one, grid(4));
}

#[test]
fn unusable_packets_are_excluded() {
    let mut d = small("icmp_types", 30, 7);
    // a frame cut inside the IPv4 header cannot be stripped
    let mut broken = d.packets[0].clone();
    broken.bytes.truncate(20);
    d.packets.push(broken);
    let r = run_pipeline(
        &d,
        Strategy::TF_UPGMA,
        &RunConfig {
            header_len: Some(8),
            ..quick()
        },
    )
    .unwrap();
    assert_eq!(r.stats.excluded, vec![30]);
    assert_eq!(r.packet_indices.len(), 30);
    assert!(r.scores.is_some());
}
