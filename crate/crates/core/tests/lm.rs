mod common;

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread;
use std::time::Duration;

use knm_core::harness::{generate_shift_suite, ShiftSuiteConfig};
use knm_core::lm::{LanguageModel, NgramConfig, NgramLm, RemoteConfig, RemoteLm, MASS_TOLERANCE};
use knm_core::{Error, TokenId, Vocabulary};
use proptest::prelude::*;

use common::{ids, OracleNgram};

fn cfg(order: usize, k: f64) -> NgramConfig {
    NgramConfig {
        order,
        smoothing_k: k,
        ..NgramConfig::default()
    }
}

#[test]
fn held_out_perplexity_matches_oracle() {
    let suite = generate_shift_suite(&ShiftSuiteConfig {
        general_files: 20,
        db_files: 5,
        test_files: 5,
        ..ShiftSuiteConfig::default()
    });
    let vocab = Vocabulary::build(suite.general.iter().chain(&suite.test).map(|r| r.text.as_str())).unwrap();
    let train: Vec<_> = suite.general.iter().map(|r| vocab.tokenize(&r.text)).collect();
    let held_out: Vec<_> = suite.test.iter().map(|r| vocab.tokenize(&r.text)).collect();

    for order in 1..=3 {
        let lm = NgramLm::train(&train, vocab.len(), cfg(order, 0.01)).unwrap();
        let oracle = OracleNgram::train(&train, order, 0.01, vocab.len());
        let mut nll = 0.0;
        let mut n = 0;
        for seq in &held_out {
            for t in 0..seq.len() {
                let p = oracle.prob(&seq[..t], seq[t]);
                assert!((lm.prob(&seq[..t], seq[t]) - p).abs() < 1e-12);
                nll -= p.ln();
                n += 1;
            }
        }
        let expected = (nll / n as f64).exp();
        let got = lm.perplexity(&held_out);
        assert!((got - expected).abs() < 1e-6, "order {order}: {got} vs {expected}");
    }
}

#[test]
fn spec_examples() {
    // a=2, b=3
    let lm = NgramLm::train(&[ids(&[2, 3, 2, 3])], 4, cfg(2, 0.01)).unwrap();
    assert_eq!(lm.predict(&ids(&[2])).unwrap().argmax(), TokenId(3));

    let empty = NgramLm::train(&[vec![]], 5, cfg(3, 1.0)).unwrap();
    let p = empty.predict(&ids(&[2, 3])).unwrap();
    assert!(p.probs().iter().all(|&x| x == 0.2));

    let add_one = NgramLm::train(&[ids(&[2, 3])], 4, cfg(2, 1.0)).unwrap();
    assert_eq!(add_one.prob(&ids(&[2]), TokenId(3)), 0.4);

    assert!(matches!(NgramLm::train(&[], 4, cfg(2, 1.0)), Err(Error::EmptyCorpus)));
}

#[test]
fn embeddings_use_the_last_eight_tokens() {
    let lm = NgramLm::train(&[ids(&[2, 3, 4])], 30, NgramConfig::default()).unwrap();
    let base: Vec<TokenId> = (0..25).map(|i| TokenId(2 + i % 7)).collect();
    let mut changed = base.clone();
    changed[base.len() - 20] = TokenId(29);
    let a = lm.embed(&base).unwrap();
    assert_eq!(a, lm.embed(&base).unwrap());
    assert_eq!(a, lm.embed(&changed).unwrap());
    let mut near = base.clone();
    near[base.len() - 3] = TokenId(29);
    assert_ne!(a, lm.embed(&near).unwrap());
    let norm: f64 = a.as_slice().iter().map(|&x| (x as f64) * (x as f64)).sum();
    assert!((norm - 1.0).abs() < 1e-6);
    assert!(lm.embed(&[]).unwrap().as_slice().iter().all(|&x| x == 0.0));
}

#[test]
fn saved_model_predicts_identically() {
    let (vocab, seqs) = common::toy_corpus();
    let lm = NgramLm::train(
        &seqs,
        vocab.len(),
        NgramConfig {
            seed: 11,
            ..NgramConfig::default()
        },
    )
    .unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("lm.bin");
    lm.save(&path).unwrap();
    assert_eq!(&std::fs::read(&path).unwrap()[..6], b"KNMLM1");
    let back = NgramLm::load(&path).unwrap();
    for seq in &seqs {
        for t in 0..seq.len() {
            assert_eq!(lm.predict(&seq[..t]).unwrap(), back.predict(&seq[..t]).unwrap());
            assert_eq!(lm.embed(&seq[..t]).unwrap(), back.embed(&seq[..t]).unwrap());
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn predictions_are_distributions(
        corpus in prop::collection::vec(prop::collection::vec(0u32..12, 0..30), 1..6),
        order in 1usize..=3,
        k in 0.001f64..2.0,
        context in prop::collection::vec(0u32..12, 0..10),
    ) {
        let corpus: Vec<_> = corpus.iter().map(|s| ids(s)).collect();
        let lm = NgramLm::train(&corpus, 12, cfg(order, k)).unwrap();
        let p = lm.predict(&ids(&context)).unwrap();
        prop_assert_eq!(p.len(), 12);
        prop_assert!((p.mass() - 1.0).abs() <= MASS_TOLERANCE);
        prop_assert!(p.probs().iter().all(|&x| x >= 0.0));
    }
}

/// Minimal HTTP/1.1 server answering each request with `respond(path, body)`.
struct Stub {
    url: String,
    peak: Arc<AtomicUsize>,
    requests: Arc<AtomicUsize>,
}

fn serve(delay: Duration, respond: fn(&str, &serde_json::Value) -> (u16, String)) -> Stub {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}", listener.local_addr().unwrap());
    let active = Arc::new(AtomicUsize::new(0));
    let peak = Arc::new(AtomicUsize::new(0));
    let requests = Arc::new(AtomicUsize::new(0));
    let (a, p, r) = (active.clone(), peak.clone(), requests.clone());
    thread::spawn(move || {
        for stream in listener.incoming() {
            let Ok(stream) = stream else { break };
            let (a, p, r) = (a.clone(), p.clone(), r.clone());
            thread::spawn(move || {
                let now = a.fetch_add(1, Ordering::SeqCst) + 1;
                p.fetch_max(now, Ordering::SeqCst);
                r.fetch_add(1, Ordering::SeqCst);
                handle(stream, delay, respond);
                a.fetch_sub(1, Ordering::SeqCst);
            });
        }
    });
    Stub { url, peak, requests }
}

fn handle(mut stream: TcpStream, delay: Duration, respond: fn(&str, &serde_json::Value) -> (u16, String)) {
    let mut reader = BufReader::new(stream.try_clone().unwrap());
    let mut request_line = String::new();
    reader.read_line(&mut request_line).unwrap();
    let path = request_line.split_whitespace().nth(1).unwrap_or("/").to_owned();
    let mut length = 0;
    loop {
        let mut line = String::new();
        reader.read_line(&mut line).unwrap();
        if line == "\r\n" || line.is_empty() {
            break;
        }
        if let Some((k, v)) = line.split_once(':') {
            if k.eq_ignore_ascii_case("content-length") {
                length = v.trim().parse().unwrap();
            }
        }
    }
    let mut body = vec![0; length];
    reader.read_exact(&mut body).unwrap();
    let json: serde_json::Value = serde_json::from_slice(&body).unwrap_or(serde_json::Value::Null);
    thread::sleep(delay);
    let (status, text) = respond(&path, &json);
    let reply = format!(
        "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{text}",
        text.len()
    );
    let _ = stream.write_all(reply.as_bytes());
}

const LOGITS: [f64; 4] = [1.0, 2.0, 0.5, -3.0];

fn fixed_logits(path: &str, body: &serde_json::Value) -> (u16, String) {
    assert!(body["tokens"].is_array());
    match path {
        "/v1/next_token" => (200, serde_json::json!({ "logits": LOGITS }).to_string()),
        "/v1/embed" => (200, r#"{"vec":[0.5,-0.5,0.25]}"#.into()),
        _ => (404, "{}".into()),
    }
}

#[test]
fn remote_logits_are_softmaxed() {
    let stub = serve(Duration::ZERO, fixed_logits);
    let lm = RemoteLm::new(RemoteConfig::new(&stub.url, 4, 3)).unwrap();
    let p = lm.predict(&ids(&[2, 3])).unwrap();
    let z: f64 = LOGITS.iter().map(|l| l.exp()).sum();
    for (got, l) in p.probs().iter().zip(LOGITS) {
        assert!((got - l.exp() / z).abs() < 1e-6);
    }
    assert_eq!(lm.embed(&[]).unwrap().as_slice(), [0.5, -0.5, 0.25]);

    let wrong_v = RemoteLm::new(RemoteConfig::new(&stub.url, 5, 3)).unwrap();
    assert!(matches!(
        wrong_v.predict(&[]),
        Err(Error::VocabMismatch { expected: 5, found: 4 })
    ));
    let wrong_d = RemoteLm::new(RemoteConfig::new(&stub.url, 4, 8)).unwrap();
    assert!(matches!(
        wrong_d.embed(&[]),
        Err(Error::DimensionMismatch { expected: 8, found: 3 })
    ));
}

#[test]
fn remote_probs_and_protocol_errors() {
    fn probs(path: &str, body: &serde_json::Value) -> (u16, String) {
        match (path, body["tokens"].as_array().map(Vec::len)) {
            (_, Some(0)) => (200, r#"{"probs":[0.25,0.25,0.5]}"#.into()),
            (_, Some(1)) => (200, "not json".into()),
            (_, Some(2)) => (200, r#"{"probs":[0.5,-0.5,1.0]}"#.into()),
            (_, Some(3)) => (200, r#"{"other":1}"#.into()),
            _ => (500, "{}".into()),
        }
    }
    let stub = serve(Duration::ZERO, probs);
    let lm = RemoteLm::new(RemoteConfig::new(&stub.url, 3, 2)).unwrap();
    assert_eq!(lm.predict(&[]).unwrap().probs(), [0.25, 0.25, 0.5]);
    for len in 1..=3 {
        let err = lm.predict(&vec![TokenId(2); len]).unwrap_err();
        assert!(matches!(err, Error::Protocol(_)), "{len}: {err}");
        assert_eq!(err.exit_code(), 3);
    }
    let err = lm.predict(&[TokenId(2); 4]).unwrap_err();
    assert!(matches!(err, Error::BackendUnavailable(_)), "{err}");
}

#[test]
fn unreachable_backend_is_reported() {
    let port = {
        let l = TcpListener::bind("127.0.0.1:0").unwrap();
        l.local_addr().unwrap().port()
    };
    let lm = RemoteLm::new(RemoteConfig::new(format!("http://127.0.0.1:{port}"), 4, 3)).unwrap();
    let err = lm.predict(&[]).unwrap_err();
    assert!(matches!(err, Error::BackendUnavailable(_)), "{err}");
    assert_eq!(err.exit_code(), 3);
}

#[test]
fn slow_backend_times_out() {
    let stub = serve(Duration::from_millis(500), fixed_logits);
    let mut config = RemoteConfig::new(&stub.url, 4, 3);
    config.timeout = Duration::from_millis(100);
    let lm = RemoteLm::new(config).unwrap();
    assert!(matches!(lm.predict(&[]), Err(Error::BackendUnavailable(_))));
}

#[test]
fn in_flight_requests_are_bounded() {
    let stub = serve(Duration::from_millis(40), fixed_logits);
    let mut config = RemoteConfig::new(&stub.url, 4, 3);
    config.max_in_flight = 2;
    let lm = Arc::new(RemoteLm::new(config).unwrap());
    let workers: Vec<_> = (0..8)
        .map(|i| {
            let lm = lm.clone();
            thread::spawn(move || lm.predict(&ids(&[i])).unwrap())
        })
        .collect();
    for w in workers {
        w.join().unwrap();
    }
    assert_eq!(stub.requests.load(Ordering::SeqCst), 8);
    let peak = stub.peak.load(Ordering::SeqCst);
    assert!((1..=2).contains(&peak), "peak concurrency {peak}");
}
