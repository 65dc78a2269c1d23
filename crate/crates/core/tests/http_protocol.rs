//! Client side of the prediction protocol, against a local stub server and
//! the golden fixtures in `tests/fixtures/protocol`.

mod common;

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::{Arc, Mutex};
use std::thread;

use hiex_core::predictor::{Classifier, HttpClassifier, PredictRequest, Predictor, TokenSequence};
use hiex_core::Error;

type Handler = dyn Fn(&str, &str, &str) -> (u16, String) + Send + Sync;

struct Stub {
    url: String,
    requests: Arc<Mutex<Vec<(String, String, String)>>>,
}

fn read_request(stream: &mut TcpStream) -> Option<(String, String, String)> {
    let mut reader = BufReader::new(stream);
    let mut line = String::new();
    reader.read_line(&mut line).ok()?;
    let mut parts = line.split_whitespace();
    let method = parts.next()?.to_owned();
    let path = parts.next()?.to_owned();
    let mut length = 0;
    loop {
        let mut header = String::new();
        reader.read_line(&mut header).ok()?;
        let header = header.trim_end();
        if header.is_empty() {
            break;
        }
        if let Some((k, v)) = header.split_once(':') {
            if k.eq_ignore_ascii_case("content-length") {
                length = v.trim().parse().ok()?;
            }
        }
    }
    let mut body = vec![0; length];
    reader.read_exact(&mut body).ok()?;
    Some((method, path, String::from_utf8(body).ok()?))
}

fn serve(handler: impl Fn(&str, &str, &str) -> (u16, String) + Send + Sync + 'static) -> Stub {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}", listener.local_addr().unwrap());
    let requests = Arc::new(Mutex::new(Vec::new()));
    let log = requests.clone();
    let handler: Arc<Handler> = Arc::new(handler);
    thread::spawn(move || {
        for stream in listener.incoming() {
            let Ok(mut stream) = stream else { continue };
            let log = log.clone();
            let handler = handler.clone();
            thread::spawn(move || {
                let Some((method, path, body)) = read_request(&mut stream) else { return };
                let (status, reply) = handler(&method, &path, &body);
                log.lock().unwrap().push((method, path, body));
                let head = format!(
                    "HTTP/1.1 {status} X\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n",
                    reply.len()
                );
                let _ = stream.write_all(head.as_bytes());
                let _ = stream.write_all(reply.as_bytes());
            });
        }
    });
    Stub { url, requests }
}

fn golden(name: &str) -> String {
    std::fs::read_to_string(common::fixture(&format!("protocol/{name}")))
        .unwrap()
        .trim_end()
        .to_owned()
}

fn golden_sequences() -> Vec<TokenSequence> {
    vec![
        TokenSequence::from_text("a good film").unwrap(),
        TokenSequence::from_text("a [PAD] film").unwrap(),
        TokenSequence::pair(&["café", "au", "lait"], &["drink"]).unwrap(),
    ]
}

/// Serves `/health` and answers every `/predict` with `response`.
fn fixed(response: String) -> Stub {
    let health = golden("health.json");
    serve(move |_, path, _| match path {
        "/health" => (200, health.clone()),
        "/predict" => (200, response.clone()),
        _ => (404, "{}".into()),
    })
}

#[test]
fn request_matches_golden_bytes() {
    let request = PredictRequest::from_sequences(&golden_sequences());
    assert_eq!(serde_json::to_string(&request).unwrap(), golden("predict_request.json"));
}

#[test]
fn golden_exchange_round_trips_exactly() {
    let stub = fixed(golden("predict_response.json"));
    let client = HttpClassifier::connect(&stub.url).unwrap();
    assert_eq!(client.num_classes(), 2);
    let preds = client.predict_batch(&golden_sequences()).unwrap();

    let sent = stub.requests.lock().unwrap().clone();
    let (method, path, body) = sent.iter().find(|r| r.1 == "/predict").unwrap();
    assert_eq!((method.as_str(), path.as_str()), ("POST", "/predict"));
    assert_eq!(body, &golden("predict_request.json"));

    let expected: serde_json::Value = serde_json::from_str(&golden("predict_response.json")).unwrap();
    for (p, row) in preds.iter().zip(expected["probs"].as_array().unwrap()) {
        let row: Vec<f64> = row.as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect();
        assert_eq!(p.probs.iter().map(|x| x.to_bits()).collect::<Vec<_>>(), row.iter().map(|x| x.to_bits()).collect::<Vec<_>>());
    }
    assert_eq!(preds[0].predicted, 1);
    assert_eq!(preds[1].predicted, 0);
}

#[test]
fn malformed_responses_are_protocol_errors_with_payload() {
    for name in ["bad_row_count.json", "bad_width.json", "missing_field.json", "unnormalized.json"] {
        let body = golden(name);
        let stub = fixed(body.clone());
        let client = HttpClassifier::connect(&stub.url).unwrap();
        match client.predict_batch(&golden_sequences()) {
            Err(Error::Protocol { payload, .. }) => assert_eq!(payload, body, "{name}"),
            other => panic!("{name}: unexpected {other:?}"),
        }
    }
}

#[test]
fn non_success_status_is_a_protocol_error() {
    let health = golden("health.json");
    let stub = serve(move |_, path, _| match path {
        "/health" => (200, health.clone()),
        _ => (500, "{\"error\":\"model failed\"}".into()),
    });
    let client = HttpClassifier::connect(&stub.url).unwrap();
    match client.predict_batch(&golden_sequences()) {
        Err(Error::Protocol { payload, .. }) => assert!(payload.contains("model failed")),
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn bad_health_is_rejected() {
    let stub = serve(|_, _, _| (200, "{\"status\":\"loading\",\"num_classes\":2}".into()));
    assert!(matches!(HttpClassifier::connect(&stub.url), Err(Error::Protocol { .. })));
    let stub = serve(|_, _, _| (200, "{\"status\":\"ok\",\"num_classes\":1}".into()));
    assert!(matches!(HttpClassifier::connect(&stub.url), Err(Error::Protocol { .. })));
}

#[test]
fn unreachable_model_is_a_transport_error() {
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    match HttpClassifier::connect(&format!("http://127.0.0.1:{port}")) {
        Err(Error::Transport { url, .. }) => assert!(url.contains(&port.to_string())),
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn batches_are_split_and_rows_stay_in_order() {
    let health = golden("health.json");
    // Echo a row per instance whose probability encodes the token count.
    let stub = serve(move |_, path, body| match path {
        "/health" => (200, health.clone()),
        _ => {
            let req: PredictRequest = serde_json::from_str(body).unwrap();
            let rows: Vec<Vec<f64>> = req
                .instances
                .iter()
                .map(|i| {
                    let p = i.tokens.len() as f64 / 100.0;
                    vec![1.0 - p, p]
                })
                .collect();
            (200, serde_json::json!({ "probs": rows }).to_string())
        }
    });
    let client = HttpClassifier::connect(&stub.url).unwrap().with_batch_size(3);
    let seqs: Vec<TokenSequence> = (1..=8)
        .map(|n| TokenSequence::from_tokens(&vec!["w"; n]).unwrap())
        .collect();
    let preds = client.predict_batch(&seqs).unwrap();
    for (n, p) in (1..=8).zip(&preds) {
        assert_eq!(p.probs[1], n as f64 / 100.0);
    }
    let posts = stub.requests.lock().unwrap().iter().filter(|r| r.1 == "/predict").count();
    assert_eq!(posts, 3);

    // Through a cached predictor: identical answers, one evaluation per
    // distinct sequence.
    let predictor = Predictor::new(Arc::new(client)).with_batch_size(4);
    let again = predictor.predict_many(&[seqs.clone(), seqs.clone()].concat()).unwrap();
    assert_eq!(&again[..8], &preds[..]);
    assert_eq!(&again[8..], &preds[..]);
    assert_eq!(predictor.stats().forward_passes, 8);
}
