use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread;

use segrefine_core::predictor::wire::serve_request;
use segrefine_core::predictor::BlobPredictor;
use segrefine_core::{Error, GrayImage, PredictorHandle};

/// What the test server does with the n-th request (0-based).
type Script = fn(usize, &str) -> (u16, String);

fn read_request(stream: &mut TcpStream) -> String {
    let mut reader = BufReader::new(stream);
    let mut len = 0;
    loop {
        let mut line = String::new();
        reader.read_line(&mut line).unwrap();
        if line == "\r\n" || line.is_empty() {
            break;
        }
        if let Some((k, v)) = line.split_once(':') {
            if k.eq_ignore_ascii_case("content-length") {
                len = v.trim().parse().unwrap();
            }
        }
    }
    let mut body = vec![0; len];
    reader.read_exact(&mut body).unwrap();
    String::from_utf8(body).unwrap()
}

fn serve(script: Script) -> (String, Arc<AtomicUsize>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}", listener.local_addr().unwrap());
    let hits = Arc::new(AtomicUsize::new(0));
    let counter = hits.clone();
    thread::spawn(move || {
        for stream in listener.incoming() {
            let Ok(mut stream) = stream else { break };
            let body = read_request(&mut stream);
            let n = counter.fetch_add(1, Ordering::SeqCst);
            let (status, reply) = script(n, &body);
            let head = format!(
                "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n",
                reply.len()
            );
            let _ = stream.write_all(head.as_bytes());
            let _ = stream.write_all(reply.as_bytes());
        }
    });
    (url, hits)
}

fn images() -> Vec<GrayImage> {
    (0..5)
        .map(|k| GrayImage::from_fn(10, 10, |x, y| if x + y < 4 * k { 1.0 } else { 0.2 }))
        .collect()
}

#[test]
fn http_matches_builtin() {
    let (url, hits) = serve(|_, body| (200, serve_request(body, &BlobPredictor)));
    let remote = PredictorHandle::from_spec(&format!("http:{url}")).unwrap().with_batch_limit(2).unwrap();
    let got = remote.predict_batch(&images()).unwrap();
    let local = PredictorHandle::builtin().predict_batch(&images()).unwrap();
    assert_eq!(got, local);
    assert_eq!(hits.load(Ordering::SeqCst), 3);
}

#[test]
fn server_error_is_retried() {
    let (url, hits) = serve(|n, body| {
        if n == 0 {
            (500, "oops".to_string())
        } else {
            (200, serve_request(body, &BlobPredictor))
        }
    });
    let remote = PredictorHandle::http(&url);
    assert_eq!(remote.predict_batch(&images()).unwrap().len(), 5);
    assert_eq!(hits.load(Ordering::SeqCst), 2);
}

#[test]
fn persistent_failure_is_unavailable() {
    let (url, hits) = serve(|_, _| (503, String::new()));
    let err = PredictorHandle::http(&url).predict_batch(&images()).unwrap_err();
    assert!(matches!(err, Error::PredictorUnavailable(_)), "{err}");
    assert_eq!(hits.load(Ordering::SeqCst), 3);
}

#[test]
fn closed_port_is_unavailable() {
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let err = PredictorHandle::http(&format!("http://127.0.0.1:{port}"))
        .predict_batch(&images())
        .unwrap_err();
    assert!(matches!(err, Error::PredictorUnavailable(_)), "{err}");
}

#[test]
fn wrong_id_is_a_violation_and_not_retried() {
    let (url, hits) = serve(|_, _| (200, r#"{"id": "nope", "probs": []}"#.to_string()));
    let err = PredictorHandle::http(&url).predict_batch(&images()).unwrap_err();
    assert!(matches!(err, Error::ProtocolViolation(_)), "{err}");
    assert_eq!(hits.load(Ordering::SeqCst), 1);
}
