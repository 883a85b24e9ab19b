//! HTTP backend behind the gateway, against a scripted local server.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::{Arc, Mutex};

use soda::gateway::{
    BackendError, DecodingParams, Gateway, GatewayError, HttpBackend, HttpBackendConfig, RetryPolicy,
};
use soda::prompts::Prompt;

struct Seen {
    path: String,
    authorization: Option<String>,
    body: serde_json::Value,
}

/// Serves one scripted `(status, body)` reply per request, in order.
fn scripted_server(replies: Vec<(u16, String)>) -> (String, Arc<Mutex<Vec<Seen>>>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/v1", listener.local_addr().unwrap());
    let seen = Arc::new(Mutex::new(Vec::new()));
    let log = seen.clone();
    std::thread::spawn(move || {
        let mut replies = replies.into_iter();
        for stream in listener.incoming().flatten() {
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut out = stream;
            loop {
                let mut request_line = String::new();
                if reader.read_line(&mut request_line).unwrap_or(0) == 0 {
                    break;
                }
                let (mut length, mut authorization) = (0usize, None);
                loop {
                    let mut h = String::new();
                    reader.read_line(&mut h).unwrap();
                    let h = h.trim_end().to_string();
                    if h.is_empty() {
                        break;
                    }
                    let (k, v) = h.split_once(':').unwrap();
                    match k.to_ascii_lowercase().as_str() {
                        "content-length" => length = v.trim().parse().unwrap(),
                        "authorization" => authorization = Some(v.trim().to_string()),
                        _ => {}
                    }
                }
                let mut body = vec![0u8; length];
                reader.read_exact(&mut body).unwrap();
                log.lock().unwrap().push(Seen {
                    path: request_line.split_whitespace().nth(1).unwrap_or("").to_string(),
                    authorization,
                    body: serde_json::from_slice(&body).unwrap_or(serde_json::Value::Null),
                });
                let (status, payload) = replies.next().unwrap_or((500, "script exhausted".into()));
                write!(
                    out,
                    "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\n\r\n{payload}",
                    payload.len()
                )
                .unwrap();
                out.flush().unwrap();
            }
        }
    });
    (url, seen)
}

fn chat_body(text: &str) -> String {
    serde_json::json!({"choices": [{"message": {"role": "assistant", "content": text}}]}).to_string()
}

fn gateway(url: &str, key_env: Option<&str>) -> Gateway {
    let backend = HttpBackend::new(HttpBackendConfig {
        name: "remote".into(),
        base_url: url.into(),
        model: "m-1".into(),
        api_key_env: key_env.map(String::from),
        max_concurrency: 2,
        supports_logprobs: false,
        context_window: None,
        request_timeout_s: 10,
    })
    .unwrap();
    let mut g = Gateway::new(RetryPolicy::immediate(3));
    g.register("remote", Arc::new(backend), 2);
    g
}

#[test]
fn transient_errors_are_retried_and_requests_are_well_formed() {
    let (url, seen) = scripted_server(vec![
        (503, "overloaded".into()),
        (429, "slow down".into()),
        (200, chat_body("print(1)")),
    ]);
    std::env::set_var("SODA_HTTP_TEST_KEY", "sk-test");
    let g = gateway(&url, Some("SODA_HTTP_TEST_KEY"));
    let out = g
        .complete("remote", &Prompt::new("be brief", "say hi"), &DecodingParams::greedy())
        .unwrap();
    assert_eq!(out.len(), 1);
    assert_eq!(out[0].text, "print(1)");
    assert_eq!(g.stats("remote").unwrap().retries(), 2);

    let seen = seen.lock().unwrap();
    assert_eq!(seen.len(), 3);
    let last = &seen[2];
    assert_eq!(last.path, "/v1/chat/completions");
    assert_eq!(last.authorization.as_deref(), Some("Bearer sk-test"));
    assert_eq!(last.body["model"], "m-1");
    assert_eq!(last.body["temperature"], 0.0);
    assert_eq!(last.body["messages"][0]["role"], "system");
    assert_eq!(last.body["messages"][1]["content"], "say hi");
}

#[test]
fn fatal_errors_are_not_retried() {
    let (url, seen) = scripted_server(vec![(400, "{\"error\":\"maximum context length exceeded\"}".into())]);
    let g = gateway(&url, None);
    let e = g
        .complete("remote", &Prompt::new("", "long prompt"), &DecodingParams::greedy())
        .unwrap_err();
    assert!(matches!(e, GatewayError::ContextRejected { .. }), "{e:?}");
    assert_eq!(seen.lock().unwrap().len(), 1);
}

#[test]
fn persistent_transient_failure_exhausts_attempts() {
    let (url, seen) = scripted_server(vec![(500, "a".into()), (502, "b".into()), (503, "c".into())]);
    let g = gateway(&url, None);
    let e = g
        .complete("remote", &Prompt::new("", "hello"), &DecodingParams::greedy())
        .unwrap_err();
    assert!(e.is_transport(), "{e:?}");
    assert_eq!(seen.lock().unwrap().len(), 3);
}

#[test]
fn missing_api_key_variable_is_a_construction_error() {
    let r = HttpBackend::new(HttpBackendConfig {
        name: "remote".into(),
        base_url: "http://127.0.0.1:9".into(),
        model: "m".into(),
        api_key_env: Some("SODA_HTTP_TEST_UNSET_VARIABLE".into()),
        max_concurrency: 1,
        supports_logprobs: false,
        context_window: None,
        request_timeout_s: 1,
    });
    assert!(matches!(r, Err(BackendError::Fatal(_))));
}
