use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::thread::JoinHandle;
use std::time::Duration;

use gridsynth_agents::client::{ClientError, LlmClient, RemoteClient, RemoteConfig, API_KEY_VAR};

struct Captured {
    request_line: String,
    headers: Vec<(String, String)>,
    body: String,
}

/// Serves the given (status, body) replies to consecutive connections.
fn serve(replies: Vec<(u16, String)>) -> (String, JoinHandle<Vec<Captured>>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let handle = std::thread::spawn(move || {
        let mut seen = Vec::new();
        for (status, reply) in replies {
            let (mut stream, _) = listener.accept().unwrap();
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut request_line = String::new();
            reader.read_line(&mut request_line).unwrap();
            let mut headers = Vec::new();
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                let line = line.trim_end();
                if line.is_empty() {
                    break;
                }
                let (k, v) = line.split_once(':').unwrap();
                headers.push((k.trim().to_ascii_lowercase(), v.trim().to_string()));
            }
            let len: usize = headers.iter().find(|(k, _)| k == "content-length").map(|(_, v)| v.parse().unwrap()).unwrap_or(0);
            let mut body = vec![0u8; len];
            reader.read_exact(&mut body).unwrap();
            let response = format!(
                "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{reply}",
                reply.len()
            );
            stream.write_all(response.as_bytes()).unwrap();
            seen.push(Captured {
                request_line: request_line.trim_end().to_string(),
                headers,
                body: String::from_utf8(body).unwrap(),
            });
        }
        seen
    });
    (format!("http://{addr}/v1"), handle)
}

fn config(base_url: String, max_retries: u32) -> RemoteConfig {
    RemoteConfig {
        base_url,
        model: "test-model".to_string(),
        api_key: "test-key".to_string(),
        max_retries,
        retry_backoff: Duration::ZERO,
        timeout: Duration::from_secs(10),
        log_raw: true,
    }
}

fn completion(content: &str) -> String {
    serde_json::json!({"choices": [{"index": 0, "message": {"role": "assistant", "content": content}}]}).to_string()
}

#[test]
fn request_shape_and_reply_parsing() {
    let (url, server) = serve(vec![(200, completion("True"))]);
    let mut client = RemoteClient::new(config(url, 0));
    let reply = client.complete("check this", 0.0, Some(7)).unwrap();
    assert_eq!(reply, "True");
    let seen = server.join().unwrap();
    assert_eq!(seen.len(), 1);
    assert_eq!(seen[0].request_line, "POST /v1/chat/completions HTTP/1.1");
    let header = |name: &str| seen[0].headers.iter().find(|(k, _)| k == name).map(|(_, v)| v.clone());
    assert_eq!(header("authorization").as_deref(), Some("Bearer test-key"));
    assert_eq!(header("content-type").as_deref(), Some("application/json"));
    let body: serde_json::Value = serde_json::from_str(&seen[0].body).unwrap();
    assert_eq!(
        body,
        serde_json::json!({
            "model": "test-model",
            "messages": [{"role": "user", "content": "check this"}],
            "temperature": 0.0,
            "seed": 7
        })
    );
    let raw = client.take_raw_log();
    assert_eq!(raw.len(), 1);
    assert_eq!(raw[0].request, seen[0].body);
    assert!(client.take_raw_log().is_empty());
}

#[test]
fn server_errors_are_retried_up_to_the_limit() {
    let (url, server) = serve(vec![(503, "busy".to_string()), (200, completion("ok"))]);
    let mut client = RemoteClient::new(config(url, 1));
    assert_eq!(client.complete("p", 0.0, None).unwrap(), "ok");
    let seen = server.join().unwrap();
    assert_eq!(seen.len(), 2);
    assert!(!seen[1].body.contains("seed"));

    let (url, server) = serve(vec![(503, "busy".to_string()), (503, "still busy".to_string())]);
    let mut client = RemoteClient::new(config(url, 1));
    let err = client.complete("p", 0.0, None).unwrap_err();
    assert_eq!(
        err,
        ClientError::Status {
            status: 503,
            attempts: 2,
            body: "still busy".to_string()
        }
    );
    assert_eq!(server.join().unwrap().len(), 2);
}

#[test]
fn client_errors_are_not_retried() {
    let (url, server) = serve(vec![(401, "bad key".to_string())]);
    let mut client = RemoteClient::new(config(url, 5));
    let err = client.complete("p", 0.0, None).unwrap_err();
    assert!(matches!(err, ClientError::Status { status: 401, attempts: 1, .. }));
    assert_eq!(server.join().unwrap().len(), 1);
}

#[test]
fn malformed_reply_is_reported() {
    let (url, server) = serve(vec![(200, "{\"choices\": []}".to_string())]);
    let mut client = RemoteClient::new(config(url, 0));
    assert!(matches!(client.complete("p", 0.0, None), Err(ClientError::BadResponse(_))));
    server.join().unwrap();
}

#[test]
fn unreachable_endpoint_is_a_transport_error() {
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let mut client = RemoteClient::new(config(format!("http://127.0.0.1:{port}"), 0));
    assert!(matches!(client.complete("p", 0.0, None), Err(ClientError::Transport { attempts: 1, .. })));
}

#[test]
fn key_comes_from_the_environment() {
    std::env::remove_var(API_KEY_VAR);
    assert_eq!(
        RemoteConfig::from_env("http://x", "m").unwrap_err(),
        ClientError::MissingApiKey(API_KEY_VAR.to_string())
    );
    std::env::set_var(API_KEY_VAR, "k");
    let cfg = RemoteConfig::from_env("http://x", "m").unwrap();
    assert_eq!(cfg.api_key, "k");
    assert!(!cfg.log_raw);
    std::env::remove_var(API_KEY_VAR);
}
