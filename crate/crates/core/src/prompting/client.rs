use std::time::Duration;

use base64::Engine;

use crate::error::{Error, Result};

use super::template::MetaPromptTemplate;

pub const DEFAULT_CREDENTIAL_ENV: &str = "UNFOLD_MLLM_API_KEY";

/// A generic chat-with-image endpoint. The request body is
/// `{"instruction": <template text>, "image_base64": <PNG bytes>}` and the
/// credential is sent as a bearer token.
#[derive(Clone, Debug, PartialEq)]
pub struct EndpointConfig {
    pub url: String,
    /// Environment variable holding the credential.
    pub credential_env: String,
    pub max_attempts: u32,
    /// Wait before the second attempt; doubles after each failure.
    pub initial_backoff: Duration,
    pub timeout: Duration,
}

impl EndpointConfig {
    pub fn new(url: impl Into<String>) -> Self {
        Self {
            url: url.into(),
            credential_env: DEFAULT_CREDENTIAL_ENV.into(),
            max_attempts: 3,
            initial_backoff: Duration::from_millis(500),
            timeout: Duration::from_secs(60),
        }
    }

    pub fn credential(&self) -> Result<String> {
        match std::env::var(&self.credential_env) {
            Ok(v) if !v.trim().is_empty() => Ok(v.trim().to_owned()),
            _ => Err(Error::Config(format!(
                "credential variable {} is not set",
                self.credential_env
            ))),
        }
    }
}

pub fn request_body(template: &MetaPromptTemplate, png: &[u8]) -> String {
    serde_json::json!({
        "instruction": template.render(),
        "image_base64": base64::engine::general_purpose::STANDARD.encode(png),
    })
    .to_string()
}

/// Posts the template and image; returns the response body verbatim.
pub fn request_meta_descriptions(config: &EndpointConfig, png: &[u8], template: &MetaPromptTemplate) -> Result<String> {
    let credential = config.credential()?;
    request_with_credential(config, &credential, png, template)
}

pub fn request_with_credential(
    config: &EndpointConfig,
    credential: &str,
    png: &[u8],
    template: &MetaPromptTemplate,
) -> Result<String> {
    if config.max_attempts == 0 {
        return Err(Error::Config("max_attempts must be at least 1".into()));
    }
    if config.url.trim().is_empty() {
        return Err(Error::Config("endpoint url is empty".into()));
    }
    let agent: ureq::Agent = ureq::Agent::config_builder()
        .timeout_global(Some(config.timeout))
        .http_status_as_error(false)
        .build()
        .into();
    let body = request_body(template, png);
    let auth = format!("Bearer {credential}");
    let mut backoff = config.initial_backoff;
    let mut last = String::new();
    for attempt in 1..=config.max_attempts {
        let sent = agent
            .post(&config.url)
            .header("Authorization", &auth)
            .header("Content-Type", "application/json")
            .send(body.as_bytes());
        match sent {
            Ok(mut resp) => {
                let status = resp.status().as_u16();
                match status {
                    200..=299 => {
                        return resp.body_mut().read_to_string().map_err(|e| Error::Network {
                            attempts: attempt,
                            last: e.to_string(),
                        })
                    }
                    401 | 403 => return Err(Error::Auth { status }),
                    429 | 500..=599 => last = format!("HTTP {status}"),
                    _ => {
                        return Err(Error::Network {
                            attempts: attempt,
                            last: format!("HTTP {status}"),
                        })
                    }
                }
            }
            Err(e) => last = e.to_string(),
        }
        log::warn!("meta prompt request attempt {attempt} failed: {last}");
        if attempt < config.max_attempts {
            std::thread::sleep(backoff);
            backoff *= 2;
        }
    }
    Err(Error::Network {
        attempts: config.max_attempts,
        last,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prompting::{example_response, parse_meta_response};
    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::{TcpListener, TcpStream};
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::sync::{Arc, Mutex};

    #[derive(Clone)]
    enum Reply {
        Status(u16, String),
        Hang,
    }

    struct Stub {
        url: String,
        hits: Arc<AtomicUsize>,
        bodies: Arc<Mutex<Vec<(String, String)>>>,
    }

    fn read_request(stream: &mut TcpStream) -> (String, String) {
        let mut reader = BufReader::new(stream.try_clone().unwrap());
        let mut auth = String::new();
        let mut len = 0usize;
        loop {
            let mut line = String::new();
            if reader.read_line(&mut line).unwrap_or(0) == 0 || line == "\r\n" {
                break;
            }
            let lower = line.to_ascii_lowercase();
            if let Some(v) = lower.strip_prefix("content-length:") {
                len = v.trim().parse().unwrap();
            }
            if lower.starts_with("authorization:") {
                auth = line["authorization:".len()..].trim().to_owned();
            }
        }
        let mut body = vec![0u8; len];
        reader.read_exact(&mut body).unwrap();
        (auth, String::from_utf8(body).unwrap())
    }

    fn stub(replies: Vec<Reply>) -> Stub {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}/describe", listener.local_addr().unwrap());
        let hits = Arc::new(AtomicUsize::new(0));
        let bodies = Arc::new(Mutex::new(Vec::new()));
        let (h, b) = (hits.clone(), bodies.clone());
        std::thread::spawn(move || {
            for mut stream in listener.incoming().flatten() {
                let n = h.fetch_add(1, Ordering::SeqCst);
                let reply = replies[n.min(replies.len() - 1)].clone();
                let b = b.clone();
                std::thread::spawn(move || {
                    let req = read_request(&mut stream);
                    b.lock().unwrap().push(req);
                    match reply {
                        Reply::Status(code, text) => {
                            let _ = write!(
                                stream,
                                "HTTP/1.1 {code} X\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{text}",
                                text.len()
                            );
                        }
                        Reply::Hang => std::thread::sleep(Duration::from_millis(600)),
                    }
                });
            }
        });
        Stub { url, hits, bodies }
    }

    fn config(url: &str) -> EndpointConfig {
        EndpointConfig {
            initial_backoff: Duration::from_millis(5),
            timeout: Duration::from_millis(300),
            ..EndpointConfig::new(url)
        }
    }

    #[test]
    fn stub_round_trip_parses_nine_descriptions() {
        let s = stub(vec![Reply::Status(200, example_response().to_owned())]);
        let png = [137u8, 80, 78, 71, 1, 2, 3];
        let text = request_with_credential(&config(&s.url), "k123", &png, &MetaPromptTemplate::default()).unwrap();
        assert_eq!(text, example_response());
        assert_eq!(parse_meta_response(&text, 3, 3).unwrap().descriptions.len(), 9);
        let (auth, body) = s.bodies.lock().unwrap()[0].clone();
        assert_eq!(auth, "Bearer k123");
        let v: serde_json::Value = serde_json::from_str(&body).unwrap();
        assert_eq!(v["instruction"], MetaPromptTemplate::default().render());
        assert_eq!(
            base64::engine::general_purpose::STANDARD
                .decode(v["image_base64"].as_str().unwrap())
                .unwrap(),
            png
        );
        assert_eq!(s.hits.load(Ordering::SeqCst), 1);
    }

    #[test]
    fn auth_failure_is_not_retried() {
        let s = stub(vec![Reply::Status(401, "no".into())]);
        let err = request_with_credential(&config(&s.url), "bad", b"x", &MetaPromptTemplate::default()).unwrap_err();
        assert!(matches!(err, Error::Auth { status: 401 }));
        std::thread::sleep(Duration::from_millis(50));
        assert_eq!(s.hits.load(Ordering::SeqCst), 1);
    }

    #[test]
    fn server_errors_retry_then_succeed() {
        let s = stub(vec![Reply::Status(503, "busy".into()), Reply::Status(200, "{}".into())]);
        let text = request_with_credential(&config(&s.url), "k", b"x", &MetaPromptTemplate::default()).unwrap();
        assert_eq!(text, "{}");
        assert_eq!(s.hits.load(Ordering::SeqCst), 2);
    }

    #[test]
    fn timeouts_stop_after_three_attempts() {
        let s = stub(vec![Reply::Hang]);
        match request_with_credential(&config(&s.url), "k", b"x", &MetaPromptTemplate::default()) {
            Err(Error::Network { attempts, .. }) => assert_eq!(attempts, 3),
            other => panic!("unexpected {other:?}"),
        }
        std::thread::sleep(Duration::from_millis(50));
        assert_eq!(s.hits.load(Ordering::SeqCst), 3);
    }

    #[test]
    fn persistent_server_error_reports_last_status() {
        let s = stub(vec![Reply::Status(500, "down".into())]);
        match request_with_credential(&config(&s.url), "k", b"x", &MetaPromptTemplate::default()) {
            Err(Error::Network { attempts, last }) => {
                assert_eq!(attempts, 3);
                assert!(last.contains("500"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn missing_credential_fails_before_network() {
        let cfg = EndpointConfig {
            credential_env: "UNFOLD_TEST_CREDENTIAL_THAT_IS_NEVER_SET".into(),
            ..config("http://127.0.0.1:9/unused")
        };
        assert!(matches!(
            request_meta_descriptions(&cfg, b"x", &MetaPromptTemplate::default()),
            Err(Error::Config(_))
        ));
    }
}
