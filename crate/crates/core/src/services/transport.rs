use super::wire::{parse_response, to_canonical, ServiceKind, StdioEnvelope, WireMessage};
use super::ServiceError;
use serde::{Deserialize, Serialize};
use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};
use std::sync::Mutex;
use std::time::Duration;

/// Where a service lives: an HTTP base URL (requests go to
/// `<base>/<route>`), or a long-running subprocess speaking line-delimited
/// JSON on stdin/stdout.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Endpoint {
    Http { base_url: String },
    Stdio { program: String, args: Vec<String> },
}

impl Endpoint {
    /// Accepts `http://…`, `https://…` or `stdio:<program> [args…]`.
    pub fn parse(spec: &str) -> Result<Self, ServiceError> {
        let spec = spec.trim();
        if spec.starts_with("http://") || spec.starts_with("https://") {
            return Ok(Endpoint::Http {
                base_url: spec.trim_end_matches('/').to_string(),
            });
        }
        if let Some(cmd) = spec.strip_prefix("stdio:") {
            let mut parts = cmd.split_whitespace().map(str::to_string);
            let program = parts
                .next()
                .ok_or_else(|| ServiceError::BadEndpoint(spec.to_string()))?;
            return Ok(Endpoint::Stdio {
                program,
                args: parts.collect(),
            });
        }
        Err(ServiceError::BadEndpoint(spec.to_string()))
    }

    pub fn describe(&self, kind: ServiceKind) -> String {
        match self {
            Endpoint::Http { base_url } => format!("{base_url}/{}", kind.route()),
            Endpoint::Stdio { program, .. } => format!("stdio:{program} ({})", kind.route()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetryPolicy {
    /// Extra attempts after the first transport failure.
    pub max_retries: u32,
    pub base_delay_ms: u64,
    pub max_delay_ms: u64,
    pub timeout_s: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_retries: 3,
            base_delay_ms: 250,
            max_delay_ms: 8000,
            timeout_s: 600,
        }
    }
}

impl RetryPolicy {
    pub fn delay(&self, retry: u32) -> Duration {
        let ms = self
            .base_delay_ms
            .saturating_mul(1u64 << retry.min(30))
            .min(self.max_delay_ms);
        Duration::from_millis(ms)
    }
}

struct StdioProcess {
    child: Child,
    stdin: ChildStdin,
    stdout: BufReader<ChildStdout>,
}

impl Drop for StdioProcess {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

/// Outcome of one exchange; only `Retry` is attempted again.
enum Failure {
    Retry(String),
    Fatal(ServiceError),
}

pub struct RemoteService {
    endpoint: Endpoint,
    retry: RetryPolicy,
    agent: ureq::Agent,
    process: Mutex<Option<StdioProcess>>,
}

impl RemoteService {
    pub fn new(endpoint: Endpoint, retry: RetryPolicy) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(retry.timeout_s)))
            .http_status_as_error(false)
            .build()
            .into();
        Self {
            endpoint,
            retry,
            agent,
            process: Mutex::new(None),
        }
    }

    pub fn endpoint(&self) -> &Endpoint {
        &self.endpoint
    }

    pub fn call<Req: WireMessage, Resp: WireMessage>(
        &self,
        kind: ServiceKind,
        request: &Req,
    ) -> Result<Resp, ServiceError> {
        let label = self.endpoint.describe(kind);
        let mut attempts = 0;
        loop {
            attempts += 1;
            let outcome = match &self.endpoint {
                Endpoint::Http { base_url } => self.http_once(base_url, kind, request, &label),
                Endpoint::Stdio { program, args } => {
                    self.stdio_once(program, args, kind, request, &label)
                }
            };
            match outcome {
                Ok(resp) => return Ok(resp),
                Err(Failure::Fatal(e)) => return Err(e),
                Err(Failure::Retry(reason)) => {
                    if attempts > self.retry.max_retries {
                        return Err(ServiceError::Transport {
                            endpoint: label,
                            attempts,
                            reason,
                        });
                    }
                    log::warn!("{label}: {reason}; retrying");
                    std::thread::sleep(self.retry.delay(attempts - 1));
                }
            }
        }
    }

    fn http_once<Req: WireMessage, Resp: WireMessage>(
        &self,
        base_url: &str,
        kind: ServiceKind,
        request: &Req,
        label: &str,
    ) -> Result<Resp, Failure> {
        let url = format!("{base_url}/{}", kind.route());
        let mut resp = self
            .agent
            .post(&url)
            .header("content-type", "application/json")
            .send(to_canonical(request))
            .map_err(|e| Failure::Retry(e.to_string()))?;
        let status = resp.status().as_u16();
        let body = resp
            .body_mut()
            .with_config()
            .limit(256 * 1024 * 1024)
            .read_to_string()
            .map_err(|e| Failure::Retry(e.to_string()))?;
        if status >= 500 && !body.contains("\"error\"") {
            return Err(Failure::Retry(format!("HTTP {status}")));
        }
        parse_response(label, &body).map_err(Failure::Fatal)
    }

    fn stdio_once<Req: WireMessage, Resp: WireMessage>(
        &self,
        program: &str,
        args: &[String],
        kind: ServiceKind,
        request: &Req,
        label: &str,
    ) -> Result<Resp, Failure> {
        let mut guard = self.process.lock().unwrap_or_else(|p| p.into_inner());
        if guard.is_none() {
            let mut child = Command::new(program)
                .args(args)
                .stdin(Stdio::piped())
                .stdout(Stdio::piped())
                .stderr(Stdio::inherit())
                .spawn()
                .map_err(|e| Failure::Retry(format!("spawn failed: {e}")))?;
            let stdin = child.stdin.take().expect("piped stdin");
            let stdout = BufReader::new(child.stdout.take().expect("piped stdout"));
            *guard = Some(StdioProcess {
                child,
                stdin,
                stdout,
            });
        }
        let proc = guard.as_mut().expect("process present");
        let envelope = StdioEnvelope {
            service: kind,
            request: serde_json::to_value(request).expect("wire types serialize"),
        };
        let mut line = to_canonical(&envelope);
        line.push('\n');
        let exchange = (|| -> std::io::Result<String> {
            proc.stdin.write_all(line.as_bytes())?;
            proc.stdin.flush()?;
            let mut reply = String::new();
            if proc.stdout.read_line(&mut reply)? == 0 {
                return Err(std::io::Error::new(
                    std::io::ErrorKind::UnexpectedEof,
                    "backend closed stdout",
                ));
            }
            Ok(reply)
        })();
        match exchange {
            Ok(reply) => parse_response(label, reply.trim_end()).map_err(Failure::Fatal),
            Err(e) => {
                // Restart the backend on the next attempt.
                *guard = None;
                Err(Failure::Retry(e.to_string()))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::services::wire::*;

    fn quick() -> RetryPolicy {
        RetryPolicy {
            max_retries: 2,
            base_delay_ms: 1,
            max_delay_ms: 4,
            timeout_s: 5,
        }
    }

    #[test]
    fn parse_endpoints() {
        assert_eq!(
            Endpoint::parse("http://localhost:8000/").unwrap(),
            Endpoint::Http {
                base_url: "http://localhost:8000".into()
            }
        );
        assert_eq!(
            Endpoint::parse("stdio:python3 -m adapter").unwrap(),
            Endpoint::Stdio {
                program: "python3".into(),
                args: vec!["-m".into(), "adapter".into()]
            }
        );
        assert!(Endpoint::parse("ftp://x").is_err());
        assert!(Endpoint::parse("stdio:").is_err());
    }

    #[test]
    fn backoff_doubles_and_caps() {
        let p = RetryPolicy {
            base_delay_ms: 100,
            max_delay_ms: 500,
            ..RetryPolicy::default()
        };
        let d: Vec<u64> = (0..5).map(|i| p.delay(i).as_millis() as u64).collect();
        assert_eq!(d, vec![100, 200, 400, 500, 500]);
    }

    #[test]
    fn unreachable_endpoint_names_endpoint() {
        // Bind then drop to get a port nobody listens on.
        let port = std::net::TcpListener::bind("127.0.0.1:0")
            .unwrap()
            .local_addr()
            .unwrap()
            .port();
        let svc = RemoteService::new(
            Endpoint::parse(&format!("http://127.0.0.1:{port}")).unwrap(),
            quick(),
        );
        let req = VqaRequest {
            protocol_version: PROTOCOL_VERSION,
            image_path: "x.png".into(),
            questions: vec![],
            hints: Hints::default(),
        };
        match svc.call::<_, VqaResponse>(ServiceKind::Vqa, &req) {
            Err(ServiceError::Transport {
                endpoint, attempts, ..
            }) => {
                assert!(endpoint.contains(&port.to_string()));
                assert!(endpoint.ends_with("/vqa"));
                assert_eq!(attempts, 3);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn stdio_backend_round_trip() {
        let script = r#"
import json, sys
for line in sys.stdin:
    env = json.loads(line)
    req = env["request"]
    out = {"protocol_version": 1, "answers": ["yes"] * len(req["questions"])}
    print(json.dumps(out), flush=True)
"#;
        let svc = RemoteService::new(
            Endpoint::Stdio {
                program: "python3".into(),
                args: vec!["-c".into(), script.into()],
            },
            quick(),
        );
        for n in 0..3 {
            let req = VqaRequest {
                protocol_version: PROTOCOL_VERSION,
                image_path: "x.png".into(),
                questions: vec!["q?".into(); n],
                hints: Hints::default(),
            };
            let resp: VqaResponse = svc.call(ServiceKind::Vqa, &req).unwrap();
            assert_eq!(resp.answers.len(), n);
        }
    }

    #[test]
    fn dying_stdio_backend_is_transport_error() {
        let svc = RemoteService::new(
            Endpoint::Stdio {
                program: "python3".into(),
                args: vec!["-c".into(), "import sys; sys.exit(0)".into()],
            },
            quick(),
        );
        let req = VqaRequest {
            protocol_version: PROTOCOL_VERSION,
            image_path: "x.png".into(),
            questions: vec![],
            hints: Hints::default(),
        };
        assert!(matches!(
            svc.call::<_, VqaResponse>(ServiceKind::Vqa, &req),
            Err(ServiceError::Transport { attempts: 3, .. })
        ));
    }
}
