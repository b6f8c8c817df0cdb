//! Pluggable sources of per-step logits over the action vocabulary.
//!
//! Three backends share one trait: a scripted oracle that walks the plan
//! (the ground-truth generator and best-case baseline), a seeded random
//! baseline (adversarial input for decoder-soundness tests), and a remote
//! client that forwards the serialized prefix to an external inference
//! server. Backends only produce logits; serialization and masking are the
//! same code path regardless of the source.

use std::io::{Read, Write};
use std::net::{TcpStream, ToSocketAddrs};
use std::time::Duration;

use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::decoder::{Phase, PlaneStatus, SafetyContext};
use crate::geometry::ResectionPlane;
use crate::grammar::{encode_command, ActionCommand, Control, SpecId, TokenId, Vocabulary};
use crate::rng;
use crate::sim::ProsthesisModel;

pub const WIRE_SCHEMA_VERSION: u32 = 1;
pub const DEFAULT_ORACLE_BETA: f64 = 20.0;
const ORACLE_SPEED_MM_S: f64 = 10.0;

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error("endpoint {endpoint}: no response after {attempts} attempts (last error: {last})")]
    Unreachable {
        endpoint: String,
        attempts: u32,
        last: String,
    },
    #[error("malformed response: expected {expected} logits, got {got}")]
    WrongLength { expected: usize, got: usize },
    #[error("malformed response: non-finite logit at index {index}")]
    NonFinite { index: usize },
    #[error("malformed response: neither logits nor token present")]
    EmptyResponse,
    #[error("vocabulary size mismatch: harness has {ours}, server echoed {theirs}")]
    VocabMismatch { ours: u32, theirs: u32 },
    #[error("oracle cursor desynchronized from decoder state: {0}")]
    CursorDesync(String),
    #[error("plan error: {0}")]
    Plan(String),
}

/// One inference request: the serialized prefix plus enough bookkeeping for
/// the server to detect grammar-config mismatches loudly.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolicyRequest {
    pub schema_version: u32,
    pub episode_id: u64,
    pub step: usize,
    pub vocab_size: u32,
    pub prefix: Vec<TokenId>,
}

/// Server reply: a full logit vector, or (discouraged) a single token id
/// which the harness converts to a one-hot logit vector so the masks still
/// get the final say.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyResponse {
    pub schema_version: u32,
    pub vocab_size: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub logits: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token: Option<TokenId>,
}

/// What a scripted backend may observe about the world. Mirrors the sim's
/// truth; learned backends are expected to ignore it and use the prefix.
pub struct Observation<'a> {
    pub ctx: &'a SafetyContext,
    pub phase: Phase,
}

pub trait PolicyBackend {
    fn name(&self) -> &str;
    /// Resets per-episode state (cursors, RNG streams).
    fn begin_episode(&mut self, episode_id: u64);
    fn logits(&mut self, req: &PolicyRequest, obs: &Observation) -> Result<Vec<f64>, PolicyError>;
    /// Transport retries consumed so far (remote backends only).
    fn retries(&self) -> u32 {
        0
    }
}

fn peaked(size: u32, token: TokenId, beta: f64) -> Vec<f64> {
    let mut l = vec![0.0; size as usize];
    l[token as usize] = beta;
    l
}

/// Scripted expert: visits the planes in execution order with
/// Move → Align → Cut, retrying alignment until it sticks, and emits EOS
/// once every plane is cut. Logits are near-one-hot at sharpness `beta`.
pub struct OraclePolicy {
    vocab: Vocabulary,
    ordered: Vec<ResectionPlane>,
    beta: f64,
    pending: Vec<TokenId>,
}

impl OraclePolicy {
    pub fn new(model: &ProsthesisModel, vocab: &Vocabulary) -> Result<Self, PolicyError> {
        Ok(Self {
            vocab: vocab.clone(),
            ordered: model.ordered_planes().to_vec(),
            beta: DEFAULT_ORACLE_BETA,
            pending: Vec::new(),
        })
    }

    pub fn with_beta(mut self, beta: f64) -> Self {
        self.beta = beta;
        self
    }

    fn quantize(&self, spec: SpecId, value: f64) -> u32 {
        self.vocab
            .spec(spec)
            .quantize(value)
            .expect("oracle values are finite")
            .0
    }

    /// The next command toward cutting the first uncut plane in order.
    fn decide(&self, ctx: &SafetyContext) -> Option<ActionCommand> {
        let target = self
            .ordered
            .iter()
            .find(|p| ctx.status_of(p.id) != Some(PlaneStatus::Cut))?;
        if ctx.status_of(target.id) == Some(PlaneStatus::Aligned) && ctx.cut_gate_open() {
            return Some(ActionCommand::Cut {
                speed: self.quantize(SpecId::Speed, ORACLE_SPEED_MM_S),
            });
        }
        let entry = target.entry_point();
        let tool = ctx.tool_pose.translation;
        let bins_of = |v: nalgebra::Vector3<f64>| {
            [
                self.quantize(SpecId::Position, v.x),
                self.quantize(SpecId::Position, v.y),
                self.quantize(SpecId::Position, v.z),
            ]
        };
        let entry_bins = bins_of(entry);
        if bins_of(tool) != entry_bins {
            let [x, y, z] = entry_bins;
            return Some(ActionCommand::Move { x, y, z });
        }
        Some(ActionCommand::Align {
            plane: target.id - 1,
            yaw: self.quantize(SpecId::Yaw, 0.0),
            pitch: self.quantize(SpecId::Pitch, 0.0),
            roll: self.quantize(SpecId::Roll, 0.0),
        })
    }
}

impl PolicyBackend for OraclePolicy {
    fn name(&self) -> &str {
        "oracle"
    }

    fn begin_episode(&mut self, _episode_id: u64) {
        self.pending.clear();
    }

    fn logits(&mut self, req: &PolicyRequest, obs: &Observation) -> Result<Vec<f64>, PolicyError> {
        let size = req.vocab_size;
        let token = match obs.phase {
            Phase::Terminal => Control::Eos.token(),
            Phase::ExpectPrimitive => {
                self.pending.clear();
                match self.decide(obs.ctx) {
                    None => Control::Eos.token(),
                    Some(cmd) => {
                        let toks = encode_command(&self.vocab, &cmd)
                            .map_err(|e| PolicyError::Plan(e.to_string()))?;
                        self.pending = toks[1..].to_vec();
                        toks[0]
                    }
                }
            }
            Phase::ExpectParam { .. } => {
                if self.pending.is_empty() {
                    return Err(PolicyError::CursorDesync(format!(
                        "no pending parameters at step {}",
                        req.step
                    )));
                }
                self.pending.remove(0)
            }
        };
        Ok(peaked(size, token, self.beta))
    }
}

/// I.i.d. standard-normal logits from a per-episode seeded stream.
pub struct RandomPolicy {
    master_seed: u64,
    rng: ChaCha8Rng,
}

impl RandomPolicy {
    pub fn new(master_seed: u64) -> Self {
        Self {
            master_seed,
            rng: rng::stream(master_seed, rng::TAG_POLICY, 0),
        }
    }
}

impl PolicyBackend for RandomPolicy {
    fn name(&self) -> &str {
        "random"
    }

    fn begin_episode(&mut self, episode_id: u64) {
        self.rng = rng::stream(self.master_seed, rng::TAG_POLICY, episode_id);
    }

    fn logits(&mut self, req: &PolicyRequest, _obs: &Observation) -> Result<Vec<f64>, PolicyError> {
        Ok((0..req.vocab_size)
            .map(|_| StandardNormal.sample(&mut self.rng))
            .collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WireFormat {
    /// 4-byte big-endian length prefix, then a JSON document, each way.
    LengthPrefixed,
    /// HTTP/1.1 POST with a JSON body; response read to EOF.
    Http,
}

/// Remote inference client. Synchronous, at most one in-flight request per
/// episode; transient failures retry with exponential backoff and exhausted
/// retries surface as [`PolicyError::Unreachable`], which aborts the episode
/// rather than scoring it failed.
pub struct RemotePolicy {
    endpoint: String,
    format: WireFormat,
    timeout: Duration,
    max_retries: u32,
    backoff_base: Duration,
    retry_count: u32,
}

impl RemotePolicy {
    pub fn new(endpoint: impl Into<String>, format: WireFormat) -> Self {
        Self {
            endpoint: endpoint.into(),
            format,
            timeout: Duration::from_millis(1000),
            max_retries: 3,
            backoff_base: Duration::from_millis(50),
            retry_count: 0,
        }
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self
    }

    pub fn with_retries(mut self, max_retries: u32) -> Self {
        self.max_retries = max_retries;
        self
    }

    pub fn with_backoff_base(mut self, base: Duration) -> Self {
        self.backoff_base = base;
        self
    }

    fn connect(&self) -> std::io::Result<TcpStream> {
        let addr = self
            .endpoint
            .to_socket_addrs()?
            .next()
            .ok_or_else(|| std::io::Error::other("endpoint resolved to no address"))?;
        let stream = TcpStream::connect_timeout(&addr, self.timeout)?;
        stream.set_read_timeout(Some(self.timeout))?;
        stream.set_write_timeout(Some(self.timeout))?;
        Ok(stream)
    }

    fn exchange_length_prefixed(&self, body: &[u8]) -> std::io::Result<Vec<u8>> {
        let mut stream = self.connect()?;
        stream.write_all(&(body.len() as u32).to_be_bytes())?;
        stream.write_all(body)?;
        stream.flush()?;
        let mut len_buf = [0u8; 4];
        stream.read_exact(&mut len_buf)?;
        let len = u32::from_be_bytes(len_buf) as usize;
        let mut out = vec![0u8; len];
        stream.read_exact(&mut out)?;
        Ok(out)
    }

    fn exchange_http(&self, body: &[u8]) -> std::io::Result<Vec<u8>> {
        let mut stream = self.connect()?;
        let head = format!(
            "POST /logits HTTP/1.1\r\nHost: {}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n",
            self.endpoint,
            body.len()
        );
        stream.write_all(head.as_bytes())?;
        stream.write_all(body)?;
        stream.flush()?;
        let mut raw = Vec::new();
        stream.read_to_end(&mut raw)?;
        let text = String::from_utf8_lossy(&raw);
        let Some((head, json)) = text.split_once("\r\n\r\n") else {
            return Err(std::io::Error::other("missing HTTP header terminator"));
        };
        let status = head.lines().next().unwrap_or_default();
        if !status.contains(" 200 ") {
            return Err(std::io::Error::other(format!("server status: {status}")));
        }
        Ok(json.as_bytes().to_vec())
    }

    fn validate(&self, req: &PolicyRequest, resp: PolicyResponse) -> Result<Vec<f64>, PolicyError> {
        if resp.vocab_size != req.vocab_size {
            return Err(PolicyError::VocabMismatch {
                ours: req.vocab_size,
                theirs: resp.vocab_size,
            });
        }
        let logits = match (resp.logits, resp.token) {
            (Some(l), _) => l,
            // Server-side sampling: one-hot so masks keep the final say.
            (None, Some(tok)) => peaked(req.vocab_size, tok, 1e4),
            (None, None) => return Err(PolicyError::EmptyResponse),
        };
        if logits.len() != req.vocab_size as usize {
            return Err(PolicyError::WrongLength {
                expected: req.vocab_size as usize,
                got: logits.len(),
            });
        }
        if let Some(index) = logits.iter().position(|l| !l.is_finite()) {
            return Err(PolicyError::NonFinite { index });
        }
        Ok(logits)
    }
}

impl PolicyBackend for RemotePolicy {
    fn name(&self) -> &str {
        "remote"
    }

    fn begin_episode(&mut self, _episode_id: u64) {}

    fn logits(&mut self, req: &PolicyRequest, _obs: &Observation) -> Result<Vec<f64>, PolicyError> {
        let body = serde_json::to_vec(req).expect("request serializes");
        let mut last = String::new();
        for attempt in 0..=self.max_retries {
            if attempt > 0 {
                self.retry_count += 1;
                std::thread::sleep(self.backoff_base * 2u32.pow(attempt - 1));
            }
            let exchanged = match self.format {
                WireFormat::LengthPrefixed => self.exchange_length_prefixed(&body),
                WireFormat::Http => self.exchange_http(&body),
            };
            match exchanged {
                Ok(raw) => {
                    // Contract violations are not transient; fail immediately.
                    let resp: PolicyResponse = serde_json::from_slice(&raw).map_err(|e| {
                        PolicyError::Unreachable {
                            endpoint: self.endpoint.clone(),
                            attempts: attempt + 1,
                            last: format!("bad JSON: {e}"),
                        }
                    })?;
                    return self.validate(req, resp);
                }
                Err(e) => last = e.to_string(),
            }
        }
        Err(PolicyError::Unreachable {
            endpoint: self.endpoint.clone(),
            attempts: self.max_retries + 1,
            last,
        })
    }

    fn retries(&self) -> u32 {
        self.retry_count
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::PlanConfig;
    use crate::decoder::AlignTolerance;
    use std::net::TcpListener;

    fn setup() -> (ProsthesisModel, Vocabulary, SafetyContext) {
        let model = ProsthesisModel::new(PlanConfig::default()).unwrap();
        let vocab = Vocabulary::default();
        let ctx = SafetyContext::from_plan(model.plan(), AlignTolerance::default()).unwrap();
        (model, vocab, ctx)
    }

    fn request(vocab: &Vocabulary, step: usize) -> PolicyRequest {
        PolicyRequest {
            schema_version: WIRE_SCHEMA_VERSION,
            episode_id: 0,
            step,
            vocab_size: vocab.size(),
            prefix: vec![],
        }
    }

    fn argmax(l: &[f64]) -> TokenId {
        l.iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .map(|(i, _)| i as u32)
            .unwrap()
    }

    #[test]
    fn fresh_episode_peaks_the_move_primitive() {
        let (model, vocab, ctx) = setup();
        let mut oracle = OraclePolicy::new(&model, &vocab).unwrap();
        oracle.begin_episode(0);
        let obs = Observation {
            ctx: &ctx,
            phase: Phase::ExpectPrimitive,
        };
        let l = oracle.logits(&request(&vocab, 0), &obs).unwrap();
        assert_eq!(argmax(&l), Control::Move.token());
    }

    #[test]
    fn all_planes_cut_peaks_eos() {
        let (model, vocab, mut ctx) = setup();
        for p in model.planes() {
            ctx.set_cut(p.id);
        }
        let mut oracle = OraclePolicy::new(&model, &vocab).unwrap();
        oracle.begin_episode(0);
        let obs = Observation {
            ctx: &ctx,
            phase: Phase::ExpectPrimitive,
        };
        let l = oracle.logits(&request(&vocab, 0), &obs).unwrap();
        assert_eq!(argmax(&l), Control::Eos.token());
    }

    #[test]
    fn oracle_emits_align_once_parked_on_the_entry() {
        let (model, vocab, mut ctx) = setup();
        let first = &model.ordered_planes()[0];
        ctx.tool_pose = first.entry_pose();
        let mut oracle = OraclePolicy::new(&model, &vocab).unwrap();
        oracle.begin_episode(0);
        let obs = Observation {
            ctx: &ctx,
            phase: Phase::ExpectPrimitive,
        };
        let l = oracle.logits(&request(&vocab, 0), &obs).unwrap();
        assert_eq!(argmax(&l), Control::Align.token());
        // The next parameter peak names the plane's bin.
        let obs = Observation {
            ctx: &ctx,
            phase: Phase::ExpectParam {
                primitive: crate::grammar::Primitive::Align,
                slot: 0,
            },
        };
        let l = oracle.logits(&request(&vocab, 1), &obs).unwrap();
        let expect = vocab
            .param_token(SpecId::PlaneIndex, first.id - 1)
            .unwrap();
        assert_eq!(argmax(&l), expect);
    }

    #[test]
    fn random_logits_are_seeded_and_reproducible() {
        let (_, vocab, ctx) = setup();
        let obs = Observation {
            ctx: &ctx,
            phase: Phase::ExpectPrimitive,
        };
        let mut a = RandomPolicy::new(7);
        a.begin_episode(3);
        let la = a.logits(&request(&vocab, 0), &obs).unwrap();
        let mut b = RandomPolicy::new(7);
        b.begin_episode(3);
        let lb = b.logits(&request(&vocab, 0), &obs).unwrap();
        assert_eq!(la, lb);
        b.begin_episode(4);
        let lc = b.logits(&request(&vocab, 0), &obs).unwrap();
        assert_ne!(la, lc);
        assert_eq!(la.len(), vocab.size() as usize);
    }

    fn spawn_length_prefixed_server<F>(respond: F) -> String
    where
        F: Fn(PolicyRequest) -> Vec<u8> + Send + 'static,
    {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        std::thread::spawn(move || {
            for stream in listener.incoming() {
                let Ok(mut stream) = stream else { break };
                let mut len = [0u8; 4];
                if stream.read_exact(&mut len).is_err() {
                    continue;
                }
                let mut buf = vec![0u8; u32::from_be_bytes(len) as usize];
                if stream.read_exact(&mut buf).is_err() {
                    continue;
                }
                let req: PolicyRequest = serde_json::from_slice(&buf).unwrap();
                let body = respond(req);
                let _ = stream.write_all(&(body.len() as u32).to_be_bytes());
                let _ = stream.write_all(&body);
            }
        });
        addr.to_string()
    }

    #[test]
    fn remote_uniform_echo_server_round_trips() {
        let (_, vocab, ctx) = setup();
        let addr = spawn_length_prefixed_server(|req| {
            let resp = PolicyResponse {
                schema_version: WIRE_SCHEMA_VERSION,
                vocab_size: req.vocab_size,
                logits: Some(vec![0.0; req.vocab_size as usize]),
                token: None,
            };
            serde_json::to_vec(&resp).unwrap()
        });
        let mut remote = RemotePolicy::new(addr, WireFormat::LengthPrefixed);
        let obs = Observation {
            ctx: &ctx,
            phase: Phase::ExpectPrimitive,
        };
        let l = remote.logits(&request(&vocab, 0), &obs).unwrap();
        assert_eq!(l.len(), vocab.size() as usize);
        assert!(l.iter().all(|&x| x == 0.0));
        assert_eq!(remote.retries(), 0);
    }

    #[test]
    fn remote_wrong_length_names_both_sizes() {
        let (_, vocab, ctx) = setup();
        let addr = spawn_length_prefixed_server(|req| {
            let resp = PolicyResponse {
                schema_version: WIRE_SCHEMA_VERSION,
                vocab_size: req.vocab_size,
                logits: Some(vec![0.0; 5]),
                token: None,
            };
            serde_json::to_vec(&resp).unwrap()
        });
        let mut remote = RemotePolicy::new(addr, WireFormat::LengthPrefixed);
        let obs = Observation {
            ctx: &ctx,
            phase: Phase::ExpectPrimitive,
        };
        let err = remote.logits(&request(&vocab, 0), &obs).unwrap_err();
        match err {
            PolicyError::WrongLength { expected, got } => {
                assert_eq!(expected, vocab.size() as usize);
                assert_eq!(got, 5);
            }
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn remote_vocab_mismatch_fails_loudly() {
        let (_, vocab, ctx) = setup();
        let addr = spawn_length_prefixed_server(|req| {
            let resp = PolicyResponse {
                schema_version: WIRE_SCHEMA_VERSION,
                vocab_size: req.vocab_size + 1,
                logits: Some(vec![0.0; req.vocab_size as usize]),
                token: None,
            };
            serde_json::to_vec(&resp).unwrap()
        });
        let mut remote = RemotePolicy::new(addr, WireFormat::LengthPrefixed);
        let obs = Observation {
            ctx: &ctx,
            phase: Phase::ExpectPrimitive,
        };
        assert!(matches!(
            remote.logits(&request(&vocab, 0), &obs),
            Err(PolicyError::VocabMismatch { .. })
        ));
    }

    #[test]
    fn remote_server_side_token_becomes_one_hot_logits() {
        let (_, vocab, ctx) = setup();
        let addr = spawn_length_prefixed_server(|req| {
            let resp = PolicyResponse {
                schema_version: WIRE_SCHEMA_VERSION,
                vocab_size: req.vocab_size,
                logits: None,
                token: Some(Control::Move.token()),
            };
            serde_json::to_vec(&resp).unwrap()
        });
        let mut remote = RemotePolicy::new(addr, WireFormat::LengthPrefixed);
        let obs = Observation {
            ctx: &ctx,
            phase: Phase::ExpectPrimitive,
        };
        let l = remote.logits(&request(&vocab, 0), &obs).unwrap();
        assert_eq!(argmax(&l), Control::Move.token());
    }

    #[test]
    fn remote_retries_then_aborts_when_unreachable() {
        let (_, vocab, ctx) = setup();
        // Reserve an address and close the listener so connects are refused.
        let addr = {
            let l = TcpListener::bind("127.0.0.1:0").unwrap();
            l.local_addr().unwrap().to_string()
        };
        let mut remote = RemotePolicy::new(addr, WireFormat::LengthPrefixed)
            .with_timeout(Duration::from_millis(100))
            .with_retries(2)
            .with_backoff_base(Duration::from_millis(1));
        let obs = Observation {
            ctx: &ctx,
            phase: Phase::ExpectPrimitive,
        };
        let err = remote.logits(&request(&vocab, 0), &obs).unwrap_err();
        match err {
            PolicyError::Unreachable { attempts, .. } => assert_eq!(attempts, 3),
            other => panic!("unexpected error {other}"),
        }
        assert_eq!(remote.retries(), 2);
    }

    #[test]
    fn remote_http_round_trips() {
        let (_, vocab, ctx) = setup();
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap().to_string();
        std::thread::spawn(move || {
            for stream in listener.incoming() {
                let Ok(mut stream) = stream else { break };
                // Head and body may land in separate segments; read to the
                // header terminator, then drain exactly Content-Length bytes.
                let mut data = Vec::new();
                let mut buf = [0u8; 4096];
                let header_end = loop {
                    if let Some(i) = data.windows(4).position(|w| w == b"\r\n\r\n") {
                        break i + 4;
                    }
                    match stream.read(&mut buf) {
                        Ok(0) | Err(_) => break data.len(),
                        Ok(n) => data.extend_from_slice(&buf[..n]),
                    }
                };
                let head = String::from_utf8_lossy(&data[..header_end]).into_owned();
                let content_length = head
                    .lines()
                    .find_map(|l| l.strip_prefix("Content-Length: "))
                    .and_then(|v| v.trim().parse::<usize>().ok())
                    .unwrap_or(0);
                let mut body = data[header_end..].to_vec();
                while body.len() < content_length {
                    match stream.read(&mut buf) {
                        Ok(0) | Err(_) => break,
                        Ok(n) => body.extend_from_slice(&buf[..n]),
                    }
                }
                let req: PolicyRequest = serde_json::from_slice(&body).expect("request body");
                let resp = PolicyResponse {
                    schema_version: WIRE_SCHEMA_VERSION,
                    vocab_size: req.vocab_size,
                    logits: Some(vec![0.5; req.vocab_size as usize]),
                    token: None,
                };
                let body = serde_json::to_vec(&resp).unwrap();
                let head = format!(
                    "HTTP/1.1 200 OK\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n",
                    body.len()
                );
                let _ = stream.write_all(head.as_bytes());
                let _ = stream.write_all(&body);
            }
        });
        let mut remote = RemotePolicy::new(addr, WireFormat::Http);
        let obs = Observation {
            ctx: &ctx,
            phase: Phase::ExpectPrimitive,
        };
        let l = remote.logits(&request(&vocab, 3), &obs).unwrap();
        assert!(l.iter().all(|&x| x == 0.5));
    }
}
