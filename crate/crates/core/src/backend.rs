//! Model backends behind a line-oriented wire protocol, plus the
//! fixture-driven mock generator used for deterministic runs.
//!
//! Requests and responses are single JSON lines over a child process's
//! standard streams or a TCP socket:
//!
//! ```text
//! generator: {"prompt": "...", "beam_width": 24, "max_tokens": 3}
//!         -> {"candidates": [{"text": "...", "token_logprobs": [-0.1]}]}
//! scorer:    {"question": "...", "answers": ["..."]}
//!         -> {"scores": [0.7]}
//! embedder:  {"texts": ["..."]}
//!         -> {"vectors": [[0.0, 1.0]]}
//! ```

use std::io::{self, BufRead, BufReader, Write};
use std::net::TcpStream;
use std::path::Path;
use std::process::{Child, Command, Stdio};
use std::sync::Mutex;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::generate::{GeneratorBackend, Prompt, RawCandidate};
use crate::jsonl;
use crate::rank::ScorerBackend;
use crate::retrieve::Embedder;

/// One request–response exchange over some line-oriented channel.
pub trait LineTransport: Send {
    fn roundtrip(&mut self, request: &str) -> io::Result<String>;
}

fn read_response_line(reader: &mut impl BufRead) -> io::Result<String> {
    let mut line = String::new();
    let n = reader.read_line(&mut line)?;
    if n == 0 {
        return Err(io::Error::new(
            io::ErrorKind::UnexpectedEof,
            "backend closed the connection",
        ));
    }
    Ok(line.trim_end_matches(['\r', '\n']).to_string())
}

/// A child process spoken to over stdin/stdout. The command line runs under
/// `sh -c`, so endpoints may carry arguments. The child is killed on drop.
pub struct SubprocessTransport {
    child: Child,
    stdin: std::process::ChildStdin,
    stdout: BufReader<std::process::ChildStdout>,
}

impl SubprocessTransport {
    pub fn spawn(command_line: &str) -> io::Result<SubprocessTransport> {
        let mut child = Command::new("sh")
            .arg("-c")
            .arg(command_line)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()?;
        let stdin = child.stdin.take().expect("stdin piped");
        let stdout = BufReader::new(child.stdout.take().expect("stdout piped"));
        Ok(SubprocessTransport {
            child,
            stdin,
            stdout,
        })
    }
}

impl LineTransport for SubprocessTransport {
    fn roundtrip(&mut self, request: &str) -> io::Result<String> {
        self.stdin.write_all(request.as_bytes())?;
        self.stdin.write_all(b"\n")?;
        self.stdin.flush()?;
        read_response_line(&mut self.stdout)
    }
}

impl Drop for SubprocessTransport {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

/// A TCP connection to a local model server.
pub struct SocketTransport {
    writer: TcpStream,
    reader: BufReader<TcpStream>,
}

impl SocketTransport {
    pub fn connect(addr: &str) -> io::Result<SocketTransport> {
        let writer = TcpStream::connect(addr)?;
        let reader = BufReader::new(writer.try_clone()?);
        Ok(SocketTransport { writer, reader })
    }
}

impl LineTransport for SocketTransport {
    fn roundtrip(&mut self, request: &str) -> io::Result<String> {
        self.writer.write_all(request.as_bytes())?;
        self.writer.write_all(b"\n")?;
        self.writer.flush()?;
        read_response_line(&mut self.reader)
    }
}

/// Shared client plumbing: serialize the request, run one exchange with the
/// connection locked, parse the response. One request is in flight at a time.
struct WireClient {
    name: String,
    transport: Mutex<Box<dyn LineTransport>>,
}

impl WireClient {
    fn new(name: impl Into<String>, transport: Box<dyn LineTransport>) -> WireClient {
        WireClient {
            name: name.into(),
            transport: Mutex::new(transport),
        }
    }

    fn call<Req: Serialize, Resp: DeserializeOwned>(&self, request: &Req) -> Result<Resp> {
        let line = serde_json::to_string(request)
            .map_err(|e| Error::backend(&self.name, format!("encoding request: {e}")))?;
        let mut transport = self
            .transport
            .lock()
            .unwrap_or_else(|poisoned| poisoned.into_inner());
        let response = transport
            .roundtrip(&line)
            .map_err(|e| Error::backend(&self.name, e.to_string()))?;
        serde_json::from_str(&response)
            .map_err(|e| Error::backend(&self.name, format!("malformed response: {e}")))
    }
}

#[derive(Serialize)]
struct GenerateRequest<'a> {
    prompt: &'a str,
    beam_width: usize,
    max_tokens: usize,
}

#[derive(Deserialize)]
struct GenerateResponse {
    candidates: Vec<RawCandidate>,
}

/// A generator served over the wire protocol.
pub struct WireGenerator {
    client: WireClient,
}

impl WireGenerator {
    pub fn subprocess(name: impl Into<String>, command_line: &str) -> Result<WireGenerator> {
        let name = name.into();
        let transport = SubprocessTransport::spawn(command_line)
            .map_err(|e| Error::backend(&name, format!("spawning '{command_line}': {e}")))?;
        Ok(WireGenerator {
            client: WireClient::new(name, Box::new(transport)),
        })
    }

    pub fn socket(name: impl Into<String>, addr: &str) -> Result<WireGenerator> {
        let name = name.into();
        let transport = SocketTransport::connect(addr)
            .map_err(|e| Error::backend(&name, format!("connecting to {addr}: {e}")))?;
        Ok(WireGenerator {
            client: WireClient::new(name, Box::new(transport)),
        })
    }
}

impl GeneratorBackend for WireGenerator {
    fn name(&self) -> &str {
        &self.client.name
    }

    fn generate(
        &self,
        prompt: &Prompt,
        beam_width: usize,
        max_answer_tokens: usize,
    ) -> Result<Vec<RawCandidate>> {
        let response: GenerateResponse = self.client.call(&GenerateRequest {
            prompt: &prompt.text,
            beam_width,
            max_tokens: max_answer_tokens,
        })?;
        Ok(response.candidates)
    }
}

#[derive(Serialize)]
struct ScoreRequest<'a> {
    question: &'a str,
    answers: &'a [String],
}

#[derive(Deserialize)]
struct ScoreResponse {
    scores: Vec<f64>,
}

/// A plausibility scorer served over the wire protocol.
pub struct WireScorer {
    client: WireClient,
}

impl WireScorer {
    pub fn subprocess(name: impl Into<String>, command_line: &str) -> Result<WireScorer> {
        let name = name.into();
        let transport = SubprocessTransport::spawn(command_line)
            .map_err(|e| Error::backend(&name, format!("spawning '{command_line}': {e}")))?;
        Ok(WireScorer {
            client: WireClient::new(name, Box::new(transport)),
        })
    }

    pub fn socket(name: impl Into<String>, addr: &str) -> Result<WireScorer> {
        let name = name.into();
        let transport = SocketTransport::connect(addr)
            .map_err(|e| Error::backend(&name, format!("connecting to {addr}: {e}")))?;
        Ok(WireScorer {
            client: WireClient::new(name, Box::new(transport)),
        })
    }
}

impl ScorerBackend for WireScorer {
    fn name(&self) -> &str {
        &self.client.name
    }

    fn score(&self, question_text: &str, answers: &[String]) -> Result<Vec<f64>> {
        let response: ScoreResponse = self.client.call(&ScoreRequest {
            question: question_text,
            answers,
        })?;
        Ok(response.scores)
    }
}

#[derive(Serialize)]
struct EmbedRequest<'a> {
    texts: &'a [&'a str],
}

#[derive(Deserialize)]
struct EmbedResponse {
    vectors: Vec<Vec<f64>>,
}

/// A sentence embedder served over the wire protocol. The vector length of
/// the first response fixes the dimension expected from then on.
pub struct WireEmbedder {
    client: WireClient,
    dim: usize,
}

impl WireEmbedder {
    pub fn subprocess(
        name: impl Into<String>,
        command_line: &str,
        dim: usize,
    ) -> Result<WireEmbedder> {
        let name = name.into();
        let transport = SubprocessTransport::spawn(command_line)
            .map_err(|e| Error::backend(&name, format!("spawning '{command_line}': {e}")))?;
        Ok(WireEmbedder {
            client: WireClient::new(name, Box::new(transport)),
            dim,
        })
    }

    pub fn socket(name: impl Into<String>, addr: &str, dim: usize) -> Result<WireEmbedder> {
        let name = name.into();
        let transport = SocketTransport::connect(addr)
            .map_err(|e| Error::backend(&name, format!("connecting to {addr}: {e}")))?;
        Ok(WireEmbedder {
            client: WireClient::new(name, Box::new(transport)),
            dim,
        })
    }
}

impl Embedder for WireEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Result<Vec<f64>> {
        let response: EmbedResponse = self.client.call(&EmbedRequest { texts: &[text] })?;
        let mut vectors = response.vectors;
        if vectors.len() != 1 {
            return Err(Error::backend(
                &self.client.name,
                format!("expected 1 vector, got {}", vectors.len()),
            ));
        }
        Ok(vectors.remove(0))
    }
}

/// One mock-generator rule: canned candidates returned whenever the prompt
/// contains the pattern.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MockRule {
    #[serde(rename = "match")]
    pub pattern: String,
    pub candidates: Vec<RawCandidate>,
}

/// A generator driven entirely by a fixture file: the first rule whose
/// pattern occurs in the prompt supplies the candidates (cut to the beam
/// width); prompts matching no rule yield no candidates.
#[derive(Debug, Clone, Default)]
pub struct MockGenerator {
    rules: Vec<MockRule>,
}

impl MockGenerator {
    pub fn from_rules(rules: Vec<MockRule>) -> MockGenerator {
        MockGenerator { rules }
    }

    /// Load rules from a file with one rule record per line.
    pub fn load(path: impl AsRef<Path>) -> Result<MockGenerator> {
        let rules = jsonl::read_records::<MockRule>(path.as_ref())?
            .into_iter()
            .map(|(_, rule)| rule)
            .collect();
        Ok(MockGenerator { rules })
    }
}

impl GeneratorBackend for MockGenerator {
    fn name(&self) -> &str {
        "mock-generator"
    }

    fn generate(
        &self,
        prompt: &Prompt,
        beam_width: usize,
        _max_answer_tokens: usize,
    ) -> Result<Vec<RawCandidate>> {
        for rule in &self.rules {
            if prompt.text.contains(&rule.pattern) {
                let mut candidates = rule.candidates.clone();
                candidates.truncate(beam_width);
                return Ok(candidates);
            }
        }
        Ok(Vec::new())
    }

    fn supports_pipelining(&self) -> bool {
        true
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generate::{build_prompt, MarkerSet};
    use crate::retrieve::KnowledgeSet;
    use crate::rewrite::RewrittenQuestion;
    use std::net::TcpListener;

    fn prompt(question: &str) -> Prompt {
        build_prompt(
            &KnowledgeSet::default(),
            &RewrittenQuestion {
                text: question.to_string(),
                matched_prefix: None,
                content: String::new(),
            },
            &MarkerSet::default(),
        )
    }

    fn raw(text: &str, logprobs: &[f64]) -> RawCandidate {
        RawCandidate {
            text: text.into(),
            token_logprobs: logprobs.to_vec(),
        }
    }

    #[test]
    fn mock_generator_first_matching_rule_wins() {
        let mock = MockGenerator::from_rules(vec![
            MockRule {
                pattern: "athlete".into(),
                candidates: vec![raw("beer", &[-0.1]), raw("ice cream", &[-0.1, -0.15])],
            },
            MockRule {
                pattern: "refrigerator".into(),
                candidates: vec![raw("milk", &[-0.2])],
            },
        ]);
        let out = mock
            .generate(
                &prompt("One thing an athlete keeps in her refrigerator is"),
                24,
                3,
            )
            .unwrap();
        assert_eq!(out.len(), 2);
        assert_eq!(out[0].text, "beer");
    }

    #[test]
    fn mock_generator_truncates_to_beam_width() {
        let mock = MockGenerator::from_rules(vec![MockRule {
            pattern: "is".into(),
            candidates: vec![raw("a", &[-0.1]), raw("b", &[-0.2]), raw("c", &[-0.3])],
        }]);
        let out = mock.generate(&prompt("One fruit is"), 2, 3).unwrap();
        assert_eq!(out.len(), 2);
    }

    #[test]
    fn mock_generator_no_match_is_empty() {
        let mock = MockGenerator::from_rules(vec![MockRule {
            pattern: "zebra".into(),
            candidates: vec![raw("x", &[-0.1])],
        }]);
        assert!(mock
            .generate(&prompt("One fruit is"), 24, 3)
            .unwrap()
            .is_empty());
    }

    #[test]
    fn mock_generator_loads_fixture_files() {
        let mut file = tempfile::NamedTempFile::new().unwrap();
        writeln!(
            file,
            r#"{{"match":"athlete","candidates":[{{"text":"beer","token_logprobs":[-0.1]}}]}}"#
        )
        .unwrap();
        let mock = MockGenerator::load(file.path()).unwrap();
        let out = mock
            .generate(&prompt("the athlete question"), 24, 3)
            .unwrap();
        assert_eq!(out[0].text, "beer");
        assert_eq!(out[0].token_logprobs, [-0.1]);
    }

    /// A single-connection line server answering each request line with the
    /// next canned response.
    fn serve_lines(responses: Vec<String>) -> String {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap().to_string();
        std::thread::spawn(move || {
            let (stream, _) = listener.accept().unwrap();
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut writer = stream;
            for response in responses {
                let mut line = String::new();
                if reader.read_line(&mut line).unwrap() == 0 {
                    return;
                }
                writeln!(writer, "{response}").unwrap();
            }
        });
        addr
    }

    #[test]
    fn socket_generator_round_trip() {
        let addr = serve_lines(vec![
            r#"{"candidates":[{"text":"beer","token_logprobs":[-0.5]}]}"#.to_string(),
        ]);
        let backend = WireGenerator::socket("remote", &addr).unwrap();
        let out = backend.generate(&prompt("One drink is"), 4, 3).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].text, "beer");
    }

    #[test]
    fn socket_scorer_and_embedder_round_trip() {
        let addr = serve_lines(vec![r#"{"scores":[0.25,0.75]}"#.to_string()]);
        let scorer = WireScorer::socket("remote", &addr).unwrap();
        let scores = scorer
            .score("Name a drink?", &["beer".into(), "milk".into()])
            .unwrap();
        assert_eq!(scores, [0.25, 0.75]);

        let addr = serve_lines(vec![r#"{"vectors":[[1.0,2.0,3.0]]}"#.to_string()]);
        let embedder = WireEmbedder::socket("remote", &addr, 3).unwrap();
        assert_eq!(embedder.embed("hello").unwrap(), [1.0, 2.0, 3.0]);
    }

    #[test]
    fn malformed_socket_response_is_a_backend_error() {
        let addr = serve_lines(vec!["not json at all".to_string()]);
        let backend = WireGenerator::socket("remote", &addr).unwrap();
        let err = backend.generate(&prompt("One drink is"), 4, 3).unwrap_err();
        assert!(err.is_backend(), "{err}");
        assert!(err.to_string().contains("remote"), "{err}");
    }

    #[test]
    fn connection_refused_is_a_backend_error() {
        // Bind-then-drop guarantees nothing is listening on the port.
        let addr = {
            let listener = TcpListener::bind("127.0.0.1:0").unwrap();
            listener.local_addr().unwrap().to_string()
        };
        let err = match WireGenerator::socket("remote", &addr) {
            Ok(_) => panic!("connection unexpectedly succeeded"),
            Err(err) => err,
        };
        assert!(err.is_backend(), "{err}");
    }

    #[cfg(unix)]
    #[test]
    fn subprocess_generator_round_trip() {
        let script = r#"while read line; do printf '%s\n' '{"candidates":[{"text":"beer","token_logprobs":[-0.25]}]}'; done"#;
        let backend = WireGenerator::subprocess("child", script).unwrap();
        let out = backend.generate(&prompt("One drink is"), 4, 3).unwrap();
        assert_eq!(out[0].text, "beer");
        // The connection is serialized, so a second request reuses the child.
        let out = backend.generate(&prompt("One food is"), 4, 3).unwrap();
        assert_eq!(out.len(), 1);
    }

    #[cfg(unix)]
    #[test]
    fn subprocess_echo_is_a_malformed_response() {
        // `cat` echoes the request back, which is not a valid response.
        let backend = WireScorer::subprocess("echo", "cat").unwrap();
        let err = backend.score("q", &["a".into()]).unwrap_err();
        assert!(err.is_backend(), "{err}");
    }

    #[cfg(unix)]
    #[test]
    fn subprocess_exit_is_a_backend_error() {
        let backend = WireGenerator::subprocess("dead", "exit 0").unwrap();
        let err = backend.generate(&prompt("One drink is"), 4, 3).unwrap_err();
        assert!(err.is_backend(), "{err}");
    }
}
