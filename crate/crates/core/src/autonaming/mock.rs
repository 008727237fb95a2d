//! Offline [`VlmClient`] implementations.
//!
//! All mocks answer from the request's [`Probe`](super::Probe) and never look
//! at image bytes. Each counts the calls it receives.

use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use super::{ClientError, Phase, VlmClient, VlmRequest};
use crate::seed::sub_seed;

type Predicate = dyn Fn(usize, usize) -> bool + Send + Sync;
type Namer = dyn Fn(usize) -> String + Send + Sync;

/// Answers from ground truth: `namer(neuron)` for naming, and `yes` exactly
/// when `truth(neuron, sample)` holds for detection.
pub struct OracleMock {
    truth: Box<Predicate>,
    namer: Box<Namer>,
    calls: AtomicUsize,
}

impl OracleMock {
    pub fn new(
        truth: impl Fn(usize, usize) -> bool + Send + Sync + 'static,
        namer: impl Fn(usize) -> String + Send + Sync + 'static,
    ) -> Self {
        Self {
            truth: Box::new(truth),
            namer: Box::new(namer),
            calls: AtomicUsize::new(0),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl VlmClient for OracleMock {
    fn complete(&self, request: &VlmRequest) -> Result<String, ClientError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let probe = request.probe;
        Ok(match (probe.phase, probe.sample_index) {
            (Phase::Naming, _) => (self.namer)(probe.neuron_id),
            (Phase::Detection, Some(s)) => yes_no((self.truth)(probe.neuron_id, s)),
            (Phase::Detection, None) => {
                return Err(ClientError::Malformed(
                    "detection probe without sample".into(),
                ))
            }
        })
    }
}

/// Same answer to every request.
pub struct ConstantMock {
    answer: String,
    calls: AtomicUsize,
}

impl ConstantMock {
    pub fn new(answer: impl Into<String>) -> Self {
        Self {
            answer: answer.into(),
            calls: AtomicUsize::new(0),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl VlmClient for ConstantMock {
    fn complete(&self, _: &VlmRequest) -> Result<String, ClientError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        Ok(self.answer.clone())
    }
}

/// Coin-flip detector. The answer is a pure function of
/// `(seed, neuron, sample)`, so it does not depend on call order.
pub struct RandomMock {
    seed: u64,
    calls: AtomicUsize,
}

impl RandomMock {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            calls: AtomicUsize::new(0),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl VlmClient for RandomMock {
    fn complete(&self, request: &VlmRequest) -> Result<String, ClientError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let p = request.probe;
        Ok(match p.phase {
            Phase::Naming => format!("random concept {}", p.neuron_id),
            Phase::Detection => {
                let label = format!("{}:{}", p.neuron_id, p.sample_index.unwrap_or(usize::MAX));
                yes_no(sub_seed(self.seed, &label) & 1 == 1)
            }
        })
    }
}

/// Replays a fixed list of answers in call order. A line reading `!error`
/// produces a retryable transport failure instead of an answer. Once the
/// script runs out every call fails as malformed.
pub struct ScriptedMock {
    lines: Vec<String>,
    next: Mutex<usize>,
}

impl ScriptedMock {
    pub fn new<S: Into<String>>(lines: impl IntoIterator<Item = S>) -> Self {
        Self {
            lines: lines.into_iter().map(Into::into).collect(),
            next: Mutex::new(0),
        }
    }

    pub fn from_file(path: &Path) -> std::io::Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(Self::new(text.lines().map(str::to_string)))
    }

    pub fn calls(&self) -> usize {
        *self.next.lock().expect("mock mutex")
    }
}

impl VlmClient for ScriptedMock {
    fn complete(&self, _: &VlmRequest) -> Result<String, ClientError> {
        let mut next = self.next.lock().expect("mock mutex");
        let i = *next;
        *next += 1;
        match self.lines.get(i).map(String::as_str) {
            Some("!error") => Err(ClientError::Transport("scripted failure".into())),
            Some(line) => Ok(line.to_string()),
            None => Err(ClientError::Malformed("script exhausted".into())),
        }
    }
}

fn yes_no(b: bool) -> String {
    if b { "yes" } else { "no" }.to_string()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autonaming::Probe;

    fn probe(neuron_id: usize, phase: Phase, sample_index: Option<usize>) -> VlmRequest {
        VlmRequest {
            model: "m".into(),
            temperature: 0.0,
            messages: vec![],
            probe: Probe {
                neuron_id,
                phase,
                sample_index,
            },
        }
    }

    #[test]
    fn oracle_follows_truth() {
        let m = OracleMock::new(|n, s| (n + s) % 2 == 0, |n| format!("concept {n}"));
        assert_eq!(
            m.complete(&probe(3, Phase::Naming, None)).unwrap(),
            "concept 3"
        );
        assert_eq!(
            m.complete(&probe(3, Phase::Detection, Some(1))).unwrap(),
            "yes"
        );
        assert_eq!(
            m.complete(&probe(3, Phase::Detection, Some(2))).unwrap(),
            "no"
        );
        assert_eq!(m.calls(), 3);
    }

    #[test]
    fn random_is_order_independent_and_balanced() {
        let m = RandomMock::new(7);
        let a: Vec<String> = (0..200)
            .map(|s| m.complete(&probe(1, Phase::Detection, Some(s))).unwrap())
            .collect();
        let b: Vec<String> = (0..200)
            .rev()
            .map(|s| m.complete(&probe(1, Phase::Detection, Some(s))).unwrap())
            .collect();
        assert!(a.iter().eq(b.iter().rev()));
        let yes = a.iter().filter(|s| *s == "yes").count();
        assert!((70..130).contains(&yes), "yes = {yes}");
    }

    #[test]
    fn scripted_replays_in_order() {
        let m = ScriptedMock::new(["first", "!error", "second"]);
        let r = probe(0, Phase::Naming, None);
        assert_eq!(m.complete(&r).unwrap(), "first");
        assert!(m.complete(&r).unwrap_err().is_retryable());
        assert_eq!(m.complete(&r).unwrap(), "second");
        assert!(matches!(m.complete(&r), Err(ClientError::Malformed(_))));
        assert_eq!(m.calls(), 4);
    }
}
