//! Text-generation clients. Live HTTP access lives in the CLI; the clients here
//! are offline and deterministic.

use std::cell::RefCell;
use std::collections::VecDeque;
use std::fs;
use std::path::{Path, PathBuf};

use serde_json::json;
use sha2::{Digest, Sha256};

use super::templates::PromptKind;
use crate::error::{KoreError, Result};

pub trait GenClient {
    fn generate(&self, system: &str, user: &str) -> Result<String>;
}

impl<C: GenClient + ?Sized> GenClient for &C {
    fn generate(&self, system: &str, user: &str) -> Result<String> {
        (**self).generate(system, user)
    }
}

impl<C: GenClient + ?Sized> GenClient for Box<C> {
    fn generate(&self, system: &str, user: &str) -> Result<String> {
        (**self).generate(system, user)
    }
}

/// Hex SHA-256 of `system ‖ 0x00 ‖ user`; the key [`StubDirClient`] looks up.
pub fn request_key(system: &str, user: &str) -> String {
    let mut h = Sha256::new();
    h.update(system.as_bytes());
    h.update([0u8]);
    h.update(user.as_bytes());
    hex::encode(h.finalize())
}

fn request_digest(system: &str, user: &str) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(system.as_bytes());
    h.update([0u8]);
    h.update(user.as_bytes());
    h.finalize().into()
}

/// Canned responses computed from the request bytes alone.
///
/// Question requests produce 6 to 8 questions, so dialogues have 7 to 9 rounds.
/// Quadruplet requests produce `quadruplets` well-formed JSON objects.
#[derive(Clone, Debug)]
pub struct DeterministicStub {
    pub quadruplets: usize,
}

impl Default for DeterministicStub {
    fn default() -> Self {
        DeterministicStub { quadruplets: 5 }
    }
}

impl GenClient for DeterministicStub {
    fn generate(&self, system: &str, user: &str) -> Result<String> {
        let kind = PromptKind::of_system_prompt(system)
            .ok_or_else(|| KoreError::Client("stub does not recognise the system prompt".into()))?;
        let d = request_digest(system, user);
        let tag = hex::encode(&d[..4]);
        Ok(match kind {
            PromptKind::Questions => {
                let n = 6 + usize::from(d[4]) % 3;
                (1..=n)
                    .map(|i| format!("{i}. What is detail {i} of record {tag}?"))
                    .collect::<Vec<_>>()
                    .join("\n")
            }
            PromptKind::Answer => format!("Detail {} of record {tag} is documented.", d[5] % 10),
            PromptKind::Summary => format!("Record {tag} summarises one documented event."),
            PromptKind::Quadruplets => {
                let items: Vec<_> = (1..=self.quadruplets)
                    .map(|i| {
                        json!({
                            "question": format!("Which code does subject {tag}-{i} carry?"),
                            "answer": format!("code {}", d[6 + i % 20]),
                            "subject": format!("subject {tag}-{i}"),
                            "hypernym": "Thing",
                        })
                    })
                    .collect();
                serde_json::to_string(&items)?
            }
        })
    }
}

/// Reads `<dir>/<request_key>.txt`; falls back to a second client when the file
/// is absent.
pub struct StubDirClient<F = DeterministicStub> {
    dir: PathBuf,
    fallback: Option<F>,
}

impl StubDirClient {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        StubDirClient { dir: dir.into(), fallback: None }
    }
}

impl<F: GenClient> StubDirClient<F> {
    pub fn with_fallback(dir: impl Into<PathBuf>, fallback: F) -> Self {
        StubDirClient { dir: dir.into(), fallback: Some(fallback) }
    }

    pub fn path_for(&self, system: &str, user: &str) -> PathBuf {
        self.dir.join(format!("{}.txt", request_key(system, user)))
    }
}

impl<F: GenClient> GenClient for StubDirClient<F> {
    fn generate(&self, system: &str, user: &str) -> Result<String> {
        let path = self.path_for(system, user);
        match fs::read_to_string(&path) {
            Ok(text) => Ok(text.trim_end_matches('\n').to_string()),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => match &self.fallback {
                Some(f) => f.generate(system, user),
                None => Err(KoreError::Client(format!("no canned response at {}", path.display()))),
            },
            Err(e) => Err(KoreError::io(&path, e)),
        }
    }
}

/// Stores a canned response where [`StubDirClient`] will find it.
pub fn write_canned(dir: &Path, system: &str, user: &str, response: &str) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| KoreError::io(dir, e))?;
    let path = dir.join(format!("{}.txt", request_key(system, user)));
    fs::write(&path, response).map_err(|e| KoreError::io(&path, e))?;
    Ok(path)
}

/// Returns queued responses per prompt kind, in order. An exhausted queue or an
/// `Err` entry is a client failure.
#[derive(Default)]
pub struct ScriptedClient {
    queues: RefCell<Vec<(PromptKind, VecDeque<std::result::Result<String, String>>)>>,
}

impl ScriptedClient {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(self, kind: PromptKind, response: impl Into<String>) -> Self {
        self.enqueue(kind, Ok(response.into()));
        self
    }

    pub fn push_failure(self, kind: PromptKind, reason: impl Into<String>) -> Self {
        self.enqueue(kind, Err(reason.into()));
        self
    }

    fn enqueue(&self, kind: PromptKind, entry: std::result::Result<String, String>) {
        let mut q = self.queues.borrow_mut();
        match q.iter_mut().find(|(k, _)| *k == kind) {
            Some((_, v)) => v.push_back(entry),
            None => q.push((kind, VecDeque::from([entry]))),
        }
    }
}

impl GenClient for ScriptedClient {
    fn generate(&self, system: &str, _user: &str) -> Result<String> {
        let kind = PromptKind::of_system_prompt(system)
            .ok_or_else(|| KoreError::Client("unrecognised system prompt".into()))?;
        let mut q = self.queues.borrow_mut();
        let next = q
            .iter_mut()
            .find(|(k, _)| *k == kind)
            .and_then(|(_, v)| v.pop_front());
        match next {
            Some(Ok(s)) => Ok(s),
            Some(Err(reason)) => Err(KoreError::Client(reason)),
            None => Err(KoreError::Client(format!("script exhausted for {kind:?}"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::augment::templates::{QUESTION_GEN_SYSTEM, SUMMARY_SYSTEM};

    #[test]
    fn stub_is_a_function_of_the_request() {
        let s = DeterministicStub::default();
        let a = s.generate(SUMMARY_SYSTEM[0], "Knowledge: x").unwrap();
        assert_eq!(a, s.generate(SUMMARY_SYSTEM[0], "Knowledge: x").unwrap());
        assert_ne!(a, s.generate(SUMMARY_SYSTEM[0], "Knowledge: y").unwrap());
        assert!(s.generate("unknown", "x").is_err());
        let qs = s.generate(QUESTION_GEN_SYSTEM[1], "News: z").unwrap();
        assert!((6..=8).contains(&qs.lines().count()));
    }

    #[test]
    fn stub_dir_reads_and_falls_back() {
        let dir = tempfile::tempdir().unwrap();
        write_canned(dir.path(), SUMMARY_SYSTEM[0], "u", "canned\n").unwrap();
        let strict = StubDirClient::new(dir.path());
        assert_eq!(strict.generate(SUMMARY_SYSTEM[0], "u").unwrap(), "canned");
        assert!(matches!(strict.generate(SUMMARY_SYSTEM[0], "v"), Err(KoreError::Client(_))));
        let lenient = StubDirClient::with_fallback(dir.path(), DeterministicStub::default());
        assert!(lenient.generate(SUMMARY_SYSTEM[0], "v").is_ok());
    }

    #[test]
    fn request_key_separates_fields() {
        assert_ne!(request_key("ab", "c"), request_key("a", "bc"));
        assert_eq!(request_key("a", "b").len(), 64);
    }
}
