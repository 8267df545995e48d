//! Turns knowledge items into instruction samples: a multi-round dialogue,
//! a visual recognition question, an image caption and short-answer VQA.
//!
//! Text comes from a [`GenClient`]. Image retrieval is replaced by candidate
//! embeddings carried on each item.

pub mod client;
pub mod templates;

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use client::{DeterministicStub, GenClient, ScriptedClient, StubDirClient};
use templates::*;

use crate::error::{KoreError, Result};

pub const MAX_DIALOGUE_QUESTIONS: usize = 10;
pub const MAX_QUADRUPLETS: usize = 5;
pub const MAX_ANSWER_TOKENS: usize = 8;
pub const SUMMARY_WORD_LIMIT: usize = 25;
/// Candidates at least this similar to the original count as the same image.
pub const IDENTICAL_SIMILARITY: f64 = 1.0 - 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KnowledgeKind {
    News,
    Entity,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CandidateImage {
    pub id: String,
    pub embedding: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KnowledgeItem {
    pub id: String,
    pub kind: KnowledgeKind,
    pub fine_type: String,
    pub title_or_name: String,
    pub text: String,
    #[serde(default)]
    pub image_refs: Vec<String>,
    #[serde(default)]
    pub candidate_images: Vec<CandidateImage>,
    /// Embedding of `image_refs[0]`, compared against the candidates.
    #[serde(default)]
    pub original_embedding: Vec<f64>,
}

impl KnowledgeItem {
    pub fn validate(&self) -> Result<()> {
        if self.text.trim().is_empty() {
            return Err(KoreError::Contract(format!("item {} has empty text", self.id)));
        }
        let mut dims = self
            .candidate_images
            .iter()
            .map(|c| c.embedding.len())
            .chain((!self.original_embedding.is_empty()).then_some(self.original_embedding.len()));
        if let Some(first) = dims.next() {
            if dims.any(|d| d != first) {
                return Err(KoreError::Contract(format!(
                    "item {} has embeddings of different dimensions",
                    self.id
                )));
            }
        }
        Ok(())
    }

    /// The title or name bound to whichever placeholder this kind uses.
    fn vars(&self) -> [(&'static str, &str); 3] {
        let name_key = match self.kind {
            KnowledgeKind::News => "title",
            KnowledgeKind::Entity => "entity_name",
        };
        [("type", &self.fine_type), (name_key, &self.title_or_name), ("summary", "")]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Dialogue,
    Recognition,
    Caption,
    Vqa,
}

impl Task {
    pub const ALL: [Task; 4] = [Task::Dialogue, Task::Recognition, Task::Caption, Task::Vqa];

    pub fn as_str(self) -> &'static str {
        match self {
            Task::Dialogue => "dialogue",
            Task::Recognition => "recognition",
            Task::Caption => "caption",
            Task::Vqa => "vqa",
        }
    }
}

impl std::str::FromStr for Task {
    type Err = KoreError;

    fn from_str(s: &str) -> Result<Self> {
        Task::ALL
            .into_iter()
            .find(|t| t.as_str() == s.trim())
            .ok_or_else(|| KoreError::Contract(format!("unknown task {s:?}")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Human,
    Gpt,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Turn {
    pub from: Role,
    pub value: String,
}

impl Turn {
    fn human(value: impl Into<String>) -> Self {
        Turn { from: Role::Human, value: value.into() }
    }

    fn gpt(value: impl Into<String>) -> Self {
        Turn { from: Role::Gpt, value: value.into() }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AugmentedSample {
    pub id: String,
    pub task: Task,
    pub image: String,
    pub turns: Vec<Turn>,
    pub instruction_suffix: String,
}

impl AugmentedSample {
    pub fn rounds(&self) -> usize {
        self.turns.len() / 2
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Quadruplet {
    #[serde(alias = "question")]
    pub q: String,
    #[serde(alias = "answer")]
    pub a: String,
    #[serde(alias = "subject")]
    pub s: String,
    #[serde(alias = "hypernym")]
    pub h: String,
}

impl Quadruplet {
    /// Why this quadruplet violates the short-answer and distinct-subject rules.
    pub fn violation(&self) -> Option<String> {
        if [&self.q, &self.a, &self.s, &self.h].iter().any(|f| f.trim().is_empty()) {
            return Some("empty field".into());
        }
        let tokens = self.a.split_whitespace().count();
        if tokens > MAX_ANSWER_TOKENS {
            return Some(format!("answer has {tokens} tokens"));
        }
        if self.s.trim().eq_ignore_ascii_case(self.a.trim()) {
            return Some("subject equals the answer".into());
        }
        None
    }
}

/// Seeded RNG for one `(item, task)` pair, independent of corpus order.
pub fn item_rng(seed: u64, item_id: &str, task: Task) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(item_id.as_bytes());
    h.update([0u8]);
    h.update(task.as_str().as_bytes());
    let digest: [u8; 32] = h.finalize().into();
    ChaCha8Rng::from_seed(digest)
}

fn pick<'a>(bank: &[&'a str], rng: &mut ChaCha8Rng) -> &'a str {
    bank[rng.random_range(0..bank.len())]
}

fn banks(kind: KnowledgeKind) -> (&'static [&'static str; 5], &'static [&'static str; 5]) {
    match kind {
        KnowledgeKind::News => (&HEURISTIC_NEWS_Q, &HEURISTIC_NEWS_A),
        KnowledgeKind::Entity => (&HEURISTIC_ENTITY_Q, &HEURISTIC_ENTITY_A),
    }
}

/// Splits a question list, dropping blank lines and leading enumerations
/// such as `1.`, `2)`, `-` or `Q3:`.
pub fn parse_questions(text: &str) -> Vec<String> {
    text.lines()
        .map(|l| {
            let l = l.trim();
            let l = l.strip_prefix(['-', '*', '•']).unwrap_or(l).trim_start();
            let body = l.strip_prefix(['Q', 'q']).unwrap_or(l);
            let digits = body.len() - body.trim_start_matches(|c: char| c.is_ascii_digit()).len();
            if digits > 0 {
                if let Some(rest) = body[digits..].strip_prefix(['.', ')', ':']) {
                    return rest.trim().to_string();
                }
            }
            l.to_string()
        })
        .filter(|l| !l.is_empty())
        .collect()
}

/// Seeded heuristic first round, then up to ten generated questions each
/// answered by a second client call.
pub fn build_dialogue(item: &KnowledgeItem, client: &dyn GenClient, rng: &mut ChaCha8Rng) -> Result<AugmentedSample> {
    item.validate()?;
    let image = item
        .image_refs
        .first()
        .ok_or_else(|| KoreError::Contract(format!("item {} has no original image", item.id)))?;
    let vars = item.vars();
    let (qb, ab) = banks(item.kind);
    let mut turns = vec![
        Turn::human(render(pick(qb, rng), &vars)?),
        Turn::gpt(render(pick(ab, rng), &vars)?),
    ];
    let system = pick(&QUESTION_GEN_SYSTEM, rng);
    let user = render(pick(&QUESTION_GEN_USER, rng), &[("news", &item.text)])?;
    let questions = parse_questions(&client.generate(system, &user)?);
    for q in questions.into_iter().take(MAX_DIALOGUE_QUESTIONS) {
        let system = pick(&ANSWER_GEN_SYSTEM, rng);
        let user = render(pick(&ANSWER_GEN_USER, rng), &[("knowledge", &item.text), ("question", &q)])?;
        let answer = client.generate(system, &user)?;
        let answer = answer.trim();
        if answer.is_empty() {
            return Err(KoreError::Client(format!("empty answer for question {q:?}")));
        }
        turns.push(Turn::human(q));
        turns.push(Turn::gpt(answer));
    }
    Ok(AugmentedSample {
        id: format!("{}-dialogue", item.id),
        task: Task::Dialogue,
        image: image.clone(),
        turns,
        instruction_suffix: String::new(),
    })
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ImageSelection {
    pub recognition: String,
    pub caption: String,
    pub similarities: [f64; 2],
}

/// The two candidates most similar to the original, excluding identical ones.
/// The first goes to recognition, the second to caption.
pub fn select_images(item: &KnowledgeItem) -> Result<ImageSelection> {
    item.validate()?;
    if item.original_embedding.is_empty() {
        return Err(KoreError::Contract(format!("item {} has no original embedding", item.id)));
    }
    let mut scored: Vec<(usize, f64)> = item
        .candidate_images
        .iter()
        .enumerate()
        .map(|(i, c)| (i, cosine(&item.original_embedding, &c.embedding)))
        .filter(|&(_, s)| s < IDENTICAL_SIMILARITY)
        .collect();
    if scored.len() < 2 {
        return Err(KoreError::Contract(format!(
            "item {} has {} non-identical candidates, need 2",
            item.id,
            scored.len()
        )));
    }
    // Stable sort keeps the lower index first on equal similarity.
    scored.sort_by(|x, y| y.1.total_cmp(&x.1));
    let id = |k: usize| item.candidate_images[scored[k].0].id.clone();
    Ok(ImageSelection {
        recognition: id(0),
        caption: id(1),
        similarities: [scored[0].1, scored[1].1],
    })
}

pub fn build_recognition(item: &KnowledgeItem, image: &str, rng: &mut ChaCha8Rng) -> Result<AugmentedSample> {
    let bank = match item.kind {
        KnowledgeKind::News => &RECOGNITION_NEWS,
        KnowledgeKind::Entity => &RECOGNITION_ENTITY,
    };
    let question = render(pick(bank, rng), &item.vars())?;
    Ok(AugmentedSample {
        id: format!("{}-recognition", item.id),
        task: Task::Recognition,
        image: image.to_string(),
        turns: vec![Turn::human(question), Turn::gpt(RECOGNITION_ANSWER)],
        instruction_suffix: RECOGNITION_SUFFIX.to_string(),
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct CaptionOutcome {
    pub sample: AugmentedSample,
    /// Set when the summary runs past the requested word limit.
    pub warning: Option<String>,
}

pub fn build_caption(
    item: &KnowledgeItem,
    client: &dyn GenClient,
    image: &str,
    rng: &mut ChaCha8Rng,
) -> Result<CaptionOutcome> {
    item.validate()?;
    let (qbank, answer_tpl) = match item.kind {
        KnowledgeKind::News => (&CAPTION_NEWS_Q, CAPTION_NEWS_A),
        KnowledgeKind::Entity => (&CAPTION_ENTITY_Q, CAPTION_ENTITY_A),
    };
    let question = render(pick(qbank, rng), &item.vars())?;
    let system = pick(&SUMMARY_SYSTEM, rng);
    let user = render(pick(&SUMMARY_USER, rng), &[("knowledge", &item.text)])?;
    let summary = client.generate(system, &user)?;
    let summary = summary.trim();
    if summary.is_empty() {
        return Err(KoreError::Client("empty summary".into()));
    }
    let words = summary.split_whitespace().count();
    let warning = (words > SUMMARY_WORD_LIMIT).then(|| {
        let msg = format!("item {}: summary has {words} words (limit {SUMMARY_WORD_LIMIT})", item.id);
        log::warn!("{msg}");
        msg
    });
    let mut vars = item.vars();
    vars[2].1 = summary;
    let answer = render(answer_tpl, &vars)?;
    Ok(CaptionOutcome {
        sample: AugmentedSample {
            id: format!("{}-caption", item.id),
            task: Task::Caption,
            image: image.to_string(),
            turns: vec![Turn::human(question), Turn::gpt(answer)],
            instruction_suffix: CAPTION_SUFFIX.to_string(),
        },
        warning,
    })
}

/// Parses a JSON array of quadruplet objects, or one object per line.
/// Returns the parsed quadruplets and a reason for each rejected entry.
pub fn parse_quadruplets(text: &str) -> (Vec<Quadruplet>, Vec<String>) {
    let values: Vec<serde_json::Value> = match serde_json::from_str::<serde_json::Value>(text.trim()) {
        Ok(serde_json::Value::Array(items)) => items,
        Ok(v) => vec![v],
        Err(_) => {
            let mut out = Vec::new();
            let mut rejected = Vec::new();
            for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
                match serde_json::from_str(line) {
                    Ok(v) => out.push(v),
                    Err(e) => rejected.push(format!("unparseable quadruplet: {e}")),
                }
            }
            let (ok, bad) = from_values(out);
            return (ok, rejected.into_iter().chain(bad).collect());
        }
    };
    from_values(values)
}

fn from_values(values: Vec<serde_json::Value>) -> (Vec<Quadruplet>, Vec<String>) {
    let mut ok = Vec::new();
    let mut rejected = Vec::new();
    for v in values {
        match serde_json::from_value::<Quadruplet>(v) {
            Ok(q) => ok.push(q),
            Err(e) => rejected.push(format!("malformed quadruplet: {e}")),
        }
    }
    (ok, rejected)
}

#[derive(Clone, Debug, PartialEq)]
pub struct VqaOutcome {
    pub samples: Vec<AugmentedSample>,
    pub dropped: Vec<String>,
}

pub fn build_vqa(item: &KnowledgeItem, client: &dyn GenClient, rng: &mut ChaCha8Rng) -> Result<VqaOutcome> {
    item.validate()?;
    let system = pick(&QUADRUPLET_SYSTEM, rng);
    let user = render(pick(&QUADRUPLET_USER, rng), &[("knowledge", &item.text)])?;
    let (parsed, mut dropped) = parse_quadruplets(&client.generate(system, &user)?);
    let mut kept = Vec::new();
    for q in parsed {
        match q.violation() {
            Some(why) => dropped.push(format!("{why}: {:?}", q.q)),
            None => kept.push(q),
        }
    }
    if kept.len() > MAX_QUADRUPLETS {
        dropped.push(format!("{} quadruplets over the cap of {MAX_QUADRUPLETS}", kept.len() - MAX_QUADRUPLETS));
        kept.truncate(MAX_QUADRUPLETS);
    }
    for d in &dropped {
        log::info!("item {}: dropped {d}", item.id);
    }
    let samples = kept
        .into_iter()
        .enumerate()
        .map(|(i, q)| AugmentedSample {
            id: format!("{}-vqa-{i}", item.id),
            task: Task::Vqa,
            image: format!("{} {}", q.s.trim(), q.h.trim()),
            turns: vec![Turn::human(format!("{} {VQA_SUFFIX}", q.q.trim())), Turn::gpt(q.a.trim())],
            instruction_suffix: VQA_SUFFIX.to_string(),
        })
        .collect();
    Ok(VqaOutcome { samples, dropped })
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct SkipRecord {
    pub item_id: String,
    pub task: Task,
    pub reason: String,
}

#[derive(Clone, Debug, Default)]
pub struct AugmentOutput {
    /// Sorted by item id, then task, then quadruplet index.
    pub samples: Vec<AugmentedSample>,
    pub skipped: Vec<SkipRecord>,
    pub warnings: Vec<String>,
}

impl AugmentOutput {
    pub fn task_counts(&self) -> BTreeMap<Task, usize> {
        let mut counts = BTreeMap::new();
        for s in &self.samples {
            *counts.entry(s.task).or_insert(0) += 1;
        }
        counts
    }
}

/// Runs every task on every item. Failures skip that task for that item and
/// are recorded; the run continues.
pub fn augment_corpus(items: &[KnowledgeItem], client: &dyn GenClient, seed: u64) -> Result<AugmentOutput> {
    augment_tasks(items, client, seed, &Task::ALL)
}

/// [`augment_corpus`] restricted to `tasks`.
pub fn augment_tasks(items: &[KnowledgeItem], client: &dyn GenClient, seed: u64, tasks: &[Task]) -> Result<AugmentOutput> {
    let on = |t: Task| tasks.contains(&t);
    let mut order: Vec<&KnowledgeItem> = items.iter().collect();
    order.sort_by(|a, b| a.id.cmp(&b.id));
    if let Some(w) = order.windows(2).find(|w| w[0].id == w[1].id) {
        return Err(KoreError::Contract(format!("duplicate knowledge item id {}", w[0].id)));
    }
    let mut out = AugmentOutput::default();
    for item in order {
        let mut skip = |task: Task, e: &KoreError| {
            log::warn!("item {}: skipping {}: {e}", item.id, task.as_str());
            out.skipped.push(SkipRecord {
                item_id: item.id.clone(),
                task,
                reason: e.to_string(),
            });
        };
        let mut samples = Vec::new();
        let mut warnings = Vec::new();
        if on(Task::Dialogue) {
            match build_dialogue(item, client, &mut item_rng(seed, &item.id, Task::Dialogue)) {
                Ok(s) => samples.push(s),
                Err(e) => skip(Task::Dialogue, &e),
            }
        }
        if on(Task::Recognition) || on(Task::Caption) {
            match select_images(item) {
                Ok(sel) => {
                    if on(Task::Recognition) {
                        let mut rng = item_rng(seed, &item.id, Task::Recognition);
                        match build_recognition(item, &sel.recognition, &mut rng) {
                            Ok(s) => samples.push(s),
                            Err(e) => skip(Task::Recognition, &e),
                        }
                    }
                    if on(Task::Caption) {
                        match build_caption(item, client, &sel.caption, &mut item_rng(seed, &item.id, Task::Caption)) {
                            Ok(c) => {
                                samples.push(c.sample);
                                warnings.extend(c.warning);
                            }
                            Err(e) => skip(Task::Caption, &e),
                        }
                    }
                }
                Err(e) => {
                    for t in [Task::Recognition, Task::Caption].into_iter().filter(|&t| on(t)) {
                        skip(t, &e);
                    }
                }
            }
        }
        if on(Task::Vqa) {
            match build_vqa(item, client, &mut item_rng(seed, &item.id, Task::Vqa)) {
                Ok(v) => samples.extend(v.samples),
                Err(e) => skip(Task::Vqa, &e),
            }
        }
        out.samples.extend(samples);
        out.warnings.extend(warnings);
    }
    Ok(out)
}

#[derive(Serialize)]
struct EmittedSample<'a> {
    id: &'a str,
    task: &'static str,
    image: &'a str,
    conversations: &'a [Turn],
}

pub fn sample_json(s: &AugmentedSample) -> Result<String> {
    Ok(serde_json::to_string(&EmittedSample {
        id: &s.id,
        task: s.task.as_str(),
        image: &s.image,
        conversations: &s.turns,
    })?)
}

/// Writes one JSON object per line. On an I/O failure the error message carries
/// the number of lines already written.
pub fn emit_dataset(samples: &[AugmentedSample], path: &Path) -> Result<usize> {
    let file = fs::File::create(path).map_err(|e| KoreError::io(path, e))?;
    let mut w = BufWriter::new(file);
    for (n, s) in samples.iter().enumerate() {
        let line = sample_json(s)?;
        writeln!(w, "{line}").map_err(|e| {
            KoreError::io(path, std::io::Error::new(e.kind(), format!("after {n} samples: {e}")))
        })?;
    }
    w.flush().map_err(|e| KoreError::io(path, e))?;
    Ok(samples.len())
}

pub fn read_knowledge(path: &Path) -> Result<Vec<KnowledgeItem>> {
    let file = fs::File::open(path).map_err(|e| KoreError::io(path, e))?;
    let mut items = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| KoreError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let item: KnowledgeItem = serde_json::from_str(&line)
            .map_err(|e| KoreError::format(path, format!("line {}: {e}", i + 1)))?;
        item.validate()?;
        items.push(item);
    }
    Ok(items)
}

pub fn write_knowledge(path: &Path, items: &[KnowledgeItem]) -> Result<()> {
    let mut out = String::new();
    for item in items {
        out.push_str(&serde_json::to_string(item)?);
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| KoreError::io(path, e))
}

const DEMO_NEWS_TYPES: [&str; 4] = ["politics", "sports", "science", "business"];
const DEMO_ENTITY_TYPES: [&str; 4] = ["film", "person", "building", "organization"];
const DEMO_EMBED_DIM: usize = 8;

/// Synthetic corpus alternating news and entity items. Each item has four
/// candidates: one identical to the original and three perturbed copies.
pub fn demo_corpus(n: usize, seed: u64) -> Vec<KnowledgeItem> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let id = format!("k{i:04}");
            let original: Vec<f64> = (0..DEMO_EMBED_DIM).map(|_| rng.random_range(-1.0..1.0)).collect();
            let mut candidates = vec![CandidateImage {
                id: format!("{id}-c0"),
                embedding: original.clone(),
            }];
            for c in 1..4 {
                let noise = 0.2 * c as f64;
                let embedding = original.iter().map(|v| v + noise * rng.random_range(-1.0..1.0)).collect();
                candidates.push(CandidateImage { id: format!("{id}-c{c}"), embedding });
            }
            let (kind, fine_type, title, text) = if i % 2 == 0 {
                let t = DEMO_NEWS_TYPES[(i / 2) % DEMO_NEWS_TYPES.len()];
                (
                    KnowledgeKind::News,
                    t,
                    format!("Council approves plan number {i}"),
                    format!("On day {i} the regional council approved plan number {i} after a long {t} debate."),
                )
            } else {
                let t = DEMO_ENTITY_TYPES[(i / 2) % DEMO_ENTITY_TYPES.len()];
                (
                    KnowledgeKind::Entity,
                    t,
                    format!("Entity {i}"),
                    format!("Entity {i} is a {t} first recorded in archive volume {i}."),
                )
            };
            KnowledgeItem {
                id: id.clone(),
                kind,
                fine_type: fine_type.to_string(),
                title_or_name: title,
                text,
                image_refs: vec![format!("{id}-orig")],
                candidate_images: candidates,
                original_embedding: original,
            }
        })
        .collect()
}
