//! Open-domain QA metrics: cover exact match (gold contained in the
//! prediction) and word-set F1.
//!
//! Normalization lowercases, splits on whitespace and trims punctuation from
//! both ends of each token. [`Normalization::Raw`] keeps tokens verbatim.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{KoreError, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Normalization {
    #[default]
    Standard,
    Raw,
}

fn is_punct(c: char) -> bool {
    c.is_ascii_punctuation()
        || matches!(
            c,
            '\u{2018}' | '\u{2019}' | '\u{201C}' | '\u{201D}' | '\u{2013}' | '\u{2014}' | '\u{2026}' | '\u{00AB}'
                | '\u{00BB}' | '\u{00BF}' | '\u{00A1}' | '\u{3001}' | '\u{3002}' | '\u{FF0C}' | '\u{FF01}'
                | '\u{FF1F}'
        )
}

pub fn tokens(text: &str, norm: Normalization) -> Vec<String> {
    match norm {
        Normalization::Raw => text.split_whitespace().map(str::to_string).collect(),
        Normalization::Standard => text
            .split_whitespace()
            .map(|t| t.trim_matches(is_punct).to_lowercase())
            .filter(|t| !t.is_empty())
            .collect(),
    }
}

fn gold_tokens(gold: &str, norm: Normalization) -> Result<Vec<String>> {
    let g = tokens(gold, norm);
    if g.is_empty() {
        return Err(KoreError::Contract(format!("gold answer {gold:?} has no tokens")));
    }
    Ok(g)
}

/// 1 when the normalized gold string occurs inside the normalized prediction.
pub fn cem(prediction: &str, gold: &str, norm: Normalization) -> Result<u8> {
    let g = gold_tokens(gold, norm)?.join(" ");
    let p = tokens(prediction, norm).join(" ");
    Ok(u8::from(p.contains(&g)))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricResult {
    pub cem: u8,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Word overlap with each distinct word counted once.
pub fn f1(prediction: &str, gold: &str, norm: Normalization) -> Result<MetricResult> {
    let g: BTreeSet<String> = gold_tokens(gold, norm)?.into_iter().collect();
    let p: BTreeSet<String> = tokens(prediction, norm).into_iter().collect();
    let cem = cem(prediction, gold, norm)?;
    if p.is_empty() {
        return Ok(MetricResult { cem, precision: 0.0, recall: 0.0, f1: 0.0 });
    }
    let u = p.intersection(&g).count() as f64;
    let precision = u / p.len() as f64;
    let recall = u / g.len() as f64;
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    Ok(MetricResult { cem, precision, recall, f1 })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub n: usize,
    /// Percentages rounded to two decimals.
    pub cem: f64,
    pub f1: f64,
    pub precision: f64,
    pub recall: f64,
    /// Unrounded means in `[0, 1]`.
    pub raw: RawMeans,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RawMeans {
    pub cem: f64,
    pub f1: f64,
    pub precision: f64,
    pub recall: f64,
}

fn pct(x: f64) -> f64 {
    (x * 10000.0).round() / 100.0
}

pub fn evaluate<P: AsRef<str>, G: AsRef<str>>(pairs: &[(P, G)], norm: Normalization) -> Result<Aggregate> {
    if pairs.is_empty() {
        return Err(KoreError::Contract("cannot evaluate an empty dataset".into()));
    }
    let mut sums = [0.0f64; 4];
    for (p, g) in pairs {
        let m = f1(p.as_ref(), g.as_ref(), norm)?;
        sums[0] += f64::from(m.cem);
        sums[1] += m.f1;
        sums[2] += m.precision;
        sums[3] += m.recall;
    }
    let n = pairs.len() as f64;
    let raw = RawMeans {
        cem: sums[0] / n,
        f1: sums[1] / n,
        precision: sums[2] / n,
        recall: sums[3] / n,
    };
    Ok(Aggregate {
        n: pairs.len(),
        cem: pct(raw.cem),
        f1: pct(raw.f1),
        precision: pct(raw.precision),
        recall: pct(raw.recall),
        raw,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TextRecord {
    pub id: String,
    pub text: String,
}

pub fn read_text_records(path: &Path) -> Result<BTreeMap<String, String>> {
    let file = fs::File::open(path).map_err(|e| KoreError::io(path, e))?;
    let mut out = BTreeMap::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| KoreError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let r: TextRecord = serde_json::from_str(&line)
            .map_err(|e| KoreError::format(path, format!("line {}: {e}", i + 1)))?;
        if out.insert(r.id.clone(), r.text).is_some() {
            return Err(KoreError::format(path, format!("duplicate id {}", r.id)));
        }
    }
    Ok(out)
}

/// Pairs predictions with gold answers by id. Every gold id needs a prediction.
pub fn join_by_id(
    pred: &BTreeMap<String, String>,
    gold: &BTreeMap<String, String>,
) -> Result<Vec<(String, String)>> {
    gold.iter()
        .map(|(id, g)| {
            pred.get(id)
                .map(|p| (p.clone(), g.clone()))
                .ok_or_else(|| KoreError::Contract(format!("no prediction for id {id}")))
        })
        .collect()
}
