//! Three-zone decision rule and the retrieval kill switch.
//!
//! A candidate context is scored by the early-window HFER of the verifier's
//! trace on `"Context: <c> Statement: <s(q)>"`. Scores at or above `tau_high`
//! are kept as supporting evidence; when nothing is kept and every score is at
//! or below `tau_low` the episode abstains. Every gate step appends one
//! [`AuditRecord`].

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use crate::diag::{summarize, DiagConfig};
use crate::trace::{ActivationTrace, Manifest, ManifestEntry};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub tau_low: f64,
    pub tau_high: f64,
    #[serde(default)]
    pub model_id: String,
}

impl Thresholds {
    pub fn new(tau_low: f64, tau_high: f64, model_id: impl Into<String>) -> Result<Self> {
        let t = Self {
            tau_low,
            tau_high,
            model_id: model_id.into(),
        };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0 <= self.tau_low && self.tau_low < self.tau_high && self.tau_high <= 1.0) {
            return Err(Error::Validation(format!(
                "thresholds need 0 <= tau_low < tau_high <= 1, got ({}, {})",
                self.tau_low, self.tau_high
            )));
        }
        Ok(())
    }

    /// Loads either a bare thresholds object or a calibration result file
    /// (anything with `tau_low`, `tau_high` and optionally `model_id`).
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let t: Thresholds = serde_json::from_str(&text)?;
        t.validate()?;
        Ok(t)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Support {
    Contradicted,
    Uncertain,
    Supported,
}

impl Support {
    pub fn as_str(self) -> &'static str {
        match self {
            Support::Contradicted => "CONTRADICTED",
            Support::Uncertain => "UNCERTAIN",
            Support::Supported => "SUPPORTED",
        }
    }
}

impl std::fmt::Display for Support {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub support: Support,
    pub h: f64,
}

/// Boundary values fall in the decisive zones.
pub fn classify(h: f64, thresholds: &Thresholds) -> Result<Verdict> {
    if !h.is_finite() {
        return Err(Error::Input(format!("score {h} is not finite")));
    }
    let support = if h >= thresholds.tau_high {
        Support::Supported
    } else if h <= thresholds.tau_low {
        Support::Contradicted
    } else {
        Support::Uncertain
    };
    Ok(Verdict { support, h })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Decision {
    Answer,
    Abstain,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateOutcome {
    pub decision: Decision,
    /// 0-based indices of scores at or above `tau_high`.
    pub kept: Vec<usize>,
    pub scores: Vec<f64>,
    pub kill_switch_fired: bool,
    /// ANSWER with nothing kept: the best score sat in the uncertain band.
    pub uncertain_only: bool,
}

pub fn gate_step(scores: &[f64], thresholds: &Thresholds) -> Result<GateOutcome> {
    if scores.is_empty() {
        return Err(Error::Input("gate_step needs at least one score".into()));
    }
    for (i, h) in scores.iter().enumerate() {
        if !h.is_finite() {
            return Err(Error::Input(format!("score {i} is not finite ({h})")));
        }
    }
    let kept: Vec<usize> = (0..scores.len())
        .filter(|&i| scores[i] >= thresholds.tau_high)
        .collect();
    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let abstain = kept.is_empty() && max <= thresholds.tau_low;
    Ok(GateOutcome {
        decision: if abstain { Decision::Abstain } else { Decision::Answer },
        uncertain_only: kept.is_empty() && !abstain,
        kept,
        scores: scores.to_vec(),
        kill_switch_fired: abstain,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Question {
    pub id: String,
    pub text: String,
}

impl Question {
    pub fn new(id: impl Into<String>, text: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            text: text.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Context {
    pub id: String,
    pub text: String,
}

/// What the verifier model is asked to read for one candidate.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Prompt {
    pub question_id: String,
    pub ctx_id: String,
    pub text: String,
}

pub fn prompt_text(context: &str, statement: &str) -> String {
    format!("Context: {context} Statement: {statement}")
}

pub trait Retriever {
    /// Candidates for `question`. `batch` 0 is the first retrieval; higher
    /// batches are the next-best alternatives used when backtracking.
    fn retrieve(&self, question: &Question, batch: usize) -> Result<Vec<Context>>;
}

pub trait VerifierModel {
    fn model_id(&self) -> &str;
    fn trace(&self, prompt: &Prompt) -> Result<ActivationTrace>;
    fn generate(&self, question: &Question, contexts: &[Context]) -> Result<String>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateRecord {
    pub ctx_id: String,
    pub h: Option<f64>,
    pub verdict: Option<Support>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditRecord {
    pub ts: String,
    pub question_id: String,
    pub candidates: Vec<CandidateRecord>,
    pub decision: Decision,
    pub kill_switch: bool,
    pub tau_low: f64,
    pub tau_high: f64,
    pub model_id: String,
    #[serde(default)]
    pub uncertain_only: bool,
    #[serde(default)]
    pub batch: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl AuditRecord {
    /// The record with its timestamp blanked, for replay comparisons.
    pub fn without_timestamp(&self) -> Self {
        Self {
            ts: String::new(),
            ..self.clone()
        }
    }
}

pub trait AuditSink: Send + Sync {
    fn append(&self, record: &AuditRecord) -> Result<()>;
}

/// Newline-delimited JSON, one `write_all` per record on an append-mode file.
#[derive(Debug)]
pub struct JsonlAudit {
    path: PathBuf,
    file: Mutex<File>,
}

impl JsonlAudit {
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let file = OpenOptions::new().create(true).append(true).open(&path)?;
        Ok(Self {
            path,
            file: Mutex::new(file),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}

impl AuditSink for JsonlAudit {
    fn append(&self, record: &AuditRecord) -> Result<()> {
        let mut line = serde_json::to_vec(record)?;
        line.push(b'\n');
        let mut file = self.file.lock().unwrap_or_else(|p| p.into_inner());
        file.write_all(&line)?;
        file.flush()?;
        Ok(())
    }
}

#[derive(Debug, Default)]
pub struct MemoryAudit {
    records: Mutex<Vec<AuditRecord>>,
}

impl MemoryAudit {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn records(&self) -> Vec<AuditRecord> {
        self.records.lock().unwrap_or_else(|p| p.into_inner()).clone()
    }
}

impl AuditSink for MemoryAudit {
    fn append(&self, record: &AuditRecord) -> Result<()> {
        self.records
            .lock()
            .unwrap_or_else(|p| p.into_inner())
            .push(record.clone());
        Ok(())
    }
}

pub fn read_audit(path: impl AsRef<Path>) -> Result<Vec<AuditRecord>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for line in reader.lines() {
        let line = line?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}

/// Re-derives every verdict and decision from the logged scores and
/// thresholds. Returns descriptions of records that do not reproduce.
pub fn replay_audit(records: &[AuditRecord]) -> Result<Vec<String>> {
    let mut mismatches = Vec::new();
    for (n, rec) in records.iter().enumerate() {
        let thresholds = Thresholds::new(rec.tau_low, rec.tau_high, rec.model_id.clone())?;
        for c in &rec.candidates {
            if let Some(h) = c.h {
                let v = classify(h, &thresholds)?.support;
                if c.verdict != Some(v) {
                    mismatches.push(format!(
                        "record {n} ({}): ctx {} logged {:?}, replay gives {v}",
                        rec.question_id, c.ctx_id, c.verdict
                    ));
                }
            }
        }
        let scores: Vec<f64> = rec.candidates.iter().filter_map(|c| c.h).collect();
        let expected = if scores.is_empty() {
            Decision::Abstain
        } else {
            gate_step(&scores, &thresholds)?.decision
        };
        if expected != rec.decision {
            mismatches.push(format!(
                "record {n} ({}): logged {:?}, replay gives {expected:?}",
                rec.question_id, rec.decision
            ));
        }
    }
    Ok(mismatches)
}

#[derive(Debug, Clone, PartialEq)]
pub enum EpisodeResult {
    Answer {
        text: String,
        kept: Vec<String>,
        uncertain_only: bool,
    },
    Abstain,
}

impl EpisodeResult {
    pub fn is_abstain(&self) -> bool {
        matches!(self, EpisodeResult::Abstain)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChainPolicy {
    Halt,
    Backtrack,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepReport {
    pub question_id: String,
    pub result: EpisodeResult,
    pub backtracked: bool,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ChainReport {
    pub steps: Vec<StepReport>,
    pub answers: usize,
    /// Steps where the kill switch fired, counting abstentions that a
    /// backtrack later recovered from.
    pub kills: usize,
    pub backtracks: usize,
    /// 0-based index of the step the chain stopped at, if it stopped early
    /// or ended on an abstention.
    pub halted_at: Option<usize>,
}

impl ChainReport {
    pub fn completed(&self) -> bool {
        self.halted_at.is_none()
    }
}

pub type StatementFn = dyn Fn(&str) -> String + Send + Sync;

/// Scores retrieved contexts with a verifier model and gates generation.
pub struct KillSwitch<'a> {
    pub retriever: &'a dyn Retriever,
    pub model: &'a dyn VerifierModel,
    pub thresholds: Thresholds,
    pub config: DiagConfig,
    pub audit: Arc<dyn AuditSink>,
    statement: Box<StatementFn>,
    clock: Box<dyn Fn() -> String + Send + Sync>,
}

impl<'a> KillSwitch<'a> {
    pub fn new(
        retriever: &'a dyn Retriever,
        model: &'a dyn VerifierModel,
        thresholds: Thresholds,
        config: DiagConfig,
        audit: Arc<dyn AuditSink>,
    ) -> Self {
        Self {
            retriever,
            model,
            thresholds,
            config,
            audit,
            statement: Box::new(|q| q.to_string()),
            clock: Box::new(|| chrono::Utc::now().to_rfc3339()),
        }
    }

    /// Replaces the default identity statement extraction `s(q)`.
    pub fn with_statement(mut self, f: impl Fn(&str) -> String + Send + Sync + 'static) -> Self {
        self.statement = Box::new(f);
        self
    }

    /// Replaces the wall clock used for audit timestamps.
    pub fn with_clock(mut self, f: impl Fn() -> String + Send + Sync + 'static) -> Self {
        self.clock = Box::new(f);
        self
    }

    fn score(&self, question: &Question, context: &Context) -> Result<f64> {
        let prompt = Prompt {
            question_id: question.id.clone(),
            ctx_id: context.id.clone(),
            text: prompt_text(&context.text, &(self.statement)(&question.text)),
        };
        let trace = self.model.trace(&prompt)?;
        trace.validate()?;
        Ok(summarize(&trace, &self.config)?.hfer_mean)
    }

    pub fn run_episode(&self, question: &Question) -> Result<(EpisodeResult, AuditRecord)> {
        self.run_batch(question, 0)
    }

    /// One retrieve / score / gate / generate round on retrieval batch `batch`.
    pub fn run_batch(&self, question: &Question, batch: usize) -> Result<(EpisodeResult, AuditRecord)> {
        let contexts = self.retriever.retrieve(question, batch)?;
        if contexts.is_empty() {
            return Err(Error::Retriever(format!(
                "no candidates for question '{}' (batch {batch})",
                question.id
            )));
        }
        let mut warnings = Vec::new();
        if self.thresholds.model_id != self.model.model_id() {
            warnings.push(format!(
                "thresholds calibrated for '{}' but verifier is '{}'",
                self.thresholds.model_id,
                self.model.model_id()
            ));
        }
        let mut candidates = Vec::with_capacity(contexts.len());
        let mut scored = Vec::new();
        for (i, ctx) in contexts.iter().enumerate() {
            match self.score(question, ctx) {
                Ok(h) => {
                    let verdict = classify(h, &self.thresholds)?;
                    candidates.push(CandidateRecord {
                        ctx_id: ctx.id.clone(),
                        h: Some(h),
                        verdict: Some(verdict.support),
                        error: None,
                    });
                    scored.push((i, h));
                }
                Err(e) => {
                    log::warn!("question {} ctx {} excluded: {e}", question.id, ctx.id);
                    candidates.push(CandidateRecord {
                        ctx_id: ctx.id.clone(),
                        h: None,
                        verdict: None,
                        error: Some(e.to_string()),
                    });
                }
            }
        }
        let (decision, kept, uncertain_only) = if scored.is_empty() {
            warnings.push("no candidate could be scored".into());
            (Decision::Abstain, Vec::new(), false)
        } else {
            let scores: Vec<f64> = scored.iter().map(|s| s.1).collect();
            let outcome = gate_step(&scores, &self.thresholds)?;
            let kept: Vec<usize> = outcome.kept.iter().map(|&k| scored[k].0).collect();
            (outcome.decision, kept, outcome.uncertain_only)
        };
        let record = AuditRecord {
            ts: (self.clock)(),
            question_id: question.id.clone(),
            candidates,
            decision,
            kill_switch: decision == Decision::Abstain,
            tau_low: self.thresholds.tau_low,
            tau_high: self.thresholds.tau_high,
            model_id: self.model.model_id().to_string(),
            uncertain_only,
            batch,
            warnings,
        };
        self.audit.append(&record)?;
        let result = match decision {
            Decision::Abstain => EpisodeResult::Abstain,
            Decision::Answer => {
                let evidence: Vec<Context> = kept.iter().map(|&i| contexts[i].clone()).collect();
                EpisodeResult::Answer {
                    text: self.model.generate(question, &evidence)?,
                    kept: evidence.into_iter().map(|c| c.id).collect(),
                    uncertain_only,
                }
            }
        };
        Ok((result, record))
    }

    /// Runs the steps in order. `Halt` stops at the first abstention;
    /// `Backtrack` first retries that step once on retrieval batch 1.
    pub fn run_chain(&self, steps: &[Question], policy: ChainPolicy) -> Result<ChainReport> {
        if steps.is_empty() {
            return Err(Error::Input("chain needs at least one step".into()));
        }
        let mut report = ChainReport::default();
        for (n, q) in steps.iter().enumerate() {
            let (mut result, _) = self.run_episode(q)?;
            let mut backtracked = false;
            if result.is_abstain() {
                report.kills += 1;
                if policy == ChainPolicy::Backtrack {
                    match self.retriever.retrieve(q, 1) {
                        Ok(alt) if !alt.is_empty() => {
                            backtracked = true;
                            report.backtracks += 1;
                            result = self.run_batch(q, 1)?.0;
                        }
                        _ => log::info!("no alternative batch for step {}", q.id),
                    }
                }
            }
            let stop = result.is_abstain();
            if !stop {
                report.answers += 1;
            }
            report.steps.push(StepReport {
                question_id: q.id.clone(),
                result,
                backtracked,
            });
            if stop {
                report.halted_at = Some(n);
                break;
            }
        }
        Ok(report)
    }
}

/// Retriever and verifier backed by pre-generated SGKT files.
///
/// Candidates come from manifest entries carrying `question_id`, `ctx_id` and
/// an optional `batch` (default 0); traces are looked up by
/// `(question_id, ctx_id)`.
#[derive(Debug, Clone)]
pub struct FixtureStore {
    manifest: Manifest,
    base_dir: PathBuf,
}

impl FixtureStore {
    pub fn new(manifest: Manifest, base_dir: impl Into<PathBuf>) -> Self {
        Self {
            manifest,
            base_dir: base_dir.into(),
        }
    }

    pub fn load(manifest_path: impl AsRef<Path>) -> Result<Self> {
        let path = manifest_path.as_ref();
        let manifest = Manifest::load(path)?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(Self::new(manifest, base))
    }

    pub fn manifest(&self) -> &Manifest {
        &self.manifest
    }

    /// Question ids in first-appearance order.
    pub fn question_ids(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for e in &self.manifest.files {
            if let Some(q) = &e.question_id {
                if !out.contains(q) {
                    out.push(q.clone());
                }
            }
        }
        out
    }

    fn entry(&self, question_id: &str, ctx_id: &str) -> Option<&ManifestEntry> {
        self.manifest.files.iter().find(|e| {
            e.question_id.as_deref() == Some(question_id) && e.ctx_id.as_deref() == Some(ctx_id)
        })
    }
}

impl Retriever for FixtureStore {
    fn retrieve(&self, question: &Question, batch: usize) -> Result<Vec<Context>> {
        let out: Vec<Context> = self
            .manifest
            .files
            .iter()
            .filter(|e| {
                e.question_id.as_deref() == Some(question.id.as_str()) && e.batch.unwrap_or(0) == batch
            })
            .map(|e| Context {
                id: e.ctx_id.clone().unwrap_or_else(|| e.prompt_id.clone()),
                text: e.context.clone().unwrap_or_default(),
            })
            .collect();
        if out.is_empty() {
            return Err(Error::Retriever(format!(
                "no fixtures for question '{}' in batch {batch}",
                question.id
            )));
        }
        Ok(out)
    }
}

impl VerifierModel for FixtureStore {
    fn model_id(&self) -> &str {
        &self.manifest.model_id
    }

    fn trace(&self, prompt: &Prompt) -> Result<ActivationTrace> {
        let entry = self.entry(&prompt.question_id, &prompt.ctx_id).ok_or_else(|| {
            Error::Input(format!(
                "no fixture trace for ({}, {})",
                prompt.question_id, prompt.ctx_id
            ))
        })?;
        self.manifest.load_entry(&self.base_dir, entry)
    }

    fn generate(&self, question: &Question, contexts: &[Context]) -> Result<String> {
        let ids: Vec<&str> = contexts.iter().map(|c| c.id.as_str()).collect();
        Ok(format!("answer({}; evidence=[{}])", question.id, ids.join(",")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn reference() -> Thresholds {
        Thresholds::new(0.15, 0.30, "m").unwrap()
    }

    #[test]
    fn classify_zones_and_boundaries() {
        let t = reference();
        assert_eq!(classify(0.52, &t).unwrap().support, Support::Supported);
        assert_eq!(classify(0.05, &t).unwrap().support, Support::Contradicted);
        assert_eq!(classify(0.30, &t).unwrap().support, Support::Supported);
        assert_eq!(classify(0.15, &t).unwrap().support, Support::Contradicted);
        assert_eq!(classify(0.20, &t).unwrap().support, Support::Uncertain);
        assert!(matches!(classify(f64::NAN, &t), Err(Error::Input(_))));
        assert!(classify(f64::INFINITY, &t).is_err());
    }

    #[test]
    fn gate_branches() {
        let t = reference();
        let o = gate_step(&[0.52, 0.05, 0.51], &t).unwrap();
        assert_eq!((o.decision, o.kept.clone()), (Decision::Answer, vec![0, 2]));
        assert!(!o.kill_switch_fired && !o.uncertain_only);

        let o = gate_step(&[0.05, 0.04], &t).unwrap();
        assert_eq!(o.decision, Decision::Abstain);
        assert!(o.kill_switch_fired && o.kept.is_empty());

        let o = gate_step(&[0.20], &t).unwrap();
        assert_eq!(o.decision, Decision::Answer);
        assert!(o.kept.is_empty() && o.uncertain_only && !o.kill_switch_fired);

        let o = gate_step(&[0.15, 0.15], &t).unwrap();
        assert_eq!(o.decision, Decision::Abstain);
        assert!(gate_step(&[], &t).is_err());
        assert!(gate_step(&[0.5, f64::NAN], &t).is_err());
    }

    #[test]
    fn thresholds_validation() {
        assert!(Thresholds::new(0.3, 0.3, "m").is_err());
        assert!(Thresholds::new(-0.1, 0.3, "m").is_err());
        assert!(Thresholds::new(0.1, 1.1, "m").is_err());
        assert!(Thresholds::new(0.0, 1.0, "m").is_ok());
    }

    #[test]
    fn thresholds_load_from_calibration_json() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("cal.json");
        std::fs::write(
            &p,
            r#"{"tau_hat":0.285,"tau_low":0.15,"tau_high":0.30,"a":1,"b":2,"model_id":"x"}"#,
        )
        .unwrap();
        assert_eq!(Thresholds::load(&p).unwrap(), Thresholds::new(0.15, 0.30, "x").unwrap());
    }

    #[test]
    fn replay_detects_tampering() {
        let rec = AuditRecord {
            ts: "t".into(),
            question_id: "q".into(),
            candidates: vec![CandidateRecord {
                ctx_id: "c".into(),
                h: Some(0.5),
                verdict: Some(Support::Supported),
                error: None,
            }],
            decision: Decision::Answer,
            kill_switch: false,
            tau_low: 0.15,
            tau_high: 0.3,
            model_id: "m".into(),
            uncertain_only: false,
            batch: 0,
            warnings: vec![],
        };
        assert!(replay_audit(std::slice::from_ref(&rec)).unwrap().is_empty());
        let mut bad = rec.clone();
        bad.decision = Decision::Abstain;
        bad.candidates[0].verdict = Some(Support::Contradicted);
        assert_eq!(replay_audit(&[bad]).unwrap().len(), 2);
    }

    #[test]
    fn jsonl_sink_appends() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("audit.jsonl");
        let rec = AuditRecord {
            ts: "t".into(),
            question_id: "q".into(),
            candidates: vec![],
            decision: Decision::Abstain,
            kill_switch: true,
            tau_low: 0.15,
            tau_high: 0.3,
            model_id: "m".into(),
            uncertain_only: false,
            batch: 0,
            warnings: vec!["w".into()],
        };
        JsonlAudit::open(&p).unwrap().append(&rec).unwrap();
        JsonlAudit::open(&p).unwrap().append(&rec).unwrap();
        let back = read_audit(&p).unwrap();
        assert_eq!(back, vec![rec.clone(), rec]);
        let line = std::fs::read_to_string(&p).unwrap();
        let v: serde_json::Value = serde_json::from_str(line.lines().next().unwrap()).unwrap();
        for key in ["ts", "question_id", "candidates", "decision", "kill_switch", "tau_low", "tau_high", "model_id"] {
            assert!(v.get(key).is_some(), "{key}");
        }
        assert_eq!(v["decision"], "ABSTAIN");
    }
}
