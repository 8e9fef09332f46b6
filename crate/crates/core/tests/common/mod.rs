#![allow(dead_code)]

use std::path::Path;

use sgks::gate::FixtureStore;
use sgks::synth::{synth_trace, Regime, SynthConfig};
use sgks::trace::{write_trace_file, Manifest, ManifestEntry};

pub const MODEL_ID: &str = "synthetic";

/// One candidate context of a scripted retrieval fixture.
pub struct Candidate {
    pub ctx_id: &'static str,
    pub target: f64,
    pub batch: usize,
}

pub fn supported(ctx_id: &'static str) -> Candidate {
    Candidate { ctx_id, target: 0.52, batch: 0 }
}

pub fn contradicted(ctx_id: &'static str) -> Candidate {
    Candidate { ctx_id, target: 0.05, batch: 0 }
}

pub fn uncertain(ctx_id: &'static str) -> Candidate {
    Candidate { ctx_id, target: 0.22, batch: 0 }
}

pub fn in_batch(mut c: Candidate, batch: usize) -> Candidate {
    c.batch = batch;
    c
}

/// Writes one synthetic trace per candidate plus a manifest keyed by
/// (question_id, ctx_id) and returns the store reading them back.
pub fn write_scenario(dir: &Path, questions: &[(&str, Vec<Candidate>)]) -> FixtureStore {
    let mut files = Vec::new();
    let mut seed = 1000;
    for (qid, candidates) in questions {
        for c in candidates {
            seed += 1;
            let mut cfg = SynthConfig::new(Regime::Supported, seed);
            cfg.target_hfer_mean = c.target;
            cfg.target_hfer_sd = 0.005;
            let trace = synth_trace(&cfg).expect("synthetic trace");
            let prompt_id = format!("{qid}-{}", c.ctx_id);
            let file = format!("{prompt_id}.sgkt");
            write_trace_file(&trace, dir.join(&file)).expect("write trace");
            let mut entry = ManifestEntry::new(prompt_id, file);
            entry.question_id = Some(qid.to_string());
            entry.ctx_id = Some(c.ctx_id.to_string());
            entry.context = Some(format!("context {} for {qid}", c.ctx_id));
            entry.batch = Some(c.batch);
            files.push(entry);
        }
    }
    let manifest = Manifest {
        model_id: MODEL_ID.into(),
        files,
    };
    manifest.save(dir.join("manifest.json")).expect("save manifest");
    FixtureStore::load(dir.join("manifest.json")).expect("load store")
}
