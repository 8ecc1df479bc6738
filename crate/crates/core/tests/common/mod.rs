//! Helpers shared by the integration tests.
#![allow(dead_code)]

use std::collections::{BTreeMap, HashMap, HashSet};

use ea_core::backends::{BackendError, PredictionRecord, PredictionSource};
use ea_core::dataset::{DatasetBundle, LabelSpace, LabeledExample, Provenance, Split};
use ea_core::router::CascadePlan;
use proptest::prelude::*;

/// Fixed prediction table keyed by (backend, example).
#[derive(Debug, Clone, Default)]
pub struct Table {
    pub rows: HashMap<(String, String), PredictionRecord>,
    pub opaque: HashSet<String>,
}

impl Table {
    pub fn insert(&mut self, r: PredictionRecord) {
        self.rows.insert((r.backend_id.clone(), r.example_id.clone()), r);
    }

    pub fn get(&self, backend: &str, id: &str) -> &PredictionRecord {
        &self.rows[&(backend.to_string(), id.to_string())]
    }
}

impl PredictionSource for Table {
    fn predict(&self, backend_id: &str, ex: &LabeledExample) -> Result<PredictionRecord, BackendError> {
        self.rows
            .get(&(backend_id.to_string(), ex.id.clone()))
            .cloned()
            .ok_or_else(|| BackendError::MissingPrediction {
                backend: backend_id.to_string(),
                example_id: ex.id.clone(),
            })
    }

    fn opaque_confidence(&self, backend_id: &str) -> bool {
        self.opaque.contains(backend_id)
    }
}

/// Result of walking one example by hand.
#[derive(Debug, Clone, PartialEq)]
pub struct Walk {
    pub visited: Vec<String>,
    pub accepted: Vec<bool>,
    pub final_backend: String,
    pub final_label: usize,
}

/// Straight-line walk of the cascade: look up every backend in plan order
/// and stop at the first one whose acceptance rule holds.
pub fn reference_walk(plan: &CascadePlan, source: &dyn PredictionSource, ex: &LabeledExample) -> Walk {
    let lm = plan.terminal.backend.clone();
    let lm_always = plan.augmented.is_empty() || source.opaque_confidence(&lm);
    let mut order: Vec<(String, Option<f64>)> = Vec::new();
    for s in &plan.stages {
        order.push((s.backend.clone(), Some(s.tau)));
    }
    order.push((lm, if lm_always { None } else { plan.terminal.tau2 }));
    for (i, s) in plan.augmented.iter().enumerate() {
        let last = i + 1 == plan.augmented.len();
        order.push((s.backend.clone(), if last { None } else { Some(s.tau) }));
    }

    let mut walk = Walk {
        visited: vec![],
        accepted: vec![],
        final_backend: String::new(),
        final_label: usize::MAX,
    };
    for (backend, tau) in order {
        let r = source.predict(&backend, ex).unwrap();
        let ok = match tau {
            None => true,
            Some(t) => r.confidence >= t,
        };
        walk.visited.push(backend.clone());
        walk.accepted.push(ok);
        if ok {
            walk.final_backend = backend;
            walk.final_label = r.predicted;
            return walk;
        }
    }
    unreachable!("the last step always accepts")
}

pub fn labels(k: usize) -> LabelSpace {
    LabelSpace::new((0..k).map(|i| format!("c{i}"))).unwrap()
}

pub fn example(i: usize, gold: usize) -> LabeledExample {
    LabeledExample {
        id: format!("e{i:04}"),
        payload: format!("text {i}"),
        gold,
        region: None,
    }
}

pub fn bundle(k: usize, split: Split, examples: Vec<LabeledExample>) -> DatasetBundle {
    DatasetBundle::new(
        labels(k),
        BTreeMap::from([(split, examples)]),
        Provenance {
            source: "fixture".into(),
            content_hash: "0".into(),
        },
    )
    .unwrap()
}

/// A random routing problem: examples, a full prediction table, and the
/// backends of each layer. No probability vector has a 1.0 entry.
#[derive(Debug, Clone)]
pub struct Fixture {
    pub k: usize,
    pub examples: Vec<LabeledExample>,
    pub table: Table,
    pub ssms: Vec<String>,
    pub lm: String,
    pub assms: Vec<String>,
}

fn probs(k: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(1u32..1000, k).prop_map(|w| {
        let total: u32 = w.iter().sum();
        w.iter().map(|&x| x as f64 / total as f64).collect()
    })
}

pub fn fixture(max_n: usize, max_ssms: usize, max_assms: usize) -> impl Strategy<Value = Fixture> {
    (2usize..5, 1..=max_n, 1..=max_ssms, 0..=max_assms, any::<bool>()).prop_flat_map(
        move |(k, n, s, a, opaque)| {
            let m = s + 1 + a;
            (
                prop::collection::vec(0..k, n),
                prop::collection::vec(probs(k), n * m),
            )
                .prop_map(move |(gold, table)| {
                    let ssms: Vec<String> = (0..s).map(|i| format!("ssm{i}")).collect();
                    let lm = "lm".to_string();
                    let assms: Vec<String> = (0..a).map(|i| format!("assm{i}")).collect();
                    let examples: Vec<_> = gold.iter().enumerate().map(|(i, &g)| example(i, g)).collect();
                    let mut t = Table::default();
                    let all: Vec<&String> = ssms.iter().chain([&lm]).chain(&assms).collect();
                    for (b, backend) in all.iter().enumerate() {
                        for (i, ex) in examples.iter().enumerate() {
                            t.insert(
                                PredictionRecord::new(*backend, &ex.id, table[b * n + i].clone()).unwrap(),
                            );
                        }
                    }
                    if opaque {
                        t.opaque.insert(lm.clone());
                    }
                    Fixture {
                        k,
                        examples,
                        table: t,
                        ssms,
                        lm,
                        assms,
                    }
                })
        },
    )
}

/// Runs the `ea` binary in `dir`.
pub fn ea(dir: &std::path::Path, args: &[&str]) -> std::process::Output {
    std::process::Command::new(env!("CARGO_BIN_EXE_ea"))
        .args(args)
        .current_dir(dir)
        .env("RUST_LOG", "error")
        .output()
        .expect("ea runs")
}

/// Runs `ea` and panics with its stderr unless it exits 0.
pub fn ea_ok(dir: &std::path::Path, args: &[&str]) -> String {
    let out = ea(dir, args);
    assert!(
        out.status.success(),
        "ea {args:?} failed ({:?}): {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

/// Copies the augmented model's rows under a new backend id, standing in
/// for a model trained on the exported manifest.
pub fn write_assm_predictions(dir: &std::path::Path, from: &str, to: &str) {
    let text = std::fs::read_to_string(dir.join("predictions.jsonl")).unwrap();
    let needle = format!("\"backend_id\":\"{from}\"");
    let out: String = text
        .lines()
        .filter(|l| l.contains(&needle))
        .map(|l| l.replace(&needle, &format!("\"backend_id\":\"{to}\"")) + "\n")
        .collect();
    assert!(!out.is_empty());
    std::fs::write(dir.join(format!("{to}.jsonl")), out).unwrap();
}

/// Runs the whole command-line workflow on a simulated preset in `dir`,
/// with relative paths only. `step` receives each argument list in order
/// and is expected to run it. Returns every argument list.
pub fn cli_pipeline(dir: &std::path::Path, preset: &str, mut step: impl FnMut(&[String])) -> Vec<Vec<String>> {
    let s = |v: &[&str]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>();
    let mut steps = vec![
        s(&["simulate", "--preset", preset, "--out", "."]),
        s(&["ingest", "--config", "config.toml"]),
        s(&["eval-backend", "--config", "config.toml", "--split", "val"]),
        s(&["rank", "--config", "config.toml"]),
        s(&["calibrate", "--config", "config.toml"]),
        s(&["route", "--config", "config.toml", "--split", "test"]),
        s(&["partition", "--config", "config.toml", "--full"]),
        s(&["export-manifest", "--config", "config.toml", "--variant", "ea"]),
        s(&["export-manifest", "--config", "config.toml", "--variant", "ea_full"]),
    ];
    for args in &steps {
        step(args);
    }
    let assm = match preset {
        "table3like" => "assm",
        _ => "resnet",
    };
    write_assm_predictions(dir, assm, "assm2");
    let provenance = ea_core::augment::TrainingManifest::load(&dir.join("manifest_ea.jsonl"))
        .unwrap()
        .provenance_hash();
    let tail = vec![
        s(&[
            "register-assm", "--config", "config.toml", "--id", "assm2", "--manifest", "manifest_ea.jsonl",
            "--provenance", &provenance, "--predictions", "assm2.jsonl", "--tau2", "0.75",
        ]),
        s(&["report", "--config", "config.toml", "--traces", "traces_test.jsonl", "--split", "test"]),
    ];
    for args in &tail {
        step(args);
    }
    steps.extend(tail);
    steps
}

/// Every file under `dir` with its bytes, by relative path.
pub fn snapshot(dir: &std::path::Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).unwrap().display().to_string();
                out.insert(rel, std::fs::read(&p).unwrap());
            }
        }
    }
    out
}
