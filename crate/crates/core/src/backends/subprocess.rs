//! Models served by a child process over a line-oriented JSON protocol.
//!
//! Request, one line on the child's stdin:
//! `{"example_id": "ex1", "payload": "...", "labels": ["pos", "neg"]}`
//!
//! Response, one line on its stdout: a prediction row
//! `{"backend_id": "m", "example_id": "ex1", "probs": [0.8, 0.2]}`
//! or an error `{"example_id": "ex1", "error": "reason"}`.
//!
//! One process per backend, spawned lazily; calls are serialised. A broken
//! pipe or dead child is respawned up to `retries` times.

use std::io::{BufRead, BufReader, Write};
use std::path::PathBuf;
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{Backend, BackendDescriptor, BackendError, BackendSource, Capacity, PredictionRecord};
use crate::dataset::{LabelSpace, LabeledExample};

fn default_retries() -> u32 {
    2
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubprocessCommand {
    pub program: String,
    #[serde(default)]
    pub args: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub working_dir: Option<PathBuf>,
    #[serde(default = "default_retries")]
    pub retries: u32,
}

#[derive(Debug, Serialize)]
pub struct SubprocessRequest<'a> {
    pub example_id: &'a str,
    pub payload: &'a str,
    pub labels: &'a [String],
}

#[derive(Debug, Deserialize)]
struct SubprocessResponse {
    example_id: String,
    #[serde(default)]
    probs: Option<Vec<f64>>,
    #[serde(default)]
    error: Option<String>,
    #[serde(default, rename = "backend_id")]
    _backend_id: Option<String>,
}

struct Running {
    child: Child,
    stdin: ChildStdin,
    stdout: BufReader<ChildStdout>,
}

impl Drop for Running {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

pub struct SubprocessBackend {
    descriptor: BackendDescriptor,
    process: Mutex<Option<Running>>,
}

enum Failure {
    /// The process is unusable; respawn and retry.
    Transport(String),
    Fatal(BackendError),
}

impl SubprocessBackend {
    pub fn new(descriptor: BackendDescriptor) -> Result<Self, BackendError> {
        if !matches!(descriptor.source, BackendSource::Subprocess(_)) {
            return Err(BackendError::Config(format!(
                "backend {} is not a subprocess",
                descriptor.id
            )));
        }
        Ok(Self {
            descriptor,
            process: Mutex::new(None),
        })
    }

    fn command(&self) -> &SubprocessCommand {
        match &self.descriptor.source {
            BackendSource::Subprocess(c) => c,
            _ => unreachable!("checked in new"),
        }
    }

    fn spawn(&self) -> Result<Running, String> {
        let spec = self.command();
        let mut cmd = Command::new(&spec.program);
        cmd.args(&spec.args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit());
        if let Some(dir) = &spec.working_dir {
            cmd.current_dir(dir);
        }
        let mut child = cmd.spawn().map_err(|e| format!("spawn {}: {e}", spec.program))?;
        let stdin = child.stdin.take().ok_or("no stdin")?;
        let stdout = BufReader::new(child.stdout.take().ok_or("no stdout")?);
        Ok(Running {
            child,
            stdin,
            stdout,
        })
    }

    fn exchange(
        &self,
        running: &mut Running,
        example: &LabeledExample,
        labels: &LabelSpace,
    ) -> Result<PredictionRecord, Failure> {
        let request = SubprocessRequest {
            example_id: &example.id,
            payload: &example.payload,
            labels: labels.labels(),
        };
        let mut line = serde_json::to_string(&request).expect("request serialises");
        line.push('\n');
        running
            .stdin
            .write_all(line.as_bytes())
            .and_then(|_| running.stdin.flush())
            .map_err(|e| Failure::Transport(e.to_string()))?;

        let mut reply = String::new();
        let n = running
            .stdout
            .read_line(&mut reply)
            .map_err(|e| Failure::Transport(e.to_string()))?;
        if n == 0 {
            return Err(Failure::Transport("child closed stdout".into()));
        }
        let id = &self.descriptor.id;
        let response: SubprocessResponse = serde_json::from_str(reply.trim()).map_err(|_| {
            Failure::Fatal(BackendError::ParseFailure {
                backend: id.clone(),
                raw: reply.trim().to_string(),
            })
        })?;
        if response.example_id != example.id {
            return Err(Failure::Fatal(BackendError::ParseFailure {
                backend: id.clone(),
                raw: format!(
                    "response for {:?} while waiting for {:?}",
                    response.example_id, example.id
                ),
            }));
        }
        if let Some(error) = response.error {
            return Err(Failure::Fatal(BackendError::BackendUnavailable {
                backend: id.clone(),
                reason: error,
            }));
        }
        let probs = response.probs.ok_or_else(|| {
            Failure::Fatal(BackendError::ParseFailure {
                backend: id.clone(),
                raw: reply.trim().to_string(),
            })
        })?;
        if probs.len() != labels.len() {
            return Err(Failure::Fatal(BackendError::InvalidDistribution(format!(
                "{} probabilities for {} labels",
                probs.len(),
                labels.len()
            ))));
        }
        PredictionRecord::new(id.clone(), example.id.clone(), probs).map_err(Failure::Fatal)
    }
}

impl Backend for SubprocessBackend {
    fn descriptor(&self) -> &BackendDescriptor {
        &self.descriptor
    }

    fn predict(
        &self,
        example: &LabeledExample,
        labels: &LabelSpace,
    ) -> Result<PredictionRecord, BackendError> {
        let mut guard = self.process.lock().expect("subprocess lock");
        let mut last = String::new();
        for _ in 0..=self.command().retries {
            if guard.is_none() {
                match self.spawn() {
                    Ok(running) => *guard = Some(running),
                    Err(e) => {
                        last = e;
                        continue;
                    }
                }
            }
            let running = guard.as_mut().expect("spawned above");
            match self.exchange(running, example, labels) {
                Ok(record) => return Ok(record),
                Err(Failure::Fatal(e)) => return Err(e),
                Err(Failure::Transport(e)) => {
                    last = e;
                    *guard = None;
                }
            }
        }
        Err(BackendError::BackendUnavailable {
            backend: self.descriptor.id.clone(),
            reason: last,
        })
    }

    fn capacity(&self) -> Capacity {
        Capacity::Serialized
    }
}
