//! Child-process evaluator speaking line-delimited JSON.
//!
//! Request (one line on the child's stdin):
//! `{"id": <int>, "design": [<d raw reals>]}`.
//! Reply (one line on its stdout): `{"id": <int>, "specs": [<m+1 raw reals>]}`
//! or `{"id": <int>, "error": "<text>"}`.
//!
//! A crash, timeout or unparseable reply fails that evaluation only; the
//! child is restarted for the next one. A reply carrying the wrong id gets
//! the child restarted and the request retried once; a second mismatch is
//! fatal.

use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{Evaluator, EvaluatorDescriptor, Outcome};
use crate::error::{Error, Result};
use crate::problem::{Design, ProblemDefinition};

fn default_timeout() -> f64 {
    300.0
}

fn default_pool() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExternalConfig {
    /// Program followed by its arguments.
    pub command: Vec<String>,
    /// Per-evaluation timeout in seconds.
    #[serde(default = "default_timeout")]
    pub timeout_secs: f64,
    /// Number of children; each serves one evaluation at a time.
    #[serde(default = "default_pool")]
    pub pool_size: usize,
}

impl ExternalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.command.is_empty() || self.command[0].is_empty() {
            return Err(Error::Config("external evaluator command is empty".into()));
        }
        if !(self.timeout_secs.is_finite() && self.timeout_secs > 0.0) {
            return Err(Error::Config("timeout_secs must be positive".into()));
        }
        if self.pool_size == 0 {
            return Err(Error::Config("pool_size must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Serialize)]
struct Request<'a> {
    id: u64,
    design: &'a [f64],
}

#[derive(Deserialize)]
struct Reply {
    id: u64,
    #[serde(default)]
    specs: Option<Vec<f64>>,
    #[serde(default)]
    error: Option<String>,
}

struct Worker {
    child: Child,
    stdin: ChildStdin,
    lines: Receiver<std::io::Result<String>>,
}

impl Worker {
    fn spawn(command: &[String]) -> Result<Self> {
        let mut child = Command::new(&command[0])
            .args(&command[1..])
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| Error::Protocol(format!("cannot start `{}`: {e}", command[0])))?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        let (tx, rx) = mpsc::channel();
        thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                let stop = line.is_err();
                if tx.send(line).is_err() || stop {
                    break;
                }
            }
        });
        Ok(Self {
            child,
            stdin,
            lines: rx,
        })
    }

    fn shutdown(mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

enum Exchange {
    Done(Outcome),
    /// The child must be replaced before anything else is sent to it.
    Restart(Outcome),
    WrongId(u64),
}

/// Evaluator backed by one or more child processes.
pub struct ExternalProcess {
    config: ExternalConfig,
    problem: ProblemDefinition,
    workers: Vec<Option<Worker>>,
    next_id: u64,
}

impl ExternalProcess {
    /// Children are started lazily on the first evaluation.
    pub fn new(config: ExternalConfig, problem: ProblemDefinition) -> Result<Self> {
        config.validate()?;
        let workers = (0..config.pool_size).map(|_| None).collect();
        Ok(Self {
            config,
            problem,
            workers,
            next_id: 1,
        })
    }

    fn exchange(worker: &mut Worker, id: u64, design: &[f64], timeout: Duration, specs_len: usize) -> Exchange {
        let line = serde_json::to_string(&Request { id, design }).expect("finite reals serialize");
        if writeln!(worker.stdin, "{line}").and_then(|_| worker.stdin.flush()).is_err() {
            return Exchange::Restart(Outcome::Failure("evaluator process is not accepting input".into()));
        }
        let reply = match worker.lines.recv_timeout(timeout) {
            Ok(Ok(line)) => line,
            Ok(Err(e)) => return Exchange::Restart(Outcome::Failure(format!("reading evaluator output: {e}"))),
            Err(RecvTimeoutError::Timeout) => {
                return Exchange::Restart(Outcome::Failure(format!(
                    "evaluation timed out after {:.3} s",
                    timeout.as_secs_f64()
                )))
            }
            Err(RecvTimeoutError::Disconnected) => {
                return Exchange::Restart(Outcome::Failure("evaluator process exited".into()))
            }
        };
        let reply: Reply = match serde_json::from_str(&reply) {
            Ok(r) => r,
            Err(e) => return Exchange::Done(Outcome::Failure(format!("malformed reply: {e}"))),
        };
        if reply.id != id {
            return Exchange::WrongId(reply.id);
        }
        match (reply.specs, reply.error) {
            (_, Some(msg)) => Exchange::Done(Outcome::Failure(msg)),
            (Some(specs), None) if specs.len() == specs_len => Exchange::Done(Outcome::Metrics(specs)),
            (Some(specs), None) => Exchange::Done(Outcome::Failure(format!(
                "reply has {} specs, expected {specs_len}",
                specs.len()
            ))),
            (None, None) => Exchange::Done(Outcome::Failure("reply has neither specs nor error".into())),
        }
    }

    fn evaluate_on(
        slot: &mut Option<Worker>,
        command: &[String],
        timeout: Duration,
        specs_len: usize,
        id: u64,
        design: &[f64],
    ) -> Result<Outcome> {
        let mut retried = false;
        loop {
            if slot.is_none() {
                *slot = Some(Worker::spawn(command)?);
            }
            let worker = slot.as_mut().expect("spawned above");
            match Self::exchange(worker, id, design, timeout, specs_len) {
                Exchange::Done(outcome) => return Ok(outcome),
                Exchange::Restart(outcome) => {
                    slot.take().expect("present").shutdown();
                    return Ok(outcome);
                }
                Exchange::WrongId(got) => {
                    slot.take().expect("present").shutdown();
                    if retried {
                        return Err(Error::Protocol(format!(
                            "evaluator answered request {id} with id {got} again after a restart"
                        )));
                    }
                    retried = true;
                }
            }
        }
    }
}

impl Evaluator for ExternalProcess {
    fn descriptor(&self) -> EvaluatorDescriptor {
        EvaluatorDescriptor {
            problem: self.problem.clone(),
            concurrency_safe: self.config.pool_size > 1,
            deterministic: false,
        }
    }

    fn evaluate(&mut self, design: &Design) -> Result<Outcome> {
        Ok(self.evaluate_many(std::slice::from_ref(design))?.remove(0))
    }

    fn evaluate_many(&mut self, designs: &[Design]) -> Result<Vec<Outcome>> {
        let timeout = Duration::from_secs_f64(self.config.timeout_secs);
        let specs_len = self.problem.specs().len();
        let first_id = self.next_id;
        self.next_id += designs.len() as u64;
        let command = &self.config.command;
        if self.workers.len() == 1 || designs.len() == 1 {
            let slot = &mut self.workers[0];
            return designs
                .iter()
                .enumerate()
                .map(|(i, d)| Self::evaluate_on(slot, command, timeout, specs_len, first_id + i as u64, d.values()))
                .collect();
        }
        // Worker w takes designs w, w + pool, w + 2 pool, ...
        let pool = self.workers.len();
        let mut results: Vec<Option<Result<Outcome>>> = (0..designs.len()).map(|_| None).collect();
        thread::scope(|scope| {
            let handles: Vec<_> = self
                .workers
                .iter_mut()
                .enumerate()
                .map(|(w, slot)| {
                    scope.spawn(move || {
                        (w..designs.len())
                            .step_by(pool)
                            .map(|i| {
                                let r = Self::evaluate_on(
                                    slot,
                                    command,
                                    timeout,
                                    specs_len,
                                    first_id + i as u64,
                                    designs[i].values(),
                                );
                                (i, r)
                            })
                            .collect::<Vec<_>>()
                    })
                })
                .collect();
            for h in handles {
                for (i, r) in h.join().expect("worker thread panicked") {
                    results[i] = Some(r);
                }
            }
        });
        results.into_iter().map(|r| r.expect("every index assigned")).collect()
    }
}

impl Drop for ExternalProcess {
    fn drop(&mut self) {
        for w in self.workers.iter_mut().filter_map(Option::take) {
            w.shutdown();
        }
    }
}
