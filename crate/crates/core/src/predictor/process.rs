use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};
use std::sync::Mutex;

use crate::error::{Error, Result};
use crate::imagecore::GrayImage;

use super::wire::{parse_response, PredictRequest};
use super::{Prediction, Predictor, MAX_RETRIES};

struct Session {
    child: Child,
    stdin: ChildStdin,
    stdout: BufReader<ChildStdout>,
}

impl Drop for Session {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

struct State {
    session: Option<Session>,
    next_id: u64,
}

/// Talks line-delimited JSON to a long-running child process started with
/// `sh -c <command>`.
///
/// One request is in flight at a time; a failed exchange kills the child and
/// the next attempt starts a fresh one.
pub struct ProcessPredictor {
    command: String,
    state: Mutex<State>,
}

impl ProcessPredictor {
    pub fn new(command: impl Into<String>) -> Self {
        Self {
            command: command.into(),
            state: Mutex::new(State {
                session: None,
                next_id: 0,
            }),
        }
    }

    pub fn command(&self) -> &str {
        &self.command
    }

    fn spawn(&self) -> Result<Session> {
        let mut child = Command::new("sh")
            .arg("-c")
            .arg(&self.command)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| Error::PredictorUnavailable(format!("cannot start `{}`: {e}", self.command)))?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = BufReader::new(child.stdout.take().expect("piped stdout"));
        Ok(Session { child, stdin, stdout })
    }

    fn exchange(session: &mut Session, line: &str) -> std::io::Result<String> {
        session.stdin.write_all(line.as_bytes())?;
        session.stdin.write_all(b"\n")?;
        session.stdin.flush()?;
        let mut reply = String::new();
        if session.stdout.read_line(&mut reply)? == 0 {
            return Err(std::io::Error::new(
                std::io::ErrorKind::UnexpectedEof,
                "predictor closed its output",
            ));
        }
        Ok(reply)
    }
}

impl Predictor for ProcessPredictor {
    fn predict(&self, images: &[GrayImage]) -> Result<Vec<Prediction>> {
        let mut state = self.state.lock().unwrap_or_else(|p| p.into_inner());
        let id = state.next_id.to_string();
        state.next_id += 1;
        let line = serde_json::to_string(&PredictRequest::encode(id.clone(), images)?)
            .expect("request serializes");

        let mut last_err = String::new();
        for _ in 0..=MAX_RETRIES {
            if state.session.is_none() {
                match self.spawn() {
                    Ok(s) => state.session = Some(s),
                    Err(e) => {
                        last_err = e.to_string();
                        continue;
                    }
                }
            }
            let session = state.session.as_mut().expect("session just ensured");
            match Self::exchange(session, &line) {
                Ok(reply) => return parse_response(&reply, &id, images.len()),
                Err(e) => {
                    last_err = e.to_string();
                    state.session = None;
                }
            }
        }
        Err(Error::PredictorUnavailable(format!(
            "`{}` failed after {} attempts: {last_err}",
            self.command,
            MAX_RETRIES + 1
        )))
    }
}
