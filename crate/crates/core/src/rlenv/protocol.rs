//! Newline-delimited JSON protocol for driving an [`Env`] from another process.
//!
//! Requests, one object per line:
//!
//! ```text
//! {"cmd":"spec"}
//! {"cmd":"reset","seed":7,"height":0.3}      height is optional
//! {"cmd":"step","action":[0.1,-0.4]}
//! ```
//!
//! Replies carry a `type` field: `spec`, `reset`, `step` or `error`. Step
//! replies hold `observation`, `reward` (`g_e`, `p_h`, `p_j`, `p_jp`, `p_jv`,
//! `total`), `terminated` and `info`. Floats are written with 17 significant
//! digits so they parse back to the identical `f64`.

use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{Env, EnvConfig, EnvError, RewardBreakdown, StepInfo, ACT_DIM, OBS_DIM};
use crate::model::RobotModel;
use crate::sim::SimParams;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "cmd", rename_all = "snake_case", deny_unknown_fields)]
pub enum Request {
    Spec,
    Reset {
        seed: u64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        height: Option<f64>,
    },
    Step {
        action: [f64; ACT_DIM],
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Reply {
    Spec {
        obs_dim: usize,
        act_dim: usize,
        heights: Vec<f64>,
        control_rate: f64,
        episode_steps: usize,
    },
    Reset {
        observation: Vec<f64>,
        height: f64,
    },
    Step {
        observation: Vec<f64>,
        reward: RewardBreakdown,
        terminated: bool,
        info: StepInfo,
    },
    Error {
        message: String,
    },
}

/// Writes every float in scientific notation with 17 significant digits.
#[derive(Debug, Clone, Copy, Default)]
pub struct RoundTripFormatter;

impl serde_json::ser::Formatter for RoundTripFormatter {
    fn write_f64<W: ?Sized + Write>(&mut self, writer: &mut W, value: f64) -> io::Result<()> {
        write!(writer, "{value:.16e}")
    }

    fn write_f32<W: ?Sized + Write>(&mut self, writer: &mut W, value: f32) -> io::Result<()> {
        self.write_f64(writer, f64::from(value))
    }
}

/// One JSON line, without the trailing newline.
pub fn encode<T: Serialize>(value: &T) -> String {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, RoundTripFormatter);
    value.serialize(&mut ser).expect("protocol values serialize");
    String::from_utf8(buf).expect("json is utf-8")
}

/// One connection's episode owner.
pub struct Session {
    env: Env,
}

impl Session {
    pub fn new(env: Env) -> Self {
        Self { env }
    }

    pub fn env(&self) -> &Env {
        &self.env
    }

    pub fn handle(&mut self, request: Request) -> Reply {
        match request {
            Request::Spec => {
                let c = self.env.config();
                Reply::Spec {
                    obs_dim: OBS_DIM,
                    act_dim: ACT_DIM,
                    heights: c.heights.clone(),
                    control_rate: c.control_rate,
                    episode_steps: c.episode_steps(),
                }
            }
            Request::Reset { seed, height } => {
                let obs = self.env.reset(seed, height);
                Reply::Reset {
                    observation: obs.to_vec(),
                    height: self.env.desired_height(),
                }
            }
            Request::Step { action } => match self.env.step(action) {
                Ok(step) => Reply::Step {
                    observation: step.observation.to_vec(),
                    reward: step.reward,
                    terminated: step.terminated,
                    info: step.info,
                },
                Err(e) => error_reply(&e),
            },
        }
    }

    /// Parses and answers one line.
    pub fn handle_line(&mut self, line: &str) -> Reply {
        match serde_json::from_str::<Request>(line) {
            Ok(req) => self.handle(req),
            Err(e) => Reply::Error {
                message: format!("malformed request: {e}"),
            },
        }
    }
}

fn error_reply(e: &EnvError) -> Reply {
    Reply::Error {
        message: e.to_string(),
    }
}

/// Everything needed to build a fresh environment per connection.
#[derive(Debug, Clone)]
pub struct ServerConfig {
    pub model: RobotModel,
    pub params: SimParams,
    pub env: EnvConfig,
}

impl ServerConfig {
    pub fn session(&self) -> Result<Session, EnvError> {
        Env::new(self.model.clone(), self.params.clone(), self.env.clone()).map(Session::new)
    }
}

/// Answers requests line by line until the reader is exhausted. Blank lines
/// are ignored.
pub fn serve_stream<R: BufRead, W: Write>(config: &ServerConfig, reader: R, writer: W) -> io::Result<()> {
    let mut session = config
        .session()
        .map_err(|e| io::Error::new(io::ErrorKind::InvalidInput, e.to_string()))?;
    let mut writer = writer;
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let reply = session.handle_line(&line);
        writer.write_all(encode(&reply).as_bytes())?;
        writer.write_all(b"\n")?;
        writer.flush()?;
    }
    Ok(())
}

fn serve_connection(config: &ServerConfig, stream: TcpStream) -> io::Result<()> {
    stream.set_nonblocking(false)?;
    let reader = BufReader::new(stream.try_clone()?);
    serve_stream(config, reader, BufWriter::new(stream))
}

/// Accepts connections until `shutdown` is set, one thread and one
/// independent environment per connection.
pub fn serve_tcp(config: &ServerConfig, listener: TcpListener, shutdown: Arc<AtomicBool>) -> io::Result<()> {
    listener.set_nonblocking(true)?;
    let mut workers = Vec::new();
    while !shutdown.load(Ordering::SeqCst) {
        match listener.accept() {
            Ok((stream, _)) => {
                let config = config.clone();
                workers.push(std::thread::spawn(move || serve_connection(&config, stream)));
            }
            Err(e) if e.kind() == io::ErrorKind::WouldBlock => {
                std::thread::sleep(Duration::from_millis(10));
            }
            Err(e) => return Err(e),
        }
        workers.retain(|w| !w.is_finished());
    }
    Ok(())
}
