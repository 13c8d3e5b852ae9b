//! Length-prefixed JSON protocol for remote trainers.
//!
//! Every message in either direction is a frame: a 4-byte big-endian
//! unsigned payload length followed by that many bytes of UTF-8 JSON holding
//! an object with a `"type"` field. The exchange is strict request / reply.
//! See the protocol chapter of the book for the message catalogue.

use std::io::{ErrorKind, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Duration;

use base64::Engine;
use serde_json::{json, Map, Value};

use crate::env::{DrivingEnv, EnvError, Observation, ScenarioConfig, World, OBS_DIM, OBS_NAMES};
use crate::physics::Controls;
use crate::render::Framebuffer;

pub const PROTOCOL_VERSION: u64 = 1;
pub const MAX_FRAME: usize = 1 << 20;

pub fn encode_frame(msg: &Value) -> Vec<u8> {
    let body = serde_json::to_vec(msg).expect("json values always serialize");
    let mut out = Vec::with_capacity(body.len() + 4);
    out.extend_from_slice(&(body.len() as u32).to_be_bytes());
    out.extend_from_slice(&body);
    out
}

/// Result of pulling from a [`FrameDecoder`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Frame {
    Payload(Vec<u8>),
    /// The declared length exceeds [`MAX_FRAME`]; the stream cannot be resynchronized.
    TooLarge(u32),
}

/// Incremental frame splitter.
#[derive(Debug, Default)]
pub struct FrameDecoder {
    buf: Vec<u8>,
}

impl FrameDecoder {
    pub fn push(&mut self, bytes: &[u8]) {
        self.buf.extend_from_slice(bytes);
    }

    pub fn next_frame(&mut self) -> Option<Frame> {
        if self.buf.len() < 4 {
            return None;
        }
        let len = u32::from_be_bytes([self.buf[0], self.buf[1], self.buf[2], self.buf[3]]);
        if len as usize > MAX_FRAME {
            return Some(Frame::TooLarge(len));
        }
        let end = 4 + len as usize;
        if self.buf.len() < end {
            return None;
        }
        let payload = self.buf[4..end].to_vec();
        self.buf.drain(..end);
        Some(Frame::Payload(payload))
    }

    pub fn buffered(&self) -> usize {
        self.buf.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SessionState {
    AwaitingHello,
    Idle,
    InEpisode,
}

pub fn error_reply(code: &str, message: impl Into<String>) -> Value {
    json!({"type": "error", "code": code, "message": message.into()})
}

pub fn image_b64(fb: &Framebuffer) -> String {
    base64::engine::general_purpose::STANDARD.encode(fb.to_rgb8())
}

/// Observation / action description sent in `hello_ok`.
pub fn obs_spec(cfg: &ScenarioConfig) -> Value {
    let image = if cfg.obs_mode.wants_image() {
        json!({"width": cfg.image_size[0], "height": cfg.image_size[1], "channels": 3, "encoding": "rgb8_base64"})
    } else {
        Value::Null
    };
    json!({
        "obs_mode": cfg.obs_mode,
        "vector": if cfg.obs_mode.wants_vector() {
            json!({"length": OBS_DIM, "names": OBS_NAMES})
        } else {
            Value::Null
        },
        "image": image,
        "action": {
            "names": ["throttle", "steer", "brake"],
            "low": [-1.0, -1.0, 0.0],
            "high": [1.0, 1.0, 1.0],
        },
        "max_steps": cfg.max_steps,
        "dt": crate::physics::DEFAULT_DT,
    })
}

fn obs_json(o: &Observation) -> Value {
    let mut m = Map::new();
    if let Some(v) = &o.vector {
        m.insert("vector".into(), json!(v.to_vec()));
    }
    if let Some(img) = &o.image {
        m.insert("image_b64".into(), json!(image_b64(img)));
    }
    Value::Object(m)
}

/// One client's protocol state and environment.
#[derive(Debug)]
pub struct Session {
    env: DrivingEnv,
    state: SessionState,
    decoder: FrameDecoder,
    closed: bool,
}

impl Session {
    pub fn new(world: Arc<World>, scenario: ScenarioConfig) -> Result<Self, EnvError> {
        Ok(Self {
            env: DrivingEnv::new(world, scenario)?,
            state: SessionState::AwaitingHello,
            decoder: FrameDecoder::default(),
            closed: false,
        })
    }

    pub fn state(&self) -> SessionState {
        self.state
    }

    pub fn is_closed(&self) -> bool {
        self.closed
    }

    pub fn env(&self) -> &DrivingEnv {
        &self.env
    }

    /// Feeds raw stream bytes; returns encoded reply frames. After a fatal
    /// framing error the session is closed and ignores further input.
    pub fn feed(&mut self, bytes: &[u8]) -> Vec<Vec<u8>> {
        let mut out = Vec::new();
        if self.closed {
            return out;
        }
        self.decoder.push(bytes);
        while let Some(frame) = self.decoder.next_frame() {
            match frame {
                Frame::Payload(p) => {
                    let reply = self.handle_payload(&p);
                    out.push(encode_frame(&reply));
                    if self.closed {
                        break;
                    }
                }
                Frame::TooLarge(n) => {
                    out.push(encode_frame(&error_reply(
                        "frame_too_large",
                        format!("frame of {n} bytes exceeds the {MAX_FRAME} byte limit"),
                    )));
                    self.closed = true;
                    break;
                }
            }
        }
        out
    }

    pub fn handle_payload(&mut self, payload: &[u8]) -> Value {
        let msg: Value = match serde_json::from_slice(payload) {
            Ok(v) => v,
            Err(e) => return error_reply("bad_message", format!("invalid JSON: {e}")),
        };
        self.handle(&msg)
    }

    pub fn handle(&mut self, msg: &Value) -> Value {
        let Some(obj) = msg.as_object() else {
            return error_reply("bad_message", "message must be a JSON object");
        };
        let Some(kind) = obj.get("type").and_then(Value::as_str) else {
            return error_reply("bad_message", "missing string field \"type\"");
        };
        match (kind, self.state) {
            ("hello", _) => self.hello(obj),
            (_, SessionState::AwaitingHello) if is_known(kind) => {
                error_reply("handshake_required", "send hello first")
            }
            ("reset", _) => self.reset(obj),
            ("step", _) => self.step(obj),
            ("render", _) => self.render(),
            ("close", _) => {
                self.closed = true;
                json!({"type": "bye"})
            }
            _ => error_reply("unknown_type", format!("unknown message type {kind:?}")),
        }
    }

    fn hello(&mut self, obj: &Map<String, Value>) -> Value {
        match obj.get("version").and_then(Value::as_u64) {
            Some(PROTOCOL_VERSION) => {
                if self.state == SessionState::AwaitingHello {
                    self.state = SessionState::Idle;
                }
                json!({
                    "type": "hello_ok",
                    "version": PROTOCOL_VERSION,
                    "obs_spec": obs_spec(self.env.config()),
                })
            }
            Some(v) => error_reply(
                "version_mismatch",
                format!("server speaks version {PROTOCOL_VERSION}, client sent {v}"),
            ),
            None => error_reply("bad_message", "hello needs an integer \"version\""),
        }
    }

    fn reset(&mut self, obj: &Map<String, Value>) -> Value {
        let seed = match obj.get("seed") {
            None | Some(Value::Null) => self.env.config().seed,
            Some(v) => match v.as_u64() {
                Some(s) => s,
                None => return error_reply("bad_message", "seed must be a non-negative integer"),
            },
        };
        let obs = self.env.reset(seed);
        self.state = SessionState::InEpisode;
        let mut reply = obs_json(&obs);
        reply["type"] = json!("obs");
        reply
    }

    fn step(&mut self, obj: &Map<String, Value>) -> Value {
        if self.state != SessionState::InEpisode {
            return error_reply("no_episode", "no episode in progress; send reset");
        }
        let action = match parse_action(obj.get("action")) {
            Ok(a) => a,
            Err(m) => return error_reply("bad_message", m),
        };
        match self.env.step(action) {
            Ok(t) => {
                if t.terminated || t.truncated {
                    self.state = SessionState::Idle;
                }
                json!({
                    "type": "transition",
                    "reward": t.reward,
                    "terminated": t.terminated,
                    "truncated": t.truncated,
                    "clamped": t.info.clamped,
                    "obs": obs_json(&t.obs),
                    "info": {
                        "outcome": t.info.outcome,
                        "steps": t.info.steps,
                        "s": t.info.s,
                    },
                })
            }
            Err(e) => {
                self.state = SessionState::Idle;
                error_reply("simulation_error", e.to_string())
            }
        }
    }

    fn render(&mut self) -> Value {
        if self.env.vehicle().is_none() {
            return error_reply("no_episode", "reset before render");
        }
        let fb = self.env.render_ego_view();
        json!({"type": "image", "width": fb.width, "height": fb.height, "image_b64": image_b64(&fb)})
    }
}

fn is_known(kind: &str) -> bool {
    matches!(kind, "reset" | "step" | "render" | "close")
}

/// `{"throttle": t, "steer": s, "brake": b}`; missing fields are 0 and
/// values out of range are clamped by the environment.
fn parse_action(v: Option<&Value>) -> Result<Controls, String> {
    let Some(Value::Object(m)) = v else {
        return Err("step needs an \"action\" object".into());
    };
    let field = |k: &str| -> Result<f64, String> {
        match m.get(k) {
            None => Ok(0.0),
            Some(x) => x.as_f64().ok_or_else(|| format!("action.{k} must be a number")),
        }
    };
    for k in m.keys() {
        if !matches!(k.as_str(), "throttle" | "steer" | "brake") {
            return Err(format!("unknown action field {k:?}"));
        }
    }
    Ok(Controls::new(field("throttle")?, field("steer")?, field("brake")?))
}

/// Blocking TCP front end; one thread per connection.
pub struct Server {
    listener: TcpListener,
    world: Arc<World>,
    scenario: ScenarioConfig,
    stop: Arc<AtomicBool>,
}

/// Stops a running [`Server`].
#[derive(Debug, Clone)]
pub struct ShutdownHandle(Arc<AtomicBool>);

impl ShutdownHandle {
    pub fn shutdown(&self) {
        self.0.store(true, Ordering::SeqCst);
    }
}

impl Server {
    pub fn bind(addr: impl ToSocketAddrs, world: Arc<World>, scenario: ScenarioConfig) -> std::io::Result<Self> {
        DrivingEnv::new(Arc::clone(&world), scenario.clone())
            .map_err(|e| std::io::Error::new(ErrorKind::InvalidInput, e.to_string()))?;
        let listener = TcpListener::bind(addr)?;
        listener.set_nonblocking(true)?;
        Ok(Self {
            listener,
            world,
            scenario,
            stop: Arc::new(AtomicBool::new(false)),
        })
    }

    pub fn local_addr(&self) -> std::io::Result<SocketAddr> {
        self.listener.local_addr()
    }

    pub fn shutdown_handle(&self) -> ShutdownHandle {
        ShutdownHandle(Arc::clone(&self.stop))
    }

    /// Accepts connections until shut down, then waits for open sessions.
    pub fn run(self) -> std::io::Result<()> {
        let mut workers: Vec<JoinHandle<()>> = Vec::new();
        let mut next_id = 0u64;
        while !self.stop.load(Ordering::SeqCst) {
            match self.listener.accept() {
                Ok((stream, peer)) => {
                    next_id += 1;
                    let id = next_id;
                    let world = Arc::clone(&self.world);
                    let sc = self.scenario.clone();
                    let stop = Arc::clone(&self.stop);
                    log::info!("session {id}: connected from {peer}");
                    workers.push(std::thread::spawn(move || {
                        match serve_connection(stream, world, sc, &stop) {
                            Ok(()) => log::info!("session {id}: closed"),
                            Err(e) => log::warn!("session {id}: {e}"),
                        }
                    }));
                    workers.retain(|w| !w.is_finished());
                }
                Err(e) if e.kind() == ErrorKind::WouldBlock => std::thread::sleep(Duration::from_millis(20)),
                Err(e) => return Err(e),
            }
        }
        for w in workers {
            let _ = w.join();
        }
        Ok(())
    }

    /// Runs the accept loop on a background thread.
    pub fn spawn(self) -> (ShutdownHandle, JoinHandle<std::io::Result<()>>) {
        let h = self.shutdown_handle();
        (h, std::thread::spawn(move || self.run()))
    }
}

fn serve_connection(
    mut stream: TcpStream,
    world: Arc<World>,
    scenario: ScenarioConfig,
    stop: &AtomicBool,
) -> std::io::Result<()> {
    stream.set_nonblocking(false)?;
    stream.set_read_timeout(Some(Duration::from_millis(200)))?;
    stream.set_nodelay(true)?;
    let mut session =
        Session::new(world, scenario).map_err(|e| std::io::Error::other(e.to_string()))?;
    let mut buf = vec![0u8; 64 * 1024];
    loop {
        if stop.load(Ordering::SeqCst) {
            return Ok(());
        }
        let n = match stream.read(&mut buf) {
            Ok(0) => return Ok(()),
            Ok(n) => n,
            Err(e) if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut) => continue,
            Err(e) if e.kind() == ErrorKind::Interrupted => continue,
            Err(e) => return Err(e),
        };
        for reply in session.feed(&buf[..n]) {
            stream.write_all(&reply)?;
        }
        if session.is_closed() {
            stream.flush()?;
            return Ok(());
        }
    }
}

/// Minimal blocking client, used by tests and the CLI.
pub struct Client {
    stream: TcpStream,
    decoder: FrameDecoder,
}

impl Client {
    pub fn connect(addr: impl ToSocketAddrs) -> std::io::Result<Self> {
        let stream = TcpStream::connect(addr)?;
        stream.set_nodelay(true)?;
        Ok(Self {
            stream,
            decoder: FrameDecoder::default(),
        })
    }

    pub fn send_raw(&mut self, bytes: &[u8]) -> std::io::Result<()> {
        self.stream.write_all(bytes)
    }

    pub fn recv(&mut self) -> std::io::Result<Value> {
        let mut buf = [0u8; 64 * 1024];
        loop {
            match self.decoder.next_frame() {
                Some(Frame::Payload(p)) => {
                    return serde_json::from_slice(&p).map_err(|e| std::io::Error::new(ErrorKind::InvalidData, e))
                }
                Some(Frame::TooLarge(n)) => {
                    return Err(std::io::Error::new(ErrorKind::InvalidData, format!("reply of {n} bytes")))
                }
                None => {}
            }
            let n = self.stream.read(&mut buf)?;
            if n == 0 {
                return Err(ErrorKind::UnexpectedEof.into());
            }
            self.decoder.push(&buf[..n]);
        }
    }

    pub fn request(&mut self, msg: &Value) -> std::io::Result<Value> {
        self.send_raw(&encode_frame(msg))?;
        self.recv()
    }
}
