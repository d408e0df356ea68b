use std::collections::VecDeque;
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use tungstenite::{Bytes, Message};

use super::mirror::Mirror;
use super::protocol::{Hello, StatsTick, StreamMessage, PROTOCOL_VERSION};
use super::ServiceError;
use crate::config::LodConfig;
use crate::io::IoError;
use crate::octree::CubeBounds;
use crate::update::{Batch, BudgetClock, Updater};

#[derive(Default)]
struct LogState {
    frames: Vec<Bytes>,
    closed: bool,
}

/// Append-only, replayable sequence of encoded messages.
#[derive(Default)]
pub struct EventLog {
    state: Mutex<LogState>,
    grown: Condvar,
}

impl EventLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&self, msg: &StreamMessage) {
        self.push_encoded(msg.encode().into());
    }

    pub fn push_encoded(&self, frame: Bytes) {
        let mut s = self.state.lock().unwrap();
        assert!(!s.closed, "event log is closed");
        s.frames.push(frame);
        self.grown.notify_all();
    }

    /// Marks the log complete; readers drain what is left and stop.
    pub fn close(&self) {
        self.state.lock().unwrap().closed = true;
        self.grown.notify_all();
    }

    pub fn is_closed(&self) -> bool {
        self.state.lock().unwrap().closed
    }

    pub fn len(&self) -> usize {
        self.state.lock().unwrap().frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn snapshot(&self) -> Vec<Bytes> {
        self.state.lock().unwrap().frames.clone()
    }

    /// Frames from `cursor` on, waiting until there is at least one. `None`
    /// once the log is closed and fully read.
    pub fn wait_from(&self, cursor: usize, timeout: Duration) -> Option<Vec<Bytes>> {
        let mut s = self.state.lock().unwrap();
        loop {
            if s.frames.len() > cursor {
                return Some(s.frames[cursor..].to_vec());
            }
            if s.closed {
                return None;
            }
            let (next, res) = self.grown.wait_timeout(s, timeout).unwrap();
            s = next;
            if res.timed_out() && s.frames.len() <= cursor && !s.closed {
                return Some(Vec::new());
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct StreamOptions {
    pub config: LodConfig,
    /// Maximum ingest rate in points per second.
    pub throttle_pps: Option<f64>,
}

#[derive(Debug, Clone, Default, serde::Serialize)]
pub struct StreamSummary {
    pub frames: u64,
    pub batches: u64,
    pub points: u64,
    pub messages: usize,
    pub nodes: usize,
}

fn hello(bounds: CubeBounds, config: &LodConfig) -> StreamMessage {
    StreamMessage::Hello(Hello {
        version: PROTOCOL_VERSION,
        bounds,
        grid_resolution: config.grid_resolution,
        leaf_threshold: config.leaf_threshold,
        chunk_capacity: config.chunk_capacity as u32,
    })
}

/// Runs the ingest and update loop, appending every structural change to
/// `log`. The log is closed on return; failures end it with an error frame.
pub fn stream_to_log<I>(
    batches: I,
    bounds: CubeBounds,
    options: &StreamOptions,
    log: &EventLog,
) -> Result<(StreamSummary, Updater), ServiceError>
where
    I: IntoIterator<Item = Result<Batch, IoError>>,
{
    let result = drive(batches.into_iter(), bounds, options, log);
    match &result {
        Ok(_) => log.push(&StreamMessage::EndOfStream),
        Err(e) => log.push(&StreamMessage::Error { message: e.to_string() }),
    }
    log.close();
    result
}

fn drive(
    mut batches: impl Iterator<Item = Result<Batch, IoError>>,
    bounds: CubeBounds,
    options: &StreamOptions,
    log: &EventLog,
) -> Result<(StreamSummary, Updater), ServiceError> {
    let config = &options.config;
    let mut updater = Updater::new(bounds, config.clone()).with_events();
    log.push(&hello(bounds, config));
    let started = Instant::now();
    let mut queue = VecDeque::new();
    let mut summary = StreamSummary::default();
    let mut read_points = 0u64;
    let mut exhausted = false;
    loop {
        // Fill the queue up to one frame's worth, respecting the throttle.
        while !exhausted && queue.len() < 2 {
            if let Some(rate) = options.throttle_pps {
                if read_points as f64 > rate * started.elapsed().as_secs_f64() {
                    break;
                }
            }
            match batches.next() {
                Some(batch) => {
                    let batch = batch?;
                    read_points += batch.len() as u64;
                    queue.push_back(batch);
                }
                None => exhausted = true,
            }
        }
        if queue.is_empty() {
            if exhausted {
                break;
            }
            std::thread::sleep(Duration::from_millis(2));
            continue;
        }
        let report = updater.run_frame_updates(&mut queue, BudgetClock::start(config.budget))?;
        for event in updater.drain_events() {
            log.push(&StreamMessage::from(event));
        }
        summary.frames += 1;
        summary.batches += report.batches as u64;
        summary.points += report.points;
        let tree = updater.tree().stats();
        log.push(&StreamMessage::StatsTick(StatsTick {
            frame: summary.frames as u32,
            points: tree.points,
            voxels: tree.voxels,
            nodes: tree.nodes as u32,
            update_ms: report.elapsed.as_secs_f32() * 1e3,
        }));
    }
    summary.messages = log.len() + 1;
    summary.nodes = if summary.points == 0 { 0 } else { updater.tree().len() };
    Ok((summary, updater))
}

struct Clients {
    active: Mutex<usize>,
    changed: Condvar,
}

/// WebSocket endpoint; every connection replays the log from the start and
/// then follows it live, one binary frame per message.
pub struct Server {
    addr: SocketAddr,
    log: Arc<EventLog>,
    stop: Arc<AtomicBool>,
    clients: Arc<Clients>,
    acceptor: Option<JoinHandle<()>>,
}

impl Server {
    pub fn bind(addr: impl std::net::ToSocketAddrs, log: Arc<EventLog>) -> Result<Self, ServiceError> {
        let listener = TcpListener::bind(addr).map_err(ServiceError::Bind)?;
        let addr = listener.local_addr().map_err(ServiceError::Bind)?;
        let stop = Arc::new(AtomicBool::new(false));
        let clients = Arc::new(Clients {
            active: Mutex::new(0),
            changed: Condvar::new(),
        });
        let acceptor = {
            let (log, stop, clients) = (log.clone(), stop.clone(), clients.clone());
            std::thread::spawn(move || {
                for stream in listener.incoming() {
                    if stop.load(Ordering::Acquire) {
                        break;
                    }
                    let Ok(stream) = stream else { continue };
                    *clients.active.lock().unwrap() += 1;
                    let (log, clients) = (log.clone(), clients.clone());
                    std::thread::spawn(move || {
                        if let Err(e) = serve_client(stream, &log) {
                            log::debug!("client ended: {e}");
                        }
                        *clients.active.lock().unwrap() -= 1;
                        clients.changed.notify_all();
                    });
                }
            })
        };
        Ok(Self {
            addr,
            log,
            stop,
            clients,
            acceptor: Some(acceptor),
        })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn url(&self) -> String {
        format!("ws://{}", self.addr)
    }

    pub fn log(&self) -> &Arc<EventLog> {
        &self.log
    }

    pub fn active_clients(&self) -> usize {
        *self.clients.active.lock().unwrap()
    }

    /// Waits until no client is connected, or the timeout passes.
    pub fn wait_for_clients(&self, timeout: Duration) -> bool {
        let deadline = Instant::now() + timeout;
        let mut active = self.clients.active.lock().unwrap();
        while *active > 0 {
            let now = Instant::now();
            if now >= deadline {
                return false;
            }
            active = self.clients.changed.wait_timeout(active, deadline - now).unwrap().0;
        }
        true
    }

    pub fn shutdown(mut self) {
        self.stop_acceptor();
    }

    fn stop_acceptor(&mut self) {
        if let Some(h) = self.acceptor.take() {
            self.stop.store(true, Ordering::Release);
            let _ = TcpStream::connect(self.addr);
            let _ = h.join();
        }
    }
}

impl Drop for Server {
    fn drop(&mut self) {
        self.stop_acceptor();
    }
}

fn serve_client(stream: TcpStream, log: &EventLog) -> Result<(), ServiceError> {
    stream.set_nodelay(true).ok();
    let mut ws = tungstenite::accept(stream).map_err(|e| ServiceError::Handshake(e.to_string()))?;
    let mut cursor = 0;
    while let Some(frames) = log.wait_from(cursor, Duration::from_millis(200)) {
        for frame in &frames {
            ws.write(Message::Binary(frame.clone()))?;
        }
        ws.flush()?;
        cursor += frames.len();
    }
    ws.close(None)?;
    // Drain until the peer acknowledges the close.
    loop {
        match ws.read() {
            Ok(_) => {}
            Err(tungstenite::Error::ConnectionClosed) | Err(tungstenite::Error::AlreadyClosed) => break,
            Err(e) => return Err(e.into()),
        }
    }
    Ok(())
}

/// Connects to a server and applies every message until end of stream.
/// `on_message` sees each decoded message before it is applied.
pub fn mirror_from(url: &str, mut on_message: impl FnMut(&StreamMessage)) -> Result<Mirror, ServiceError> {
    let (mut ws, _) = tungstenite::connect(url)?;
    let mut mirror = Mirror::new();
    while !mirror.is_ended() {
        match ws.read()? {
            Message::Binary(bytes) => {
                let msg = StreamMessage::decode(&bytes).map_err(super::mirror::ProtocolViolation::from)?;
                on_message(&msg);
                mirror.apply(msg)?;
            }
            Message::Close(_) => break,
            _ => {}
        }
    }
    let _ = ws.close(None);
    loop {
        match ws.read() {
            Ok(_) => {}
            Err(_) => break,
        }
    }
    Ok(mirror)
}
