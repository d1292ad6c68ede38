use std::collections::{HashMap, VecDeque};
use std::io::ErrorKind;
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use log::{debug, info, warn};
use tungstenite::{Message, WebSocket};

use super::channels::{Broadcast, DropOldestQueue, Mailbox};
use super::wire::{Reply, ServerMessage};
use super::{Analysis, AnalysisInput, AudioParams, Command, EngineConfig, Simulation, Snapshot};
use crate::acoustics::{ObserverConfig, SpectralPeakSet};
use crate::error::{Error, Result};

const DEDUP_WINDOW: usize = 1024;
const COMMAND_REPLY_TIMEOUT: Duration = Duration::from_secs(5);

type CommandReply = std::result::Result<(), String>;

#[derive(Debug)]
struct PendingCommand {
    command: Command,
    reply: Sender<CommandReply>,
}

#[derive(Debug, Default)]
struct Shared {
    shutdown: AtomicBool,
    snapshots: Broadcast<Arc<Snapshot>>,
    audio: Broadcast<Arc<AudioParams>>,
    latest_analysis: Mailbox<(f64, SpectralPeakSet)>,
    observer: Mailbox<ObserverConfig>,
    overruns: AtomicU64,
    applied_commands: AtomicU64,
}

/// A running engine: simulation and analysis threads, plus an optional
/// socket listener.
#[derive(Debug)]
pub struct ServerHandle {
    shared: Arc<Shared>,
    commands: Sender<PendingCommand>,
    local_addr: Option<SocketAddr>,
    threads: Vec<JoinHandle<()>>,
}

impl ServerHandle {
    pub fn local_addr(&self) -> Option<SocketAddr> {
        self.local_addr
    }

    /// Applies a command at the next step boundary and waits for the verdict.
    pub fn submit(&self, command: Command) -> CommandReply {
        submit(&self.commands, command)
    }

    pub fn subscribe_snapshots(&self) -> Arc<Mailbox<Arc<Snapshot>>> {
        self.shared.snapshots.subscribe()
    }

    pub fn subscribe_audio(&self) -> Arc<Mailbox<Arc<AudioParams>>> {
        self.shared.audio.subscribe()
    }

    pub fn latest_snapshot(&self) -> Option<Arc<Snapshot>> {
        self.shared.snapshots.latest()
    }

    pub fn overruns(&self) -> u64 {
        self.shared.overruns.load(Ordering::Relaxed)
    }

    pub fn is_running(&self) -> bool {
        !self.shared.shutdown.load(Ordering::Relaxed)
    }

    pub fn shutdown(mut self) {
        self.stop();
    }

    /// Blocks until the engine stops.
    pub fn wait(mut self) {
        for t in self.threads.drain(..) {
            let _ = t.join();
        }
    }

    fn stop(&mut self) {
        self.shared.shutdown.store(true, Ordering::Relaxed);
        if let Some(addr) = self.local_addr {
            // wake the blocking accept
            let _ = TcpStream::connect_timeout(&addr, Duration::from_millis(200));
        }
        for t in self.threads.drain(..) {
            let _ = t.join();
        }
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        self.stop();
    }
}

fn submit(commands: &Sender<PendingCommand>, command: Command) -> CommandReply {
    let (tx, rx) = mpsc::channel();
    commands
        .send(PendingCommand { command, reply: tx })
        .map_err(|_| "engine stopped".to_string())?;
    rx.recv_timeout(COMMAND_REPLY_TIMEOUT)
        .map_err(|_| "engine did not answer".to_string())?
}

/// Starts the engine threads; with `listen` set, also accepts socket clients.
pub fn serve(config: EngineConfig, listen: Option<&str>) -> Result<ServerHandle> {
    let simulation = Simulation::new(config.clone())?;
    let analysis = Analysis::new(&config)?;
    let listener = match listen {
        Some(addr) => Some(TcpListener::bind(addr)?),
        None => None,
    };
    let local_addr = listener.as_ref().map(|l| l.local_addr()).transpose()?;
    let shared = Arc::new(Shared::default());
    let fifo = Arc::new(DropOldestQueue::new(config.force_queue_capacity));
    let (commands, command_rx) = mpsc::channel();

    let mut threads = Vec::new();
    {
        let shared = shared.clone();
        let fifo = fifo.clone();
        threads.push(
            thread::Builder::new()
                .name("simulation".into())
                .spawn(move || simulation_task(simulation, shared, fifo, command_rx))
                .map_err(Error::from)?,
        );
    }
    {
        let shared = shared.clone();
        threads.push(
            thread::Builder::new()
                .name("analysis".into())
                .spawn(move || analysis_task(analysis, shared, fifo))
                .map_err(Error::from)?,
        );
    }
    if let Some(listener) = listener {
        let shared = shared.clone();
        let commands = commands.clone();
        info!("listening on {}", local_addr.map(|a| a.to_string()).unwrap_or_default());
        threads.push(
            thread::Builder::new()
                .name("accept".into())
                .spawn(move || accept_task(listener, shared, commands))
                .map_err(Error::from)?,
        );
    }
    Ok(ServerHandle {
        shared,
        commands,
        local_addr,
        threads,
    })
}

/// Runs the service until the process is interrupted.
pub fn run_loop(config: EngineConfig, listen: Option<&str>) -> Result<()> {
    let handle = serve(config, listen)?;
    handle.wait();
    Ok(())
}

fn publish_snapshot(sim: &Simulation, shared: &Shared, fifo: &DropOldestQueue<AnalysisInput>) {
    let (p_prime, peaks) = shared.latest_analysis.peek().unwrap_or_default();
    let snapshot = sim.snapshot(p_prime, peaks, shared.overruns.load(Ordering::Relaxed), fifo.dropped());
    shared.snapshots.publish(Arc::new(snapshot));
}

fn simulation_task(
    mut sim: Simulation,
    shared: Arc<Shared>,
    fifo: Arc<DropOldestQueue<AnalysisInput>>,
    commands: Receiver<PendingCommand>,
) {
    let budget = Duration::from_secs_f64(1.0 / sim.config().target_steps_per_second as f64);
    let stride = sim.config().snapshot_stride as u64;
    publish_snapshot(&sim, &shared, &fifo);
    while !shared.shutdown.load(Ordering::Relaxed) {
        let started = Instant::now();
        let mut changed = false;
        loop {
            let pending = if sim.is_paused() && !changed {
                match commands.recv_timeout(Duration::from_millis(20)) {
                    Ok(p) => Some(p),
                    Err(RecvTimeoutError::Timeout) => None,
                    Err(RecvTimeoutError::Disconnected) => return,
                }
            } else {
                commands.try_recv().ok()
            };
            let Some(pending) = pending else { break };
            let outcome = sim.apply(&pending.command);
            if let Ok(Some(AnalysisInput::Observer(o))) = &outcome {
                shared.observer.put(o.clone());
            }
            if outcome.is_ok() {
                changed = true;
                shared.applied_commands.fetch_add(1, Ordering::Relaxed);
            }
            let _ = pending.reply.send(outcome.map(|_| ()));
        }
        if changed {
            publish_snapshot(&sim, &shared, &fifo);
        }
        if sim.is_paused() {
            continue;
        }
        match sim.step() {
            Ok(input) => {
                fifo.push(input);
                if sim.state().step_count.is_multiple_of(stride) {
                    publish_snapshot(&sim, &shared, &fifo);
                }
            }
            Err(_) => {
                publish_snapshot(&sim, &shared, &fifo);
                continue;
            }
        }
        let elapsed = started.elapsed();
        if elapsed < budget {
            thread::sleep(budget - elapsed);
        } else {
            let n = shared.overruns.fetch_add(1, Ordering::Relaxed) + 1;
            if n.is_power_of_two() {
                debug!("step budget missed {n} times ({:.1} ms this step)", elapsed.as_secs_f64() * 1e3);
            }
        }
    }
}

fn analysis_task(mut analysis: Analysis, shared: Arc<Shared>, fifo: Arc<DropOldestQueue<AnalysisInput>>) {
    while !shared.shutdown.load(Ordering::Relaxed) {
        if let Some(o) = shared.observer.take() {
            let _ = analysis.process(AnalysisInput::Observer(o));
        }
        let Some(input) = fifo.pop_timeout(Duration::from_millis(20)) else { continue };
        match analysis.process(input) {
            Ok(Some(params)) => {
                shared.latest_analysis.put((params.p_prime, params.peaks.clone()));
                shared.audio.publish(Arc::new(params));
            }
            Ok(None) => {}
            Err(e) => warn!("analysis: {e}"),
        }
    }
}

fn accept_task(listener: TcpListener, shared: Arc<Shared>, commands: Sender<PendingCommand>) {
    let mut clients = Vec::new();
    for stream in listener.incoming() {
        if shared.shutdown.load(Ordering::Relaxed) {
            break;
        }
        let Ok(stream) = stream else { continue };
        let shared = shared.clone();
        let commands = commands.clone();
        clients.retain(|c: &JoinHandle<()>| !c.is_finished());
        match thread::Builder::new()
            .name("client".into())
            .spawn(move || client_task(stream, shared, commands))
        {
            Ok(h) => clients.push(h),
            Err(e) => warn!("could not spawn client thread: {e}"),
        }
    }
    for c in clients {
        let _ = c.join();
    }
}

fn send(ws: &mut WebSocket<TcpStream>, message: &ServerMessage) -> bool {
    ws.send(Message::text(message.to_json())).is_ok()
}

/// Answers a client command, applying each sequence number at most once.
struct Dedup {
    replies: HashMap<u64, ServerMessage>,
    order: VecDeque<u64>,
}

impl Dedup {
    fn new() -> Self {
        Self {
            replies: HashMap::new(),
            order: VecDeque::new(),
        }
    }

    fn handle(&mut self, raw: &str, commands: &Sender<PendingCommand>) -> ServerMessage {
        match Reply::parse(raw) {
            Reply::Rejected(msg) => msg,
            Reply::Accepted { seq, command } => {
                if let Some(previous) = self.replies.get(&seq) {
                    return previous.clone();
                }
                let reply = match submit(commands, command) {
                    Ok(()) => ServerMessage::Ack { seq },
                    Err(detail) => ServerMessage::Reject {
                        seq: Some(seq),
                        reason: "invalid_command".into(),
                        detail: Some(detail),
                    },
                };
                self.replies.insert(seq, reply.clone());
                self.order.push_back(seq);
                if self.order.len() > DEDUP_WINDOW {
                    if let Some(old) = self.order.pop_front() {
                        self.replies.remove(&old);
                    }
                }
                reply
            }
        }
    }
}

fn client_task(stream: TcpStream, shared: Arc<Shared>, commands: Sender<PendingCommand>) {
    let peer = stream.peer_addr().ok();
    let _ = stream.set_nodelay(true);
    let mut ws = match tungstenite::accept(stream) {
        Ok(ws) => ws,
        Err(e) => {
            debug!("handshake with {peer:?} failed: {e}");
            return;
        }
    };
    let _ = ws.get_mut().set_read_timeout(Some(Duration::from_millis(10)));
    let snapshots = shared.snapshots.subscribe();
    let audio = shared.audio.subscribe();
    let mut dedup = Dedup::new();
    let mut last_step: Option<(u64, u64)> = None;
    while !shared.shutdown.load(Ordering::Relaxed) {
        match ws.read() {
            Ok(Message::Text(text)) => {
                let reply = dedup.handle(text.as_str(), &commands);
                if !send(&mut ws, &reply) {
                    break;
                }
            }
            Ok(Message::Close(_)) => break,
            Ok(_) => {}
            Err(tungstenite::Error::Io(e)) if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut) => {}
            Err(e) => {
                debug!("client {peer:?}: {e}");
                break;
            }
        }
        if let Some(a) = audio.take() {
            if !send(&mut ws, &ServerMessage::from(a.as_ref())) {
                break;
            }
        }
        if let Some(s) = snapshots.take() {
            // step counts only move forward within an epoch
            let key = (s.epoch, s.step);
            if last_step.is_none_or(|k| key >= k) {
                last_step = Some(key);
                if !send(&mut ws, &ServerMessage::from(s.as_ref())) {
                    break;
                }
            }
        }
    }
    let _ = ws.close(None);
    let _ = ws.flush();
}
