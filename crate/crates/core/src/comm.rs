//! Wire protocol and message fabric between agents.
//!
//! Frames are length-prefixed: `[len u32][kind u8][sender u16][seq u64]`
//! followed by the payload, everything little-endian. Tokens travel as 32
//! lowercase hex ASCII bytes, so a frame never contains private fact
//! names. Sequence numbers are per-sender and strictly increasing; both
//! fabrics deliver per-channel FIFO.

use std::cell::RefCell;
use std::collections::VecDeque;
use std::rc::Rc;
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use crate::model::{AgentId, FactId, FactSet, State, Token};

pub const KIND_STATE: u8 = 1;
pub const KIND_TRACEBACK_REQUEST: u8 = 2;
pub const KIND_TRACEBACK_SEGMENT: u8 = 3;
pub const KIND_IDLE: u8 = 4;
pub const KIND_RESUME: u8 = 5;
pub const KIND_TERMINATE: u8 = 6;
pub const KIND_SOLUTION_FOUND: u8 = 7;

/// One action reference inside a transmitted plan or plan segment.
/// Private actions carry an opaque label instead of their name.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct PlanStep {
    pub agent: AgentId,
    pub label: String,
}

#[derive(Clone, PartialEq, Debug)]
pub enum Message {
    /// Encrypted public state with its accumulated cost. `node` is the
    /// sender-local node id, echoed back for traceback.
    State { node: u64, g: f64, state: State },
    /// Ask the recipient to trace its node back towards the root.
    TracebackRequest { node: u64 },
    /// Reversed path segment; `continuation` names the next agent and its
    /// node when the segment bottoms out at a received state.
    TracebackSegment { steps: Vec<PlanStep>, continuation: Option<(AgentId, u64)> },
    /// Out of work; carries cumulative state-message counters per channel.
    Idle { sent: Vec<u64>, received: Vec<u64> },
    Resume,
    Terminate,
    SolutionFound { cost: f64, steps: Vec<PlanStep> },
}

impl Message {
    pub fn kind(&self) -> u8 {
        match self {
            Message::State { .. } => KIND_STATE,
            Message::TracebackRequest { .. } => KIND_TRACEBACK_REQUEST,
            Message::TracebackSegment { .. } => KIND_TRACEBACK_SEGMENT,
            Message::Idle { .. } => KIND_IDLE,
            Message::Resume => KIND_RESUME,
            Message::Terminate => KIND_TERMINATE,
            Message::SolutionFound { .. } => KIND_SOLUTION_FOUND,
        }
    }
}

#[derive(Clone, PartialEq, Debug)]
pub struct Envelope {
    pub sender: AgentId,
    pub seq: u64,
    pub msg: Message,
}

#[derive(thiserror::Error, Debug, PartialEq, Eq)]
pub enum WireError {
    #[error("frame truncated at byte {at}")]
    Truncated { at: usize },
    #[error("unknown message kind {0}")]
    UnknownKind(u8),
    #[error("frame length field disagrees with payload")]
    LengthMismatch,
    #[error("malformed token encoding")]
    BadToken,
    #[error("plan step label is not valid utf-8")]
    BadLabel,
    #[error("fact id {0} outside the problem universe")]
    FactOutOfRange(u32),
}

struct Cursor<'a> {
    buf: &'a [u8],
    at: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], WireError> {
        if self.at + n > self.buf.len() {
            return Err(WireError::Truncated { at: self.at });
        }
        let s = &self.buf[self.at..self.at + n];
        self.at += n;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8, WireError> {
        Ok(self.take(1)?[0])
    }
    fn u16(&mut self) -> Result<u16, WireError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }
    fn u32(&mut self) -> Result<u32, WireError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64, WireError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64, WireError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn done(&self) -> bool {
        self.at == self.buf.len()
    }
}

fn put_steps(out: &mut Vec<u8>, steps: &[PlanStep]) {
    out.extend((steps.len() as u32).to_le_bytes());
    for s in steps {
        out.extend(s.agent.0.to_le_bytes());
        out.extend((s.label.len() as u16).to_le_bytes());
        out.extend(s.label.as_bytes());
    }
}

fn get_steps(c: &mut Cursor) -> Result<Vec<PlanStep>, WireError> {
    let n = c.u32()? as usize;
    let mut steps = Vec::with_capacity(n.min(1024));
    for _ in 0..n {
        let agent = AgentId(c.u16()?);
        let len = c.u16()? as usize;
        let label = std::str::from_utf8(c.take(len)?)
            .map_err(|_| WireError::BadLabel)?
            .to_string();
        steps.push(PlanStep { agent, label });
    }
    Ok(steps)
}

/// Serialize an envelope into one frame.
pub fn encode(env: &Envelope) -> Vec<u8> {
    let mut body = Vec::with_capacity(32);
    body.push(env.msg.kind());
    body.extend(env.sender.0.to_le_bytes());
    body.extend(env.seq.to_le_bytes());
    match &env.msg {
        Message::State { node, g, state } => {
            body.extend(node.to_le_bytes());
            body.extend(g.to_le_bytes());
            let ids: Vec<FactId> = state.plain.iter().collect();
            body.extend((ids.len() as u32).to_le_bytes());
            for id in ids {
                body.extend(id.0.to_le_bytes());
            }
            body.push(state.tokens.len() as u8);
            for (agent, token) in &state.tokens {
                body.extend(agent.0.to_le_bytes());
                body.extend(token.to_hex().as_bytes());
            }
        }
        Message::TracebackRequest { node } => body.extend(node.to_le_bytes()),
        Message::TracebackSegment { steps, continuation } => {
            put_steps(&mut body, steps);
            match continuation {
                None => body.push(0),
                Some((agent, node)) => {
                    body.push(1);
                    body.extend(agent.0.to_le_bytes());
                    body.extend(node.to_le_bytes());
                }
            }
        }
        Message::Idle { sent, received } => {
            body.extend((sent.len() as u16).to_le_bytes());
            for v in sent.iter().chain(received) {
                body.extend(v.to_le_bytes());
            }
        }
        Message::Resume | Message::Terminate => {}
        Message::SolutionFound { cost, steps } => {
            body.extend(cost.to_le_bytes());
            put_steps(&mut body, steps);
        }
    }
    let mut frame = Vec::with_capacity(body.len() + 4);
    frame.extend((body.len() as u32).to_le_bytes());
    frame.extend(body);
    frame
}

/// Parse one frame. `n_facts` bounds the fact ids a state may mention.
pub fn decode(frame: &[u8], n_facts: usize) -> Result<Envelope, WireError> {
    let mut c = Cursor { buf: frame, at: 0 };
    let len = c.u32()? as usize;
    if len != frame.len() - 4 {
        return Err(WireError::LengthMismatch);
    }
    let kind = c.u8()?;
    let sender = AgentId(c.u16()?);
    let seq = c.u64()?;
    let msg = match kind {
        KIND_STATE => {
            let node = c.u64()?;
            let g = c.f64()?;
            let n = c.u32()? as usize;
            let mut plain = FactSet::new(n_facts);
            for _ in 0..n {
                let id = c.u32()?;
                if id as usize >= n_facts {
                    return Err(WireError::FactOutOfRange(id));
                }
                plain.insert(FactId(id));
            }
            let mut state = State::new(plain);
            let n_tokens = c.u8()? as usize;
            for _ in 0..n_tokens {
                let agent = AgentId(c.u16()?);
                let hex = std::str::from_utf8(c.take(32)?).map_err(|_| WireError::BadToken)?;
                let token = Token::from_hex(hex).ok_or(WireError::BadToken)?;
                state.tokens.insert(agent, token);
            }
            Message::State { node, g, state }
        }
        KIND_TRACEBACK_REQUEST => Message::TracebackRequest { node: c.u64()? },
        KIND_TRACEBACK_SEGMENT => {
            let steps = get_steps(&mut c)?;
            let continuation = match c.u8()? {
                0 => None,
                _ => Some((AgentId(c.u16()?), c.u64()?)),
            };
            Message::TracebackSegment { steps, continuation }
        }
        KIND_IDLE => {
            let n = c.u16()? as usize;
            let mut sent = Vec::with_capacity(n);
            let mut received = Vec::with_capacity(n);
            for _ in 0..n {
                sent.push(c.u64()?);
            }
            for _ in 0..n {
                received.push(c.u64()?);
            }
            Message::Idle { sent, received }
        }
        KIND_RESUME => Message::Resume,
        KIND_TERMINATE => Message::Terminate,
        KIND_SOLUTION_FOUND => {
            let cost = c.f64()?;
            let steps = get_steps(&mut c)?;
            Message::SolutionFound { cost, steps }
        }
        other => return Err(WireError::UnknownKind(other)),
    };
    if !c.done() {
        return Err(WireError::LengthMismatch);
    }
    Ok(Envelope { sender, seq, msg })
}

/// Copy of every frame that crossed the fabric, for leak scanning.
#[derive(Default)]
pub struct WireLog {
    pub frames: Vec<WireFrame>,
}

pub struct WireFrame {
    pub from: AgentId,
    pub to: AgentId,
    pub bytes: Vec<u8>,
}

/// Message fabric seen from one agent.
pub trait Net {
    fn me(&self) -> AgentId;
    fn num_agents(&self) -> usize;
    fn send(&mut self, to: AgentId, msg: &Message);
    fn broadcast(&mut self, msg: &Message) {
        for i in 0..self.num_agents() {
            let to = AgentId(i as u16);
            if to != self.me() {
                self.send(to, msg);
            }
        }
    }
    /// All frames queued for this agent, oldest first.
    fn drain(&mut self) -> Vec<Envelope>;
    /// Block until at least one frame is available or the timeout passes,
    /// then drain. The in-process fabric never blocks.
    fn park_drain(&mut self, timeout: Duration) -> Vec<Envelope>;
}

/// Single-threaded fabric: queues live in one shared bus and delivery
/// order is the send order.
pub struct BusInner {
    queues: Vec<VecDeque<Vec<u8>>>,
    capture: Option<WireLog>,
    n_facts: usize,
}

impl BusInner {
    pub fn take_capture(&mut self) -> Option<WireLog> {
        self.capture.take()
    }
}

pub type Bus = Rc<RefCell<BusInner>>;

pub fn new_bus(n_agents: usize, n_facts: usize, capture: bool) -> Bus {
    Rc::new(RefCell::new(BusInner {
        queues: (0..n_agents).map(|_| VecDeque::new()).collect(),
        capture: capture.then(WireLog::default),
        n_facts,
    }))
}

pub struct DetNet {
    pub me: AgentId,
    bus: Bus,
    next_seq: u64,
}

impl DetNet {
    pub fn new(me: AgentId, bus: Bus) -> DetNet {
        DetNet { me, bus, next_seq: 0 }
    }
}

impl Net for DetNet {
    fn me(&self) -> AgentId {
        self.me
    }
    fn num_agents(&self) -> usize {
        self.bus.borrow().queues.len()
    }
    fn send(&mut self, to: AgentId, msg: &Message) {
        let env = Envelope { sender: self.me, seq: self.next_seq, msg: msg.clone() };
        self.next_seq += 1;
        let frame = encode(&env);
        let mut bus = self.bus.borrow_mut();
        if let Some(log) = &mut bus.capture {
            log.frames.push(WireFrame { from: self.me, to, bytes: frame.clone() });
        }
        bus.queues[to.0 as usize].push_back(frame);
    }
    fn drain(&mut self) -> Vec<Envelope> {
        let mut bus = self.bus.borrow_mut();
        let n_facts = bus.n_facts;
        bus.queues[self.me.0 as usize]
            .drain(..)
            .map(|f| decode(&f, n_facts).expect("in-process frames decode"))
            .collect()
    }
    fn park_drain(&mut self, _timeout: Duration) -> Vec<Envelope> {
        self.drain()
    }
}

/// One-thread-per-agent fabric over standard channels.
pub struct ThreadNet {
    pub me: AgentId,
    senders: Vec<Option<Sender<Vec<u8>>>>,
    inbox: Receiver<Vec<u8>>,
    capture: Option<Arc<Mutex<WireLog>>>,
    next_seq: u64,
    n_facts: usize,
}

/// Build a connected mesh of thread fabrics, one per agent.
pub fn thread_mesh(
    n_agents: usize,
    n_facts: usize,
    capture: Option<Arc<Mutex<WireLog>>>,
) -> Vec<ThreadNet> {
    let mut txs = Vec::with_capacity(n_agents);
    let mut rxs = Vec::with_capacity(n_agents);
    for _ in 0..n_agents {
        let (tx, rx) = mpsc::channel();
        txs.push(tx);
        rxs.push(rx);
    }
    rxs.into_iter()
        .enumerate()
        .map(|(i, inbox)| ThreadNet {
            me: AgentId(i as u16),
            senders: txs
                .iter()
                .enumerate()
                .map(|(j, tx)| (j != i).then(|| tx.clone()))
                .collect(),
            inbox,
            capture: capture.clone(),
            next_seq: 0,
            n_facts,
        })
        .collect()
}

impl Net for ThreadNet {
    fn me(&self) -> AgentId {
        self.me
    }
    fn num_agents(&self) -> usize {
        self.senders.len()
    }
    fn send(&mut self, to: AgentId, msg: &Message) {
        let env = Envelope { sender: self.me, seq: self.next_seq, msg: msg.clone() };
        self.next_seq += 1;
        let frame = encode(&env);
        if let Some(log) = &self.capture {
            log.lock().unwrap().frames.push(WireFrame {
                from: self.me,
                to,
                bytes: frame.clone(),
            });
        }
        if let Some(tx) = &self.senders[to.0 as usize] {
            // A peer that already exited dropped its receiver; its view of
            // the run is final and the frame can be discarded.
            let _ = tx.send(frame);
        }
    }
    fn drain(&mut self) -> Vec<Envelope> {
        let mut out = Vec::new();
        while let Ok(frame) = self.inbox.try_recv() {
            out.push(decode(&frame, self.n_facts).expect("in-process frames decode"));
        }
        out
    }
    fn park_drain(&mut self, timeout: Duration) -> Vec<Envelope> {
        let mut out = Vec::new();
        match self.inbox.recv_timeout(timeout) {
            Ok(frame) => out.push(decode(&frame, self.n_facts).expect("in-process frames decode")),
            Err(RecvTimeoutError::Timeout) | Err(RecvTimeoutError::Disconnected) => return out,
        }
        out.extend(self.drain());
        out
    }
}

/// Distributed quiescence detector, pure decision logic.
///
/// Only state messages count. An agent announces idle with a snapshot of
/// its cumulative per-channel counters and announces resume before doing
/// anything else once work appears. The whole system is finished exactly
/// when everyone is idle and, for every channel, the sender's reported
/// sends equal the receiver's reported receipts; an in-flight state
/// message always leaves some pair unequal, and FIFO delivery keeps a
/// stale idle snapshot from surviving past the resume that follows it.
pub struct TerminationTracker {
    me: usize,
    sent: Vec<u64>,
    received: Vec<u64>,
    peer_idle: Vec<bool>,
    peer_sent: Vec<Vec<u64>>,
    peer_received: Vec<Vec<u64>>,
    announced_idle: bool,
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum TerminationAction {
    Continue,
    /// Caller must broadcast an idle announcement with `idle_payload`.
    AnnounceIdle,
    /// Caller must broadcast a resume announcement before any other send.
    AnnounceResume,
    /// Every agent is quiet and every channel is drained.
    Terminated,
}

impl TerminationTracker {
    pub fn new(me: AgentId, n_agents: usize) -> TerminationTracker {
        TerminationTracker {
            me: me.0 as usize,
            sent: vec![0; n_agents],
            received: vec![0; n_agents],
            peer_idle: vec![false; n_agents],
            peer_sent: vec![vec![0; n_agents]; n_agents],
            peer_received: vec![vec![0; n_agents]; n_agents],
            announced_idle: false,
        }
    }

    pub fn note_state_sent(&mut self, to: AgentId) {
        self.sent[to.0 as usize] += 1;
    }

    pub fn note_state_received(&mut self, from: AgentId) {
        self.received[from.0 as usize] += 1;
    }

    pub fn note_peer_idle(&mut self, peer: AgentId, sent: Vec<u64>, received: Vec<u64>) {
        let p = peer.0 as usize;
        self.peer_idle[p] = true;
        self.peer_sent[p] = sent;
        self.peer_received[p] = received;
    }

    pub fn note_peer_resumed(&mut self, peer: AgentId) {
        self.peer_idle[peer.0 as usize] = false;
    }

    pub fn idle_payload(&self) -> (Vec<u64>, Vec<u64>) {
        (self.sent.clone(), self.received.clone())
    }

    pub fn is_announced_idle(&self) -> bool {
        self.announced_idle
    }

    pub fn decide(&mut self, self_has_work: bool) -> TerminationAction {
        if self_has_work {
            if self.announced_idle {
                self.announced_idle = false;
                return TerminationAction::AnnounceResume;
            }
            return TerminationAction::Continue;
        }
        if !self.announced_idle {
            self.announced_idle = true;
            return TerminationAction::AnnounceIdle;
        }
        if self.all_quiet() {
            TerminationAction::Terminated
        } else {
            TerminationAction::Continue
        }
    }

    fn all_quiet(&self) -> bool {
        let n = self.sent.len();
        for p in 0..n {
            if p != self.me && !self.peer_idle[p] {
                return false;
            }
        }
        let sent_of = |a: usize, b: usize| {
            if a == self.me {
                self.sent[b]
            } else {
                self.peer_sent[a][b]
            }
        };
        let received_of = |b: usize, a: usize| {
            if b == self.me {
                self.received[a]
            } else {
                self.peer_received[b][a]
            }
        };
        for a in 0..n {
            for b in 0..n {
                if a != b && sent_of(a, b) != received_of(b, a) {
                    return false;
                }
            }
        }
        true
    }
}
