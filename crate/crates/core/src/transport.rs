//! Message-passing contract between ranks and an in-memory loopback backend.
//!
//! Point-to-point payloads are vectors of 8-byte words. Delivery is FIFO per
//! ordered (sender, receiver) pair. Collective reductions combine
//! contributions in rank order, so every rank sees a bitwise-identical
//! result; they are tallied separately from point-to-point words.

use std::sync::mpsc::{channel, Receiver, Sender};
use std::sync::{Arc, Condvar, Mutex};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TransportError {
    #[error("rank {rank} has no peer {peer}")]
    UnknownPeer { rank: usize, peer: usize },
    #[error("peer {peer} disconnected")]
    Disconnected { peer: usize },
    #[error("barrier timed out after {0:?}")]
    Timeout(Duration),
}

/// Per-endpoint traffic counters.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransportCounters {
    pub words_sent: Vec<u64>,
    pub words_received: Vec<u64>,
    pub messages_sent: u64,
    pub messages_received: u64,
    pub reductions: u64,
}

impl TransportCounters {
    fn new(size: usize) -> Self {
        Self {
            words_sent: vec![0; size],
            words_received: vec![0; size],
            ..Default::default()
        }
    }

    pub fn total_words_sent(&self) -> u64 {
        self.words_sent.iter().sum()
    }

    pub fn total_words_received(&self) -> u64 {
        self.words_received.iter().sum()
    }
}

pub trait Transport {
    fn rank(&self) -> usize;
    fn size(&self) -> usize;
    fn send(&mut self, peer: usize, words: Vec<f64>) -> Result<(), TransportError>;
    fn receive(&mut self, peer: usize) -> Result<Vec<f64>, TransportError>;
    fn barrier(&self);
    /// Element-wise sum over all ranks, combined in rank order.
    fn all_reduce_sum(&mut self, values: &[f64]) -> Result<Vec<f64>, TransportError>;
    fn counters(&self) -> &TransportCounters;
    /// Wall time spent inside transport calls since creation.
    fn time_in_transport(&self) -> Duration;
}

#[derive(Debug)]
struct CollectiveState {
    generation: u64,
    arrived: usize,
    slots: Vec<Option<Vec<f64>>>,
    result: Arc<Vec<f64>>,
}

#[derive(Debug)]
struct Collective {
    size: usize,
    state: Mutex<CollectiveState>,
    cv: Condvar,
}

impl Collective {
    fn new(size: usize) -> Self {
        Self {
            size,
            state: Mutex::new(CollectiveState {
                generation: 0,
                arrived: 0,
                slots: vec![None; size],
                result: Arc::new(Vec::new()),
            }),
            cv: Condvar::new(),
        }
    }

    /// Deposits `values` for `rank` and waits for all ranks. `None` payloads
    /// make this a plain barrier.
    fn arrive(&self, rank: usize, values: Option<Vec<f64>>, timeout: Option<Duration>) -> Result<Arc<Vec<f64>>, TransportError> {
        let mut st = self.state.lock().expect("collective lock poisoned");
        let gen = st.generation;
        st.slots[rank] = values;
        st.arrived += 1;
        if st.arrived == self.size {
            let mut sum: Option<Vec<f64>> = None;
            for slot in st.slots.iter_mut() {
                if let Some(v) = slot.take() {
                    match sum.as_mut() {
                        None => sum = Some(v),
                        Some(acc) => {
                            for (a, b) in acc.iter_mut().zip(&v) {
                                *a += b;
                            }
                        }
                    }
                }
            }
            st.result = Arc::new(sum.unwrap_or_default());
            st.arrived = 0;
            st.generation += 1;
            self.cv.notify_all();
            return Ok(st.result.clone());
        }
        let deadline = timeout.map(|t| Instant::now() + t);
        while st.generation == gen {
            match deadline {
                None => st = self.cv.wait(st).expect("collective lock poisoned"),
                Some(d) => {
                    let now = Instant::now();
                    if now >= d {
                        // withdraw so the collective stays consistent
                        st.arrived -= 1;
                        st.slots[rank] = None;
                        return Err(TransportError::Timeout(timeout.unwrap_or_default()));
                    }
                    st = self.cv.wait_timeout(st, d - now).expect("collective lock poisoned").0;
                }
            }
        }
        Ok(st.result.clone())
    }
}

/// One rank's endpoint of a [`loopback_transport`] group.
#[derive(Debug)]
pub struct LoopbackEndpoint {
    rank: usize,
    size: usize,
    senders: Vec<Option<Sender<Vec<f64>>>>,
    // wrapped so endpoints are Sync; only ever accessed through &mut self
    receivers: Vec<Option<Mutex<Receiver<Vec<f64>>>>>,
    collective: Arc<Collective>,
    counters: TransportCounters,
    jitter: Option<ChaCha8Rng>,
    busy: Duration,
}

impl LoopbackEndpoint {
    /// Barrier that gives up after `timeout`.
    pub fn barrier_timeout(&self, timeout: Duration) -> Result<(), TransportError> {
        self.collective.arrive(self.rank, None, Some(timeout)).map(|_| ())
    }

    fn perturb(&mut self) {
        if let Some(rng) = self.jitter.as_mut() {
            for _ in 0..rng.gen_range(0..3) {
                std::thread::yield_now();
            }
        }
    }

    fn peer_index(&self, peer: usize) -> Result<usize, TransportError> {
        if peer >= self.size || peer == self.rank {
            Err(TransportError::UnknownPeer { rank: self.rank, peer })
        } else {
            Ok(peer)
        }
    }
}

impl Transport for LoopbackEndpoint {
    fn rank(&self) -> usize {
        self.rank
    }

    fn size(&self) -> usize {
        self.size
    }

    fn send(&mut self, peer: usize, words: Vec<f64>) -> Result<(), TransportError> {
        let start = Instant::now();
        let peer = self.peer_index(peer)?;
        self.perturb();
        let n = words.len() as u64;
        self.senders[peer]
            .as_ref()
            .expect("sender present for every peer")
            .send(words)
            .map_err(|_| TransportError::Disconnected { peer })?;
        self.counters.words_sent[peer] += n;
        self.counters.messages_sent += 1;
        self.busy += start.elapsed();
        Ok(())
    }

    fn receive(&mut self, peer: usize) -> Result<Vec<f64>, TransportError> {
        let start = Instant::now();
        let peer = self.peer_index(peer)?;
        let words = self.receivers[peer]
            .as_mut()
            .expect("receiver present for every peer")
            .get_mut()
            .expect("receiver lock poisoned")
            .recv()
            .map_err(|_| TransportError::Disconnected { peer })?;
        self.counters.words_received[peer] += words.len() as u64;
        self.counters.messages_received += 1;
        self.busy += start.elapsed();
        Ok(words)
    }

    fn barrier(&self) {
        self.collective
            .arrive(self.rank, None, None)
            .expect("untimed barrier cannot time out");
    }

    fn all_reduce_sum(&mut self, values: &[f64]) -> Result<Vec<f64>, TransportError> {
        let start = Instant::now();
        self.perturb();
        let out = self.collective.arrive(self.rank, Some(values.to_vec()), None)?;
        self.counters.reductions += 1;
        self.busy += start.elapsed();
        Ok(out.as_ref().clone())
    }

    fn counters(&self) -> &TransportCounters {
        &self.counters
    }

    fn time_in_transport(&self) -> Duration {
        self.busy
    }
}

/// `size` connected in-memory endpoints, index = rank.
///
/// With `Some(seed)`, each endpoint yields the CPU a seeded pseudo-random
/// number of times before sends and reductions, perturbing the thread
/// interleaving. Results do not depend on the interleaving.
pub fn loopback_transport(size: usize, seed: Option<u64>) -> Vec<LoopbackEndpoint> {
    assert!(size >= 1, "transport needs at least one rank");
    let collective = Arc::new(Collective::new(size));
    let mut senders: Vec<Vec<Option<Sender<Vec<f64>>>>> = (0..size).map(|_| vec![None; size]).collect();
    let mut receivers: Vec<Vec<Option<Mutex<Receiver<Vec<f64>>>>>> =
        (0..size).map(|_| (0..size).map(|_| None).collect()).collect();
    for src in 0..size {
        for dst in 0..size {
            if src != dst {
                let (tx, rx) = channel();
                senders[src][dst] = Some(tx);
                receivers[dst][src] = Some(Mutex::new(rx));
            }
        }
    }
    senders
        .into_iter()
        .zip(receivers)
        .enumerate()
        .map(|(rank, (senders, receivers))| LoopbackEndpoint {
            rank,
            size,
            senders,
            receivers,
            collective: collective.clone(),
            counters: TransportCounters::new(size),
            jitter: seed.map(|s| ChaCha8Rng::seed_from_u64(s ^ (rank as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))),
            busy: Duration::ZERO,
        })
        .collect()
}
