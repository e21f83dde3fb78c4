//! Event consolidation: dedup, translate, apply.
//!
//! Sources are line streams (files, stdin, TCP connections). Any number of
//! TCP connections may feed a listener; their lines are funnelled through a
//! channel to one writer that owns the store's write lock per event.

use std::fs::File;
use std::io::{self, BufRead, BufReader};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::ops::AddAssign;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc;
use std::sync::Arc;
use std::thread;
use std::time::Duration;

use serde::Serialize;
use thiserror::Error;

use crate::event::{translate, EventEnvelope};
use crate::store::{ProvGraph, SharedGraph, Stamp, StoreError};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct IngestStats {
    pub events_seen: u64,
    pub events_duplicated: u64,
    pub events_rejected: u64,
    pub nodes_upserted: u64,
    pub edges_inserted: u64,
    pub placeholders_created: u64,
    pub placeholders_resolved: u64,
}

impl AddAssign for IngestStats {
    fn add_assign(&mut self, o: Self) {
        self.events_seen += o.events_seen;
        self.events_duplicated += o.events_duplicated;
        self.events_rejected += o.events_rejected;
        self.nodes_upserted += o.nodes_upserted;
        self.edges_inserted += o.edges_inserted;
        self.placeholders_created += o.placeholders_created;
        self.placeholders_resolved += o.placeholders_resolved;
    }
}

#[derive(Debug, Error)]
pub enum IngestError {
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("cannot read {path}: {source}")]
    Source { path: PathBuf, source: io::Error },
    #[error("cannot bind {addr}: {source}")]
    Bind { addr: String, source: io::Error },
    #[error("read failed: {0}")]
    Io(#[from] io::Error),
}

/// Where events come from.
#[derive(Debug, Clone)]
pub enum Source {
    File(PathBuf),
    Stdin,
    Listen(String),
}

/// Cooperative stop signal for long-running sources.
#[derive(Debug, Clone, Default)]
pub struct Shutdown(Arc<AtomicBool>);

impl Shutdown {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn trigger(&self) {
        self.0.store(true, Ordering::SeqCst);
    }

    pub fn is_triggered(&self) -> bool {
        self.0.load(Ordering::SeqCst)
    }
}

/// Apply one envelope. Malformed or conflicting events are counted as
/// rejected; only storage failures are returned as errors.
pub fn ingest_event(graph: &mut ProvGraph, envelope: &EventEnvelope) -> Result<IngestStats, StoreError> {
    let mut stats = IngestStats {
        events_seen: 1,
        ..Default::default()
    };
    if graph.has_seen(&envelope.event_id) {
        stats.events_duplicated = 1;
        return Ok(stats);
    }
    let prepared = translate(envelope).and_then(|delta| Ok((delta, envelope.emitted_at()?)));
    let (delta, at) = match prepared {
        Ok(p) => p,
        Err(e) => {
            log::warn!("rejected event {}: {e}", envelope.event_id);
            stats.events_rejected = 1;
            return Ok(stats);
        }
    };
    match graph.apply_delta(&delta, &Stamp::new(at, envelope.event_id.clone())) {
        Ok(applied) => {
            stats.nodes_upserted = applied.nodes_upserted;
            stats.edges_inserted = applied.edges_inserted;
            stats.placeholders_created = applied.placeholders_created;
            stats.placeholders_resolved = applied.placeholders_resolved;
        }
        Err(e) if e.is_fatal() => return Err(e),
        Err(e) => {
            log::warn!("rejected event {}: {e}", envelope.event_id);
            stats.events_rejected = 1;
            return Ok(stats);
        }
    }
    graph.mark_seen(&envelope.event_id)?;
    graph.flush()?;
    Ok(stats)
}

/// Parse and apply one wire line. Blank lines are ignored.
pub fn ingest_line(graph: &mut ProvGraph, line: &str) -> Result<IngestStats, StoreError> {
    let line = line.trim();
    if line.is_empty() {
        return Ok(IngestStats::default());
    }
    match EventEnvelope::from_line(line) {
        Ok(envelope) => ingest_event(graph, &envelope),
        Err(e) => {
            log::warn!("rejected line: {e}");
            Ok(IngestStats {
                events_seen: 1,
                events_rejected: 1,
                ..Default::default()
            })
        }
    }
}

fn ingest_bytes(graph: &mut ProvGraph, bytes: &[u8]) -> Result<IngestStats, StoreError> {
    match std::str::from_utf8(bytes) {
        Ok(line) => ingest_line(graph, line),
        Err(_) => Ok(IngestStats {
            events_seen: 1,
            events_rejected: 1,
            ..Default::default()
        }),
    }
}

/// Ingest every line of a reader. The write lock is taken per line, so
/// concurrent readers of `graph` keep seeing whole events.
pub fn ingest_reader(graph: &SharedGraph, reader: impl BufRead) -> Result<IngestStats, IngestError> {
    let mut stats = IngestStats::default();
    for_each_line(reader, |line| {
        stats += ingest_bytes(&mut graph.write(), line)?;
        Ok(())
    })?;
    Ok(stats)
}

fn for_each_line(
    mut reader: impl BufRead,
    mut f: impl FnMut(&[u8]) -> Result<(), IngestError>,
) -> Result<(), IngestError> {
    let mut buf = Vec::new();
    loop {
        buf.clear();
        if reader.read_until(b'\n', &mut buf)? == 0 {
            return Ok(());
        }
        f(&buf)?;
    }
}

pub fn ingest_file(graph: &SharedGraph, path: &Path) -> Result<IngestStats, IngestError> {
    let file = File::open(path).map_err(|source| IngestError::Source {
        path: path.to_owned(),
        source,
    })?;
    ingest_reader(graph, BufReader::new(file))
}

/// Ingest from any source until it ends (files, stdin) or `shutdown`
/// fires (listeners).
pub fn ingest_stream(graph: &SharedGraph, source: &Source, shutdown: &Shutdown) -> Result<IngestStats, IngestError> {
    match source {
        Source::File(path) => ingest_file(graph, path),
        Source::Stdin => ingest_reader(graph, io::stdin().lock()),
        Source::Listen(addr) => Listener::bind(addr)?.serve(graph, shutdown, None),
    }
}

/// TCP line listener. Each connection is an independent stream of
/// newline-delimited envelopes; closing the connection ends it.
#[derive(Debug)]
pub struct Listener {
    inner: TcpListener,
}

const POLL: Duration = Duration::from_millis(10);

impl Listener {
    pub fn bind(addr: &str) -> Result<Self, IngestError> {
        let bind_err = |source| IngestError::Bind {
            addr: addr.to_owned(),
            source,
        };
        let addrs: Vec<SocketAddr> = addr.to_socket_addrs().map_err(bind_err)?.collect();
        let inner = TcpListener::bind(&addrs[..]).map_err(bind_err)?;
        inner.set_nonblocking(true).map_err(bind_err)?;
        Ok(Listener { inner })
    }

    pub fn local_addr(&self) -> io::Result<SocketAddr> {
        self.inner.local_addr()
    }

    /// Serve until `shutdown` fires, or until `max_connections` connections
    /// have been accepted and all of them have closed.
    pub fn serve(
        &self,
        graph: &SharedGraph,
        shutdown: &Shutdown,
        max_connections: Option<usize>,
    ) -> Result<IngestStats, IngestError> {
        let (tx, rx) = mpsc::channel::<Vec<u8>>();
        let mut readers: Vec<thread::JoinHandle<()>> = Vec::new();
        let mut stats = IngestStats::default();
        let mut outcome = Ok(());

        loop {
            let room = max_connections.is_none_or(|m| readers.len() < m);
            if room && !shutdown.is_triggered() {
                match self.inner.accept() {
                    Ok((stream, peer)) => {
                        log::info!("connection from {peer}");
                        let tx = tx.clone();
                        let stop = shutdown.clone();
                        readers.push(thread::spawn(move || read_connection(stream, tx, stop)));
                        continue;
                    }
                    Err(e) if e.kind() == io::ErrorKind::WouldBlock => {}
                    Err(e) => log::warn!("accept failed: {e}"),
                }
            }
            match rx.recv_timeout(POLL) {
                Ok(line) => {
                    if let Err(e) = ingest_bytes(&mut graph.write(), &line).map(|s| stats += s) {
                        outcome = Err(e);
                        shutdown.trigger();
                        break;
                    }
                }
                Err(mpsc::RecvTimeoutError::Timeout) => {
                    let done =
                        max_connections.is_some_and(|m| readers.len() >= m) && readers.iter().all(|h| h.is_finished());
                    if shutdown.is_triggered() || done {
                        break;
                    }
                }
                Err(mpsc::RecvTimeoutError::Disconnected) => unreachable!("serve holds a sender"),
            }
        }

        drop(tx);
        for h in readers {
            let _ = h.join();
        }
        if outcome.is_ok() {
            for line in rx.try_iter() {
                stats += ingest_bytes(&mut graph.write(), &line)?;
            }
        }
        outcome?;
        Ok(stats)
    }
}

fn read_connection(stream: TcpStream, tx: mpsc::Sender<Vec<u8>>, shutdown: Shutdown) {
    if let Err(e) = stream
        .set_nonblocking(false)
        .and_then(|_| stream.set_read_timeout(Some(Duration::from_millis(100))))
    {
        log::warn!("cannot configure connection: {e}");
        return;
    }
    let mut reader = BufReader::new(stream);
    let mut buf = Vec::new();
    loop {
        match reader.read_until(b'\n', &mut buf) {
            Ok(0) => {
                if !buf.is_empty() {
                    let _ = tx.send(std::mem::take(&mut buf));
                }
                return;
            }
            Ok(_) => {
                if buf.ends_with(b"\n") && tx.send(std::mem::take(&mut buf)).is_err() {
                    return;
                }
            }
            Err(e) if matches!(e.kind(), io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut) => {
                if shutdown.is_triggered() {
                    return;
                }
            }
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => {
                log::warn!("connection read failed: {e}");
                return;
            }
        }
    }
}
