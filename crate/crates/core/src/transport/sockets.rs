//! Local TCP backend.
//!
//! Every rank listens on the port given by a manifest and opens one outgoing
//! connection to every other rank. Frames are
//! `[payload length: u64 LE][tag: u64 LE][payload]`; the first frame on a
//! connection is a hello carrying the sender's rank.

use std::fmt::Write as _;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::net::{Ipv4Addr, SocketAddr, TcpListener, TcpStream};
use std::path::Path;
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use super::mailbox::{AbortFlag, Envelope, Mailbox};
use super::tags::{self, Phase};
use super::{Backend, CommOptions, Communicator, Link};
use crate::error::{Result, SfError};

/// Rank-to-port mapping. Text form: one `rank port` pair per line, `#`
/// starts a comment.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Manifest {
    pub ports: Vec<u16>,
}

impl Manifest {
    pub fn parse(text: &str) -> Result<Manifest> {
        let mut pairs = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap().trim();
            if line.is_empty() {
                continue;
            }
            let err = |msg: &str| SfError::Parse {
                line: i + 1,
                msg: msg.to_string(),
            };
            let mut it = line.split_whitespace();
            let rank: usize = it
                .next()
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| err("expected rank"))?;
            let port: u16 = it
                .next()
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| err("expected port"))?;
            if it.next().is_some() {
                return Err(err("trailing tokens"));
            }
            pairs.push((rank, port));
        }
        pairs.sort();
        if pairs.iter().enumerate().any(|(i, (r, _))| *r != i) {
            return Err(SfError::Parse {
                line: 0,
                msg: "ranks must be 0..n-1, each listed once".into(),
            });
        }
        Ok(Manifest {
            ports: pairs.into_iter().map(|(_, p)| p).collect(),
        })
    }

    pub fn read(path: &Path) -> Result<Manifest> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (r, p) in self.ports.iter().enumerate() {
            writeln!(s, "{r} {p}").unwrap();
        }
        s
    }

    fn addr(&self, rank: usize) -> SocketAddr {
        SocketAddr::from((Ipv4Addr::LOCALHOST, self.ports[rank]))
    }
}

/// Binds `n` listeners on ephemeral local ports.
pub fn bind_local(n: usize) -> Result<(Vec<TcpListener>, Manifest)> {
    let listeners: Vec<TcpListener> = (0..n)
        .map(|_| TcpListener::bind((Ipv4Addr::LOCALHOST, 0)))
        .collect::<io::Result<_>>()?;
    let ports = listeners
        .iter()
        .map(|l| l.local_addr().map(|a| a.port()))
        .collect::<io::Result<_>>()?;
    Ok((listeners, Manifest { ports }))
}

pub fn write_frame(w: &mut impl Write, tag: u64, payload: &[u8]) -> io::Result<()> {
    w.write_all(&(payload.len() as u64).to_le_bytes())?;
    w.write_all(&tag.to_le_bytes())?;
    w.write_all(payload)?;
    w.flush()
}

/// Reads one frame; `Ok(None)` on a clean end of stream.
pub fn read_frame(r: &mut impl Read) -> io::Result<Option<(u64, Vec<u8>)>> {
    let mut header = [0u8; 16];
    match r.read_exact(&mut header[..8]) {
        Ok(()) => {}
        Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => return Ok(None),
        Err(e) => return Err(e),
    }
    r.read_exact(&mut header[8..])?;
    let len = u64::from_le_bytes(header[..8].try_into().unwrap()) as usize;
    let tag = u64::from_le_bytes(header[8..].try_into().unwrap());
    let mut payload = vec![0u8; len];
    r.read_exact(&mut payload)?;
    Ok(Some((tag, payload)))
}

struct SocketLink {
    rank: usize,
    own: Arc<Mailbox>,
    peers: Vec<Option<Mutex<BufWriter<TcpStream>>>>,
}

impl Link for SocketLink {
    fn send(&self, dest: usize, tag: u64, payload: Vec<u8>) -> Result<()> {
        if dest == self.rank {
            self.own.push(Envelope {
                src: self.rank,
                tag,
                payload,
            });
            return Ok(());
        }
        let stream = self.peers[dest]
            .as_ref()
            .ok_or_else(|| SfError::Transport(format!("no connection to rank {dest}")))?;
        write_frame(&mut *stream.lock().unwrap(), tag, &payload)?;
        Ok(())
    }
}

impl Drop for SocketLink {
    fn drop(&mut self) {
        for s in self.peers.iter().flatten() {
            if let Ok(w) = s.lock() {
                let _ = w.get_ref().shutdown(std::net::Shutdown::Write);
            }
        }
    }
}

fn connect_with_retry(addr: SocketAddr, deadline: Instant) -> Result<TcpStream> {
    loop {
        match TcpStream::connect(addr) {
            Ok(s) => return Ok(s),
            Err(e) if Instant::now() < deadline => {
                let _ = e;
                thread::sleep(Duration::from_millis(10));
            }
            Err(e) => return Err(e.into()),
        }
    }
}

impl Communicator {
    /// Connects rank `rank` to all peers listed in `manifest`. `listener` must
    /// be bound to this rank's manifest port.
    pub fn sockets(
        rank: usize,
        listener: TcpListener,
        manifest: &Manifest,
        options: CommOptions,
    ) -> Result<Communicator> {
        Self::sockets_with_abort(rank, listener, manifest, options, Arc::default())
    }

    pub(crate) fn sockets_with_abort(
        rank: usize,
        listener: TcpListener,
        manifest: &Manifest,
        options: CommOptions,
        abort: AbortFlag,
    ) -> Result<Communicator> {
        let n = manifest.ports.len();
        if rank >= n {
            return Err(SfError::RankOutOfRange { rank, size: n });
        }
        let deadline = Instant::now() + options.timeout;
        let own: Arc<Mailbox> = Arc::default();
        let mut peers: Vec<Option<Mutex<BufWriter<TcpStream>>>> = (0..n).map(|_| None).collect();
        for (peer, slot) in peers.iter_mut().enumerate() {
            if peer == rank {
                continue;
            }
            let stream = connect_with_retry(manifest.addr(peer), deadline)?;
            stream.set_nodelay(true)?;
            let mut w = BufWriter::new(stream);
            write_frame(&mut w, tags::make(Phase::Control, 0), &(rank as u64).to_le_bytes())?;
            *slot = Some(Mutex::new(w));
        }
        for _ in 0..n.saturating_sub(1) {
            let (stream, _) = listener.accept()?;
            let mut reader = BufReader::new(stream);
            let (_, hello) = read_frame(&mut reader)?
                .ok_or_else(|| SfError::Transport("peer closed before hello".into()))?;
            let src = u64::from_le_bytes(
                hello
                    .try_into()
                    .map_err(|_| SfError::Transport("malformed hello".into()))?,
            ) as usize;
            let mailbox = own.clone();
            thread::Builder::new()
                .name(format!("sf-sock-{rank}<-{src}"))
                .spawn(move || {
                    while let Ok(Some((tag, payload))) = read_frame(&mut reader) {
                        mailbox.push(Envelope { src, tag, payload });
                    }
                })?;
        }
        let world_id = manifest
            .ports
            .iter()
            .fold(0xcbf2_9ce4_8422_2325u64, |h, p| (h ^ *p as u64).wrapping_mul(0x100_0000_01b3));
        Ok(Communicator::from_parts(
            rank,
            n,
            Backend::Sockets,
            world_id,
            Box::new(SocketLink {
                rank,
                own: own.clone(),
                peers,
            }),
            own,
            abort,
            options,
            None,
        ))
    }
}
