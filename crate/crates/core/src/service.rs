//! Framed binary protocol and a threaded database server.
//!
//! Frame layout: `"EPIR"`, version byte, type byte, 4-byte big-endian payload
//! length, payload. One request per frame, answered synchronously.

use std::io::{self, ErrorKind, Read, Write};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream};
use std::path::Path;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::Duration;

use crate::bitvec::BitVector;
use crate::error::{Error, Result};
use crate::mechanisms::{reconstruct, QueryPlan, ServerRequest};
use crate::params::ServerId;
use crate::record::{Database, Record};
use crate::server::{handle, ServerResponse};

pub const MAGIC: [u8; 4] = *b"EPIR";
pub const VERSION: u8 = 0x01;
pub const HEADER_LEN: usize = 10;
/// Frames announcing a larger payload are rejected before reading it.
pub const MAX_PAYLOAD: u32 = 1 << 28;

pub const MSG_FETCH_INDICES: u8 = 0x01;
pub const MSG_XOR_SELECT: u8 = 0x02;
pub const MSG_RECORDS: u8 = 0x81;
pub const MSG_XOR_BLOCK: u8 = 0x82;
pub const MSG_ERROR: u8 = 0xFF;

pub const ERR_MALFORMED: u16 = 0x0001;
pub const ERR_BAD_REQUEST: u16 = 0x0002;
pub const ERR_UNSUPPORTED_TYPE: u16 = 0x0003;

const IO_TIMEOUT: Duration = Duration::from_secs(30);

/// A decoded frame body.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Message {
    FetchIndices(Vec<u32>),
    XorSelect(BitVector),
    Records(Vec<(u32, Vec<u8>)>),
    XorBlock(Vec<u8>),
    Error { code: u16, message: String },
}

/// A frame whose header has been validated but whose payload is undecoded.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Frame {
    pub msg_type: u8,
    pub payload: Vec<u8>,
}

fn frame_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Frame(msg.into()))
}

fn be_u32(bytes: &[u8]) -> u32 {
    u32::from_be_bytes(bytes[..4].try_into().expect("four bytes"))
}

impl Frame {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + self.payload.len());
        out.extend_from_slice(&MAGIC);
        out.push(VERSION);
        out.push(self.msg_type);
        out.extend_from_slice(&(self.payload.len() as u32).to_be_bytes());
        out.extend_from_slice(&self.payload);
        out
    }

    /// Parses a header, returning the message type and payload length.
    pub fn parse_header(header: &[u8; HEADER_LEN]) -> Result<(u8, u32)> {
        if header[..4] != MAGIC {
            return frame_err("bad magic");
        }
        if header[4] != VERSION {
            return frame_err(format!("unsupported version {:#04x}", header[4]));
        }
        let len = be_u32(&header[6..]);
        if len > MAX_PAYLOAD {
            return frame_err(format!("payload length {len} exceeds {MAX_PAYLOAD}"));
        }
        Ok((header[5], len))
    }

    /// Decodes one complete frame from `bytes`, which must hold nothing else.
    pub fn decode(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_LEN {
            return frame_err(format!("{} bytes is shorter than a header", bytes.len()));
        }
        let (msg_type, len) = Self::parse_header(bytes[..HEADER_LEN].try_into().expect("header"))?;
        let payload = &bytes[HEADER_LEN..];
        if payload.len() != len as usize {
            return frame_err(format!("header announces {len} payload bytes, got {}", payload.len()));
        }
        Ok(Self { msg_type, payload: payload.to_vec() })
    }
}

/// Reads one frame. `Ok(None)` means the peer closed cleanly between frames.
pub fn read_frame(r: &mut impl Read) -> Result<Option<Frame>> {
    let mut header = [0u8; HEADER_LEN];
    let mut got = 0;
    while got < HEADER_LEN {
        match r.read(&mut header[got..]) {
            Ok(0) if got == 0 => return Ok(None),
            Ok(0) => return frame_err(format!("truncated header ({got} of {HEADER_LEN} bytes)")),
            Ok(k) => got += k,
            Err(e) if e.kind() == ErrorKind::Interrupted => {}
            Err(e) => return Err(e.into()),
        }
    }
    let (msg_type, len) = Frame::parse_header(&header)?;
    let mut payload = vec![0u8; len as usize];
    r.read_exact(&mut payload).map_err(|e| match e.kind() {
        ErrorKind::UnexpectedEof => Error::Frame(format!("truncated payload, expected {len} bytes")),
        _ => e.into(),
    })?;
    Ok(Some(Frame { msg_type, payload }))
}

pub fn write_frame(w: &mut impl Write, frame: &Frame) -> io::Result<()> {
    w.write_all(&frame.encode())?;
    w.flush()
}

impl Message {
    pub fn msg_type(&self) -> u8 {
        match self {
            Message::FetchIndices(_) => MSG_FETCH_INDICES,
            Message::XorSelect(_) => MSG_XOR_SELECT,
            Message::Records(_) => MSG_RECORDS,
            Message::XorBlock(_) => MSG_XOR_BLOCK,
            Message::Error { .. } => MSG_ERROR,
        }
    }

    pub fn error(code: u16, message: impl Into<String>) -> Self {
        Message::Error { code, message: message.into() }
    }

    pub fn to_frame(&self) -> Frame {
        let mut p = Vec::new();
        match self {
            Message::FetchIndices(indices) => {
                p.extend_from_slice(&(indices.len() as u32).to_be_bytes());
                for i in indices {
                    p.extend_from_slice(&i.to_be_bytes());
                }
            }
            Message::XorSelect(v) => {
                p.extend_from_slice(&(v.len() as u32).to_be_bytes());
                p.extend_from_slice(&v.to_lsb_bytes());
            }
            Message::Records(entries) => {
                p.extend_from_slice(&(entries.len() as u32).to_be_bytes());
                for (i, rec) in entries {
                    p.extend_from_slice(&i.to_be_bytes());
                    p.extend_from_slice(rec);
                }
            }
            Message::XorBlock(block) => p.extend_from_slice(block),
            Message::Error { code, message } => {
                p.extend_from_slice(&code.to_be_bytes());
                p.extend_from_slice(message.as_bytes());
            }
        }
        Frame { msg_type: self.msg_type(), payload: p }
    }

    pub fn encode(&self) -> Vec<u8> {
        self.to_frame().encode()
    }

    /// Decodes a payload. Unknown types give [`Error::Unsupported`], any
    /// other inconsistency [`Error::Frame`].
    pub fn from_frame(frame: &Frame) -> Result<Self> {
        let p = &frame.payload;
        let counted = |what: &str| -> Result<(usize, &[u8])> {
            if p.len() < 4 {
                return frame_err(format!("{what} payload lacks its 4-byte count"));
            }
            Ok((be_u32(p) as usize, &p[4..]))
        };
        match frame.msg_type {
            MSG_FETCH_INDICES => {
                let (count, rest) = counted("FetchIndices")?;
                if rest.len() != 4 * count {
                    return frame_err(format!("{count} indices need {} bytes, got {}", 4 * count, rest.len()));
                }
                Ok(Message::FetchIndices(rest.chunks_exact(4).map(be_u32).collect()))
            }
            MSG_XOR_SELECT => {
                let (n, rest) = counted("XorSelect")?;
                BitVector::from_lsb_bytes(n, rest)
                    .map(Message::XorSelect)
                    .map_err(|e| Error::Frame(format!("selector: {e}")))
            }
            MSG_RECORDS => {
                let (count, rest) = counted("Records")?;
                if count == 0 {
                    return if rest.is_empty() { Ok(Message::Records(Vec::new())) } else { frame_err("trailing bytes after empty Records") };
                }
                if rest.len() % count != 0 || rest.len() / count <= 4 {
                    return frame_err(format!("{} bytes do not split into {count} entries", rest.len()));
                }
                let entry = rest.len() / count;
                Ok(Message::Records(rest.chunks_exact(entry).map(|c| (be_u32(c), c[4..].to_vec())).collect()))
            }
            MSG_XOR_BLOCK => Ok(Message::XorBlock(p.clone())),
            MSG_ERROR => {
                if p.len() < 2 {
                    return frame_err("Error payload lacks its code");
                }
                let message = std::str::from_utf8(&p[2..]).map_err(|_| Error::Frame("error text is not UTF-8".into()))?;
                Ok(Message::Error { code: u16::from_be_bytes([p[0], p[1]]), message: message.to_owned() })
            }
            t => Err(Error::Unsupported(format!("message type {t:#04x}"))),
        }
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        Self::from_frame(&Frame::decode(bytes)?)
    }
}

fn index_u32(i: usize) -> Result<u32> {
    u32::try_from(i).map_err(|_| Error::Parameter(format!("index {i} does not fit the wire format")))
}

impl TryFrom<&ServerRequest> for Message {
    type Error = Error;

    fn try_from(req: &ServerRequest) -> Result<Self> {
        Ok(match req {
            ServerRequest::FetchIndices(v) => Message::FetchIndices(v.iter().map(|&i| index_u32(i)).collect::<Result<_>>()?),
            ServerRequest::XorSelect(v) => {
                index_u32(v.len())?;
                Message::XorSelect(v.clone())
            }
        })
    }
}

impl From<&ServerResponse> for Message {
    fn from(resp: &ServerResponse) -> Self {
        match resp {
            ServerResponse::Records(entries) => {
                Message::Records(entries.iter().map(|(i, r)| (*i as u32, r.as_bytes().to_vec())).collect())
            }
            ServerResponse::XorBlock(r) => Message::XorBlock(r.as_bytes().to_vec()),
        }
    }
}

/// The reply to one well-framed request.
fn answer(db: &Database, frame: &Frame) -> Message {
    let request = match Message::from_frame(frame) {
        Ok(Message::FetchIndices(v)) => ServerRequest::FetchIndices(v.into_iter().map(|i| i as usize).collect()),
        Ok(Message::XorSelect(v)) => ServerRequest::XorSelect(v),
        Ok(other) => {
            return Message::error(ERR_UNSUPPORTED_TYPE, format!("type {:#04x} is not a request", other.msg_type()))
        }
        Err(Error::Unsupported(e)) => return Message::error(ERR_UNSUPPORTED_TYPE, e),
        Err(e) => return Message::error(ERR_MALFORMED, e.to_string()),
    };
    match handle(db, &request) {
        Ok(resp) => Message::from(&resp),
        Err(e) => Message::error(ERR_BAD_REQUEST, e.to_string()),
    }
}

fn serve_connection(db: &Database, mut stream: TcpStream) -> Result<()> {
    stream.set_nodelay(true)?;
    loop {
        match read_frame(&mut stream) {
            Ok(None) => return Ok(()),
            Ok(Some(frame)) => write_frame(&mut stream, &answer(db, &frame).to_frame())?,
            Err(Error::Frame(e)) => {
                // The byte stream cannot be resynchronised after a bad header.
                let _ = write_frame(&mut stream, &Message::error(ERR_MALFORMED, e).to_frame());
                let _ = stream.shutdown(Shutdown::Both);
                return Ok(());
            }
            Err(e) => return Err(e),
        }
    }
}

/// A running server. Dropping the handle does not stop it; call
/// [`shutdown`](Self::shutdown).
pub struct ServerHandle {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    acceptor: Option<JoinHandle<()>>,
}

impl ServerHandle {
    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    /// Stops accepting connections. Open connections finish on their own.
    pub fn shutdown(mut self) {
        self.stop.store(true, Ordering::SeqCst);
        let _ = TcpStream::connect_timeout(&self.addr, Duration::from_secs(1));
        if let Some(t) = self.acceptor.take() {
            let _ = t.join();
        }
    }

    /// Blocks until the accept loop exits.
    pub fn wait(mut self) {
        if let Some(t) = self.acceptor.take() {
            let _ = t.join();
        }
    }
}

/// Answers frames on `listener` with one thread per connection.
pub fn serve(db: Arc<Database>, listener: TcpListener) -> Result<ServerHandle> {
    let addr = listener.local_addr()?;
    let stop = Arc::new(AtomicBool::new(false));
    let flag = Arc::clone(&stop);
    let acceptor = thread::Builder::new().name(format!("epir-accept-{addr}")).spawn(move || {
        for conn in listener.incoming() {
            if flag.load(Ordering::SeqCst) {
                break;
            }
            let Ok(stream) = conn else { continue };
            let db = Arc::clone(&db);
            let _ = thread::Builder::new().spawn(move || {
                let _ = stream.set_read_timeout(Some(IO_TIMEOUT * 10));
                let _ = serve_connection(&db, stream);
            });
        }
    })?;
    Ok(ServerHandle { addr, stop, acceptor: Some(acceptor) })
}

/// Loads a raw concatenation of records of `record_size_bits` bits each.
pub fn load_database(path: &Path, record_size_bits: usize) -> Result<Database> {
    if record_size_bits == 0 || !record_size_bits.is_multiple_of(8) {
        return Err(Error::Parameter(format!(
            "record size must be a positive multiple of 8 bits, got {record_size_bits}"
        )));
    }
    let data = std::fs::read(path)?;
    Database::from_bytes(data, record_size_bits / 8)
}

/// A synchronous connection to one database server.
pub struct Connection {
    server: ServerId,
    stream: TcpStream,
}

impl Connection {
    pub fn open(server: ServerId, addr: SocketAddr) -> Result<Self> {
        let t = |e: io::Error| Error::Transport { server, reason: e.to_string() };
        let stream = TcpStream::connect_timeout(&addr, Duration::from_secs(5)).map_err(t)?;
        stream.set_read_timeout(Some(IO_TIMEOUT)).map_err(t)?;
        stream.set_nodelay(true).map_err(t)?;
        Ok(Self { server, stream })
    }

    pub fn request(&mut self, req: &ServerRequest) -> Result<ServerResponse> {
        let server = self.server;
        let t = |reason: String| Error::Transport { server, reason };
        let msg = Message::try_from(req)?;
        write_frame(&mut self.stream, &msg.to_frame()).map_err(|e| t(e.to_string()))?;
        let frame = read_frame(&mut self.stream)
            .map_err(|e| t(e.to_string()))?
            .ok_or_else(|| t("connection closed before a reply".into()))?;
        match Message::from_frame(&frame).map_err(|e| t(e.to_string()))? {
            Message::Records(v) if matches!(req, ServerRequest::FetchIndices(_)) => Ok(ServerResponse::Records(
                v.into_iter().map(|(i, r)| (i as usize, Record::new(r))).collect(),
            )),
            Message::XorBlock(b) if matches!(req, ServerRequest::XorSelect(_)) => Ok(ServerResponse::XorBlock(Record::new(b))),
            Message::Error { code, message } => Err(t(format!("server error {code:#06x}: {message}"))),
            other => Err(t(format!("unexpected reply type {:#04x}", other.msg_type()))),
        }
    }
}

/// Sends every request of `plan` to `endpoints[server]` and returns the
/// responses in dispatch order. Anonymous transports are sent directly.
pub fn remote_dispatch(plan: &QueryPlan, endpoints: &[SocketAddr]) -> Result<Vec<ServerResponse>> {
    let mut conns: Vec<Option<Connection>> = (0..endpoints.len()).map(|_| None).collect();
    plan.dispatches
        .iter()
        .map(|(s, req)| {
            let addr = *endpoints
                .get(*s)
                .ok_or_else(|| Error::Parameter(format!("plan addresses server {s}, only {} endpoints", endpoints.len())))?;
            if conns[*s].is_none() {
                conns[*s] = Some(Connection::open(*s, addr)?);
            }
            conns[*s].as_mut().expect("opened").request(req)
        })
        .collect()
}

/// Runs `plan` against live servers and reconstructs the target record.
pub fn remote_execute(plan: &QueryPlan, endpoints: &[SocketAddr]) -> Result<Record> {
    let responses = remote_dispatch(plan, endpoints)?;
    reconstruct(plan, &responses)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngStream;
    use rand::Rng;

    fn start(n: usize, bytes: usize, seed: u64) -> (ServerHandle, Arc<Database>) {
        let db = Arc::new(Database::random(n, bytes, &mut RngStream::new(seed, 0)).unwrap());
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        (serve(Arc::clone(&db), listener).unwrap(), db)
    }

    fn exchange(stream: &mut TcpStream, bytes: &[u8]) -> Message {
        stream.write_all(bytes).unwrap();
        let frame = read_frame(stream).unwrap().unwrap();
        Message::from_frame(&frame).unwrap()
    }

    #[test]
    fn header_bytes() {
        let bytes = Message::FetchIndices(vec![3, 7]).encode();
        assert_eq!(
            bytes,
            [b'E', b'P', b'I', b'R', 1, 1, 0, 0, 0, 12, 0, 0, 0, 2, 0, 0, 0, 3, 0, 0, 0, 7]
        );
        let sel = Message::XorSelect(BitVector::from_bools(&[true, false, false, true, false, false, false, false, true]));
        assert_eq!(sel.encode()[HEADER_LEN..], [0, 0, 0, 9, 0b0000_1001, 0b0000_0001]);
        let err = Message::error(ERR_MALFORMED, "x").encode();
        assert_eq!(err[5], 0xFF);
        assert_eq!(err[HEADER_LEN..], [0, 1, b'x']);
    }

    fn random_message(rng: &mut RngStream) -> Message {
        match rng.gen_range(0..5) {
            0 => Message::FetchIndices((0..rng.gen_range(0..20)).map(|_| rng.gen()).collect()),
            1 => Message::XorSelect(BitVector::random(rng.gen_range(0..300), rng)),
            2 => {
                let len = rng.gen_range(1..40);
                Message::Records(
                    (0..rng.gen_range(0..10)).map(|_| (rng.gen(), (0..len).map(|_| rng.gen()).collect())).collect(),
                )
            }
            3 => Message::XorBlock((0..rng.gen_range(0..64)).map(|_| rng.gen()).collect()),
            _ => Message::error(rng.gen(), (0..rng.gen_range(0..30)).map(|_| rng.gen_range('a'..='z')).collect::<String>()),
        }
    }

    #[test]
    fn round_trip_fuzz() {
        let mut rng = RngStream::new(11, 0);
        for _ in 0..10_000 {
            let m = random_message(&mut rng);
            assert_eq!(Message::decode(&m.encode()).unwrap(), m);
        }
    }

    #[test]
    fn decode_rejects_garbage() {
        let mut rng = RngStream::new(12, 0);
        for _ in 0..10_000 {
            let mut bytes = random_message(&mut rng).encode();
            let k = rng.gen_range(0..bytes.len());
            match rng.gen_range(0..3) {
                0 => bytes.truncate(k),
                1 => bytes[k] ^= 1 << rng.gen_range(0..8),
                _ => bytes.push(rng.gen()),
            }
            let _ = Message::decode(&bytes);
        }
        assert!(matches!(Message::decode(&[0x45, 0x50]), Err(Error::Frame(_))));
        let mut bad = Message::XorBlock(vec![1]).encode();
        bad[5] = 0x42;
        assert!(matches!(Message::decode(&bad), Err(Error::Unsupported(_))));
    }

    #[test]
    fn server_answers_examples() {
        let (server, db) = start(16, 8, 1);
        let mut s = TcpStream::connect(server.local_addr()).unwrap();
        let reply = exchange(&mut s, &Message::XorSelect(BitVector::unit(16, 5)).encode());
        assert_eq!(reply, Message::XorBlock(db.peek(5).to_vec()));
        let reply = exchange(&mut s, &Message::FetchIndices(vec![3, 7]).encode());
        assert_eq!(reply, Message::Records(vec![(3, db.peek(3).to_vec()), (7, db.peek(7).to_vec())]));
        server.shutdown();
    }

    #[test]
    fn errors_keep_or_drop_connection() {
        let (server, _) = start(16, 8, 2);
        let mut s = TcpStream::connect(server.local_addr()).unwrap();
        let mut unknown = Message::XorBlock(vec![0; 4]).encode();
        unknown[5] = 0x33;
        assert!(matches!(exchange(&mut s, &unknown), Message::Error { code: ERR_UNSUPPORTED_TYPE, .. }));
        let out_of_range = Message::FetchIndices(vec![16]).encode();
        assert!(matches!(exchange(&mut s, &out_of_range), Message::Error { code: ERR_BAD_REQUEST, .. }));
        let mut short = Message::FetchIndices(vec![1, 2]).encode();
        short[9] -= 4;
        short.truncate(short.len() - 4);
        assert!(matches!(exchange(&mut s, &short), Message::Error { code: ERR_MALFORMED, .. }));
        // Still open after payload-level errors.
        assert!(matches!(exchange(&mut s, &Message::FetchIndices(vec![1]).encode()), Message::Records(_)));

        let frame = Message::FetchIndices(vec![1, 2]).encode();
        s.write_all(&frame[..frame.len() - 3]).unwrap();
        s.shutdown(Shutdown::Write).unwrap();
        let reply = Message::from_frame(&read_frame(&mut s).unwrap().unwrap()).unwrap();
        assert!(matches!(reply, Message::Error { code: ERR_MALFORMED, .. }));
        server.shutdown();
    }

    #[test]
    fn load_database_checks_sizes() {
        let dir = std::env::temp_dir().join(format!("epir-load-{}", std::process::id()));
        std::fs::write(&dir, [0u8; 24]).unwrap();
        assert_eq!(load_database(&dir, 64).unwrap().len(), 3);
        assert!(load_database(&dir, 40).is_err());
        assert!(load_database(&dir, 12).is_err());
        std::fs::remove_file(&dir).unwrap();
    }
}
