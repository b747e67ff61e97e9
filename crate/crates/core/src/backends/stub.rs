//! Loopback chat-completions server for tests and demos. Speaks just enough
//! HTTP/1.1 for one request per connection.

use std::collections::VecDeque;
use std::io::{BufRead, BufReader, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::Duration;

use super::ChatRequest;

#[derive(Debug, Clone, PartialEq)]
pub enum StubReply {
    /// 200 with a well-formed completion carrying this text.
    Text(String),
    /// Raw status and body.
    Raw(u16, String),
    /// Sleep, then answer.
    Delayed(Duration, Box<StubReply>),
}

type Responder = Box<dyn Fn(&ChatRequest) -> StubReply + Send + Sync>;

pub struct StubServer {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    handle: Option<JoinHandle<()>>,
    pub requests: Arc<Mutex<Vec<ChatRequest>>>,
}

/// Body of a chat-completions response whose first choice says `text`.
pub fn completion_body(text: &str) -> String {
    serde_json::json!({
        "id": "stub",
        "object": "chat.completion",
        "choices": [{"index": 0, "message": {"role": "assistant", "content": text}, "finish_reason": "stop"}]
    })
    .to_string()
}

impl StubServer {
    /// `key`, when set, must arrive as the bearer token or the stub answers 401.
    pub fn start(
        key: Option<String>,
        responder: impl Fn(&ChatRequest) -> StubReply + Send + Sync + 'static,
    ) -> std::io::Result<Self> {
        let listener = TcpListener::bind("127.0.0.1:0")?;
        let addr = listener.local_addr()?;
        let stop = Arc::new(AtomicBool::new(false));
        let requests = Arc::new(Mutex::new(Vec::new()));
        let responder: Arc<Responder> = Arc::new(Box::new(responder));
        let (stop2, requests2) = (stop.clone(), requests.clone());
        let handle = std::thread::spawn(move || {
            for conn in listener.incoming() {
                if stop2.load(Ordering::SeqCst) {
                    break;
                }
                let Ok(stream) = conn else { continue };
                let (responder, requests, key) = (responder.clone(), requests2.clone(), key.clone());
                std::thread::spawn(move || {
                    if let Err(e) = serve(stream, key.as_deref(), &responder, &requests) {
                        log::debug!("stub connection: {e}");
                    }
                });
            }
        });
        Ok(StubServer {
            addr,
            stop,
            handle: Some(handle),
            requests,
        })
    }

    /// Answers from `replies` in order, then 500s.
    pub fn queued(key: Option<String>, replies: impl IntoIterator<Item = StubReply>) -> std::io::Result<Self> {
        let queue = Mutex::new(replies.into_iter().collect::<VecDeque<_>>());
        StubServer::start(key, move |_| {
            queue
                .lock()
                .unwrap_or_else(|p| p.into_inner())
                .pop_front()
                .unwrap_or_else(|| StubReply::Raw(500, "{\"error\":\"stub exhausted\"}".into()))
        })
    }

    pub fn url(&self) -> String {
        format!("http://{}/v1/chat/completions", self.addr)
    }
}

impl Drop for StubServer {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        let _ = TcpStream::connect(self.addr);
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}

fn serve(stream: TcpStream, key: Option<&str>, responder: &Responder, requests: &Mutex<Vec<ChatRequest>>) -> std::io::Result<()> {
    let mut reader = BufReader::new(stream.try_clone()?);
    let mut line = String::new();
    reader.read_line(&mut line)?;
    if line.trim().is_empty() {
        return Ok(());
    }
    let mut length = 0usize;
    let mut chunked = false;
    let mut auth = None;
    loop {
        line.clear();
        reader.read_line(&mut line)?;
        let l = line.trim_end();
        if l.is_empty() {
            break;
        }
        if let Some((name, value)) = l.split_once(':') {
            let value = value.trim();
            match name.to_ascii_lowercase().as_str() {
                "content-length" => length = value.parse().unwrap_or(0),
                "transfer-encoding" => chunked = value.eq_ignore_ascii_case("chunked"),
                "authorization" => auth = Some(value.to_string()),
                _ => {}
            }
        }
    }
    let body = if chunked { read_chunked(&mut reader)? } else { read_exact(&mut reader, length)? };

    let reply = match (key, auth.as_deref()) {
        (Some(k), a) if a != Some(format!("Bearer {k}").as_str()) => StubReply::Raw(401, "{\"error\":\"invalid api key\"}".into()),
        _ => match serde_json::from_slice::<ChatRequest>(&body) {
            Ok(req) => {
                let r = responder(&req);
                requests.lock().unwrap_or_else(|p| p.into_inner()).push(req);
                r
            }
            Err(e) => StubReply::Raw(400, format!("{{\"error\":\"{e}\"}}")),
        },
    };
    write_reply(stream, reply)
}

fn read_exact(reader: &mut impl Read, n: usize) -> std::io::Result<Vec<u8>> {
    let mut buf = vec![0; n];
    reader.read_exact(&mut buf)?;
    Ok(buf)
}

fn read_chunked(reader: &mut impl BufRead) -> std::io::Result<Vec<u8>> {
    let mut out = Vec::new();
    loop {
        let mut size = String::new();
        reader.read_line(&mut size)?;
        let n = usize::from_str_radix(size.trim().split(';').next().unwrap_or("0"), 16).unwrap_or(0);
        if n == 0 {
            let mut crlf = String::new();
            reader.read_line(&mut crlf)?;
            return Ok(out);
        }
        out.extend(read_exact(reader, n)?);
        read_exact(reader, 2)?;
    }
}

fn write_reply(mut stream: TcpStream, reply: StubReply) -> std::io::Result<()> {
    let (status, body) = match reply {
        StubReply::Text(t) => (200, completion_body(&t)),
        StubReply::Raw(s, b) => (s, b),
        StubReply::Delayed(d, inner) => {
            std::thread::sleep(d);
            return write_reply(stream, *inner);
        }
    };
    let head = format!(
        "HTTP/1.1 {status} Stub\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n",
        body.len()
    );
    stream.write_all(head.as_bytes())?;
    stream.write_all(body.as_bytes())?;
    stream.flush()
}
