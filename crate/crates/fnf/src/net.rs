//! Newline-delimited JSON transport: one event array per request line, one
//! command array per reply line.

use std::io::{BufRead, BufReader, Write};
use std::net::{TcpListener, TcpStream, ToSocketAddrs};

use fnf_core::wire::{TaEndpoint, TransportError};

/// Client side of the transport.
pub struct SocketTa {
    reader: BufReader<TcpStream>,
    writer: TcpStream,
}

impl SocketTa {
    pub fn connect(addr: impl ToSocketAddrs) -> std::io::Result<Self> {
        let stream = TcpStream::connect(addr)?;
        stream.set_nodelay(true)?;
        Ok(Self {
            reader: BufReader::new(stream.try_clone()?),
            writer: stream,
        })
    }
}

impl TaEndpoint for SocketTa {
    fn exchange(&mut self, batch: &[u8]) -> Result<Vec<u8>, TransportError> {
        let io = |e: std::io::Error| TransportError(e.to_string());
        // Encoded arrays never contain raw newlines.
        self.writer.write_all(batch).map_err(io)?;
        self.writer.write_all(b"\n").map_err(io)?;
        let mut line = Vec::new();
        if self.reader.read_until(b'\n', &mut line).map_err(io)? == 0 {
            return Err(TransportError("platform closed the connection".into()));
        }
        if line.last() == Some(&b'\n') {
            line.pop();
        }
        Ok(line)
    }
}

/// Serves one connection until the peer closes it. Returns the number of
/// batches handled.
pub fn serve_connection<T: TaEndpoint>(stream: TcpStream, ta: &mut T) -> std::io::Result<u64> {
    stream.set_nodelay(true)?;
    let mut reader = BufReader::new(stream.try_clone()?);
    let mut writer = stream;
    let mut handled = 0;
    let mut line = Vec::new();
    loop {
        line.clear();
        if reader.read_until(b'\n', &mut line)? == 0 {
            return Ok(handled);
        }
        if line.last() == Some(&b'\n') {
            line.pop();
        }
        let reply = ta.exchange(&line).map_err(|e| std::io::Error::other(e.0))?;
        writer.write_all(&reply)?;
        writer.write_all(b"\n")?;
        handled += 1;
    }
}

/// Accepts `connections` connections in turn, or forever when `None`.
pub fn serve<T: TaEndpoint>(listener: &TcpListener, ta: &mut T, connections: Option<u64>) -> std::io::Result<u64> {
    let mut total = 0;
    for (served, stream) in (1..).zip(listener.incoming()) {
        total += serve_connection(stream?, ta)?;
        if connections.is_some_and(|c| served >= c) {
            break;
        }
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Replies with the request reversed.
    struct Mirror;

    impl TaEndpoint for Mirror {
        fn exchange(&mut self, batch: &[u8]) -> Result<Vec<u8>, TransportError> {
            Ok(batch.iter().rev().copied().collect())
        }
    }

    #[test]
    fn requests_and_replies_pair_up_in_order() {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let server = std::thread::spawn(move || serve(&listener, &mut Mirror, Some(1)).unwrap());
        let mut client = SocketTa::connect(addr).unwrap();
        assert_eq!(client.exchange(b"[1,2]").unwrap(), b"]2,1[");
        assert_eq!(client.exchange(b"").unwrap(), b"");
        assert_eq!(client.exchange(b"[]").unwrap(), b"][");
        drop(client);
        assert_eq!(server.join().unwrap(), 3);
    }

    #[test]
    fn closed_server_is_a_transport_error() {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let server = std::thread::spawn(move || drop(listener.accept().unwrap()));
        let mut client = SocketTa::connect(addr).unwrap();
        server.join().unwrap();
        assert!(client.exchange(b"[]").is_err());
    }
}
