//! A scripted client for the command/event channel.

use std::time::Duration;

use futures::{SinkExt, StreamExt};
use tokio::net::{TcpStream, ToSocketAddrs};
use tokio_util::codec::{Framed, LengthDelimitedCodec};
use tokio_util::bytes::Bytes;

use crate::protocol::{codec, Command, CommandMessage, Event, EventMessage};
use crate::ServiceError;

pub struct Client {
    framed: Framed<TcpStream, LengthDelimitedCodec>,
    next_request: u64,
    last_seq: Option<u64>,
}

impl Client {
    pub async fn connect(addr: impl ToSocketAddrs) -> Result<Self, ServiceError> {
        let stream = TcpStream::connect(addr).await?;
        Ok(Self {
            framed: Framed::new(stream, codec()),
            next_request: 0,
            last_seq: None,
        })
    }

    /// Sends a command and returns its request id.
    pub async fn send(&mut self, command: Command) -> Result<String, ServiceError> {
        self.next_request += 1;
        let request_id = format!("r{}", self.next_request);
        let msg = CommandMessage {
            request_id: request_id.clone(),
            command,
        };
        self.send_raw(serde_json::to_vec(&msg)?).await?;
        Ok(request_id)
    }

    pub async fn send_raw(&mut self, frame: Vec<u8>) -> Result<(), ServiceError> {
        self.framed.send(Bytes::from(frame)).await?;
        Ok(())
    }

    /// Next event; checks that sequence numbers increase by one.
    pub async fn next_event(&mut self, timeout: Duration) -> Result<Event, ServiceError> {
        let frame = tokio::time::timeout(timeout, self.framed.next())
            .await
            .map_err(|_| ServiceError::Protocol("timed out waiting for an event".into()))?
            .ok_or_else(|| ServiceError::Protocol("connection closed".into()))??;
        let msg: EventMessage = serde_json::from_slice(&frame)?;
        let expected = self.last_seq.map_or(0, |s| s + 1);
        if msg.seq != expected {
            return Err(ServiceError::Protocol(format!("event seq {} after {:?}", msg.seq, self.last_seq)));
        }
        self.last_seq = Some(msg.seq);
        Ok(msg.event)
    }

    /// Reads events until `pred` matches, returning everything read.
    pub async fn collect_until(
        &mut self,
        timeout: Duration,
        mut pred: impl FnMut(&Event) -> bool,
    ) -> Result<Vec<Event>, ServiceError> {
        let deadline = tokio::time::Instant::now() + timeout;
        let mut out = Vec::new();
        loop {
            let left = deadline.saturating_duration_since(tokio::time::Instant::now());
            let ev = self.next_event(left).await?;
            let done = pred(&ev);
            out.push(ev);
            if done {
                return Ok(out);
            }
        }
    }

    /// Sends a command and waits for its ack or error, returning the events seen meanwhile.
    pub async fn request(&mut self, command: Command, timeout: Duration) -> Result<(Result<(), String>, Vec<Event>), ServiceError> {
        let id = self.send(command).await?;
        let events = self
            .collect_until(timeout, |e| match e {
                Event::Ack { request_id } => *request_id == id,
                Event::Error { request_id, .. } => request_id.as_deref() == Some(id.as_str()),
                _ => false,
            })
            .await?;
        let reply = match events.last() {
            Some(Event::Error { text, .. }) => Err(text.clone()),
            _ => Ok(()),
        };
        Ok((reply, events))
    }
}
