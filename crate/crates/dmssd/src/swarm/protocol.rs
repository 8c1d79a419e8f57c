//! Line protocol shared by the state broadcast and the model server.
//!
//! One message per line, integers in decimal ASCII:
//! `STATE <ver> <id> <tick> <x> <y>` over datagrams;
//! `GET MODEL <ver?>` and `MODEL <ver> <len> <crc>` (followed by `<len>`
//! raw payload bytes) over stream connections. Versions start at 1.

use std::io::{BufRead, Write};

use crate::error::{Error, Result};
use crate::util::crc32;

pub const PROTOCOL_VERSION: u32 = 1;

/// Periodic per-robot state broadcast.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StateMessage {
    pub version: u32,
    pub robot_id: u32,
    pub tick: u64,
    pub x: u32,
    pub y: u32,
}

impl StateMessage {
    pub fn encode(&self) -> String {
        format!(
            "STATE {} {} {} {} {}\n",
            self.version, self.robot_id, self.tick, self.x, self.y
        )
    }

    pub fn decode(line: &str) -> Result<StateMessage> {
        let mut parts = line.trim_end().split(' ');
        let tag = parts.next().unwrap_or("");
        if tag != "STATE" {
            return Err(Error::Parse(format!("expected STATE message, got '{tag}'")));
        }
        let mut field = |name: &str| -> Result<u64> {
            parts
                .next()
                .ok_or_else(|| Error::Parse(format!("STATE message missing {name}")))?
                .parse()
                .map_err(|_| Error::Parse(format!("STATE message: bad {name}")))
        };
        let msg = StateMessage {
            version: field("version")? as u32,
            robot_id: field("robot id")? as u32,
            tick: field("tick")?,
            x: field("x")? as u32,
            y: field("y")? as u32,
        };
        if parts.next().is_some() {
            return Err(Error::Parse("STATE message has trailing fields".into()));
        }
        Ok(msg)
    }
}

/// Versioned model payload with its checksum.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelAnnouncement {
    pub version: u32,
    pub payload: Vec<u8>,
}

impl ModelAnnouncement {
    pub fn crc(&self) -> u32 {
        crc32(&self.payload)
    }

    /// Header line plus raw payload bytes.
    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        write!(w, "MODEL {} {} {}\n", self.version, self.payload.len(), self.crc())?;
        w.write_all(&self.payload)?;
        w.flush()?;
        Ok(())
    }

    /// Read and checksum-validate one announcement.
    pub fn read_from<R: BufRead>(r: &mut R) -> Result<ModelAnnouncement> {
        let mut line = String::new();
        r.read_line(&mut line)?;
        let mut parts = line.trim_end().split(' ');
        if parts.next() != Some("MODEL") {
            return Err(Error::Parse(format!("expected MODEL header, got '{}'", line.trim_end())));
        }
        let mut field = |name: &str| -> Result<u64> {
            parts
                .next()
                .ok_or_else(|| Error::Parse(format!("MODEL header missing {name}")))?
                .parse()
                .map_err(|_| Error::Parse(format!("MODEL header: bad {name}")))
        };
        let version = field("version")? as u32;
        let len = field("length")? as usize;
        let crc = field("checksum")? as u32;
        const MAX_MODEL_BYTES: usize = 64 << 20;
        if len > MAX_MODEL_BYTES {
            return Err(Error::Parse(format!("model payload of {len} bytes exceeds limit")));
        }
        let mut payload = vec![0u8; len];
        r.read_exact(&mut payload)?;
        if crc32(&payload) != crc {
            return Err(Error::Parse("model payload checksum mismatch".into()));
        }
        Ok(ModelAnnouncement { version, payload })
    }
}

/// Client side of `GET MODEL`.
pub fn write_model_request<W: Write>(w: &mut W, have_version: Option<u32>) -> Result<()> {
    match have_version {
        Some(v) => write!(w, "GET MODEL {v}\n")?,
        None => write!(w, "GET MODEL\n")?,
    }
    w.flush()?;
    Ok(())
}

/// Server side: parse a request line into the client's known version.
pub fn parse_model_request(line: &str) -> Result<Option<u32>> {
    let rest = line
        .trim_end()
        .strip_prefix("GET MODEL")
        .ok_or_else(|| Error::Parse(format!("expected GET MODEL, got '{}'", line.trim_end())))?;
    let rest = rest.trim();
    if rest.is_empty() {
        return Ok(None);
    }
    rest.parse()
        .map(Some)
        .map_err(|_| Error::Parse(format!("bad version in GET MODEL: '{rest}'")))
}
