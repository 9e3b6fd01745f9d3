//! JSON-lines trace of a run: one object per tick with a fixed field order.
//!
//! ```text
//! {"tick":12,"state":"awake","winner":{"origin":3,"time":8,"kind":"info","labels":["LOW_FUEL"],"weight":-4.0,"intensity":9.5,"mood":-2.5}}
//! ```
//!
//! `winner` is `null` while the pipeline fills. A `notes` array is appended
//! only on ticks where something external happened (a fault, a reboot, a
//! new link).

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::Serialize;

use crate::chunk::{Chunk, Tick};
use crate::error::Result;
use crate::scheduler::TickRecord;

#[derive(Serialize)]
struct Winner<'a> {
    origin: u32,
    time: Tick,
    kind: &'static str,
    labels: Vec<&'a str>,
    weight: f64,
    intensity: f64,
    mood: f64,
}

impl<'a> From<&'a Chunk> for Winner<'a> {
    fn from(c: &'a Chunk) -> Self {
        Self {
            origin: c.origin.0,
            time: c.time,
            kind: c.gist.kind.as_str(),
            labels: c.gist.labels().iter().map(|l| l.name.as_str()).collect(),
            weight: c.weight,
            intensity: c.intensity(),
            mood: c.mood(),
        }
    }
}

#[derive(Serialize)]
struct Line<'a> {
    tick: Tick,
    state: &'static str,
    winner: Option<Winner<'a>>,
    #[serde(skip_serializing_if = "<[String]>::is_empty")]
    notes: &'a [String],
}

/// One trace line, without the trailing newline.
pub fn trace_line(rec: &TickRecord) -> String {
    serde_json::to_string(&Line {
        tick: rec.tick,
        state: rec.state.as_str(),
        winner: rec.winner.as_ref().map(Winner::from),
        notes: &rec.notes,
    })
    .expect("trace lines always serialize")
}

pub struct TraceWriter<W: Write> {
    out: BufWriter<W>,
    lines: u64,
}

impl TraceWriter<File> {
    pub fn create(path: &Path) -> Result<Self> {
        Ok(Self::new(File::create(path)?))
    }
}

impl<W: Write> TraceWriter<W> {
    pub fn new(out: W) -> Self {
        Self {
            out: BufWriter::new(out),
            lines: 0,
        }
    }

    pub fn write(&mut self, rec: &TickRecord) -> Result<()> {
        self.out.write_all(trace_line(rec).as_bytes())?;
        self.out.write_all(b"\n")?;
        self.lines += 1;
        Ok(())
    }

    pub fn lines(&self) -> u64 {
        self.lines
    }

    pub fn finish(mut self) -> Result<W> {
        self.out.flush()?;
        self.out
            .into_inner()
            .map_err(|e| crate::error::CtmError::Io(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chunk::{make_chunk, Gist, GistKind, ProcessorId};
    use crate::stm::MachineState;

    #[test]
    fn line_layout_is_fixed() {
        let c = make_chunk(ProcessorId(3), 8, Gist::tagged(GistKind::Info, &["LOW_FUEL"], None), -4.0).unwrap();
        let rec = TickRecord {
            tick: 12,
            state: MachineState::Awake,
            winner: Some(c),
            commands: 0,
            notes: Vec::new(),
        };
        assert_eq!(
            trace_line(&rec),
            r#"{"tick":12,"state":"awake","winner":{"origin":3,"time":8,"kind":"info","labels":["LOW_FUEL"],"weight":-4.0,"intensity":4.0,"mood":-4.0}}"#
        );
        let empty = TickRecord {
            tick: 0,
            state: MachineState::Awake,
            winner: None,
            commands: 0,
            notes: vec!["reboot".into()],
        };
        assert_eq!(trace_line(&empty), r#"{"tick":0,"state":"awake","winner":null,"notes":["reboot"]}"#);
    }

    #[test]
    fn writer_counts_lines() {
        let rec = TickRecord {
            tick: 0,
            state: MachineState::Asleep,
            winner: None,
            commands: 0,
            notes: Vec::new(),
        };
        let mut w = TraceWriter::new(Vec::new());
        w.write(&rec).unwrap();
        w.write(&rec).unwrap();
        assert_eq!(w.lines(), 2);
        let bytes = w.finish().unwrap();
        assert_eq!(String::from_utf8(bytes).unwrap().lines().count(), 2);
    }
}
