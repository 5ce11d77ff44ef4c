//! Trajectory logs in the canonical CSV layout.
//!
//! Header: `t,q0,q1,q2,qd0,qd1,qd2,tau1,tau2,foot_x,foot_y,contact,f_n`.
//! `q0`/`qd0` are the rail coordinate, `q1`/`q2` hip and knee. `contact` is
//! written as `0` or `1`. Floats use the shortest representation that
//! round-trips exactly.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const CSV_HEADER: [&str; 13] = [
    "t", "q0", "q1", "q2", "qd0", "qd1", "qd2", "tau1", "tau2", "foot_x", "foot_y", "contact", "f_n",
];

#[derive(Debug, Error)]
pub enum LogError {
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("unexpected csv header {found:?}")]
    Header { found: Vec<String> },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogRow {
    pub t: f64,
    pub q: [f64; 3],
    pub qd: [f64; 3],
    pub tau: [f64; 2],
    pub foot: [f64; 2],
    pub contact: bool,
    pub f_n: f64,
}

impl LogRow {
    pub fn base_height(&self) -> f64 {
        self.q[0]
    }
}

#[derive(Serialize, Deserialize)]
struct CsvRow {
    t: f64,
    q0: f64,
    q1: f64,
    q2: f64,
    qd0: f64,
    qd1: f64,
    qd2: f64,
    tau1: f64,
    tau2: f64,
    foot_x: f64,
    foot_y: f64,
    contact: u8,
    f_n: f64,
}

impl From<&LogRow> for CsvRow {
    fn from(r: &LogRow) -> Self {
        Self {
            t: r.t,
            q0: r.q[0],
            q1: r.q[1],
            q2: r.q[2],
            qd0: r.qd[0],
            qd1: r.qd[1],
            qd2: r.qd[2],
            tau1: r.tau[0],
            tau2: r.tau[1],
            foot_x: r.foot[0],
            foot_y: r.foot[1],
            contact: u8::from(r.contact),
            f_n: r.f_n,
        }
    }
}

impl From<CsvRow> for LogRow {
    fn from(r: CsvRow) -> Self {
        Self {
            t: r.t,
            q: [r.q0, r.q1, r.q2],
            qd: [r.qd0, r.qd1, r.qd2],
            tau: [r.tau1, r.tau2],
            foot: [r.foot_x, r.foot_y],
            contact: r.contact != 0,
            f_n: r.f_n,
        }
    }
}

/// Time-stamped samples recorded at every control tick.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrajectoryLog {
    pub rows: Vec<LogRow>,
}

impl TrajectoryLog {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), LogError> {
        let mut w = csv::Writer::from_writer(writer);
        if self.rows.is_empty() {
            w.write_record(CSV_HEADER)?;
        }
        for row in &self.rows {
            w.serialize(CsvRow::from(row))?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self, LogError> {
        let mut r = csv::Reader::from_reader(reader);
        let header = r.headers()?.clone();
        if header.iter().ne(CSV_HEADER.iter().copied()) {
            return Err(LogError::Header {
                found: header.iter().map(str::to_owned).collect(),
            });
        }
        let rows = r
            .deserialize::<CsvRow>()
            .map(|row| row.map(LogRow::from))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self { rows })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), LogError> {
        let file = std::fs::File::create(path)?;
        self.write_csv(std::io::BufWriter::new(file))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, LogError> {
        let file = std::fs::File::open(path)?;
        Self::read_csv(std::io::BufReader::new(file))
    }
}
