//! Jump histories.
//!
//! Binary layout (little-endian, version 1):
//!
//! | field            | type            |
//! |------------------|-----------------|
//! | magic            | `b"SRPEVLOG"`   |
//! | version          | `u32`           |
//! | kind             | `u8` (0 original, 1 flow-driven) |
//! | n                | `u64`           |
//! | horizon          | `f64`           |
//! | spec fingerprint | `u64`           |
//! | initial slots    | `n x u32`       |
//! | classes          | `n x u32`       |
//! | event count `E`  | `u64`           |
//! | times            | `E x f64`       |
//! | particles        | `E x u32`       |
//! | pre-jump ranks   | `E x u32`       |

use std::io::{Read, Write};
use std::path::Path;

use super::index::RankIndex;
use crate::error::{Error, Result};
use crate::intensity::PopulationAssignment;

const MAGIC: &[u8; 8] = b"SRPEVLOG";
const VERSION: u32 = 1;

/// Which dynamics produced a log.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LogKind {
    Original,
    FlowDriven,
}

/// One jump to the top.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Event {
    pub time: f64,
    pub particle: u32,
    /// Rank just before the jump; the position is `pre_rank / N`.
    pub pre_rank: u32,
}

/// Complete jump history of one run, in chronological order.
#[derive(Debug, Clone, PartialEq)]
pub struct EventLog {
    kind: LogKind,
    horizon: f64,
    spec_hash: u64,
    initial_slots: Vec<u32>,
    classes: Vec<u32>,
    times: Vec<f64>,
    particles: Vec<u32>,
    pre_ranks: Vec<u32>,
}

impl EventLog {
    pub(crate) fn start(
        kind: LogKind,
        horizon: f64,
        spec_hash: u64,
        assignment: &PopulationAssignment,
    ) -> Self {
        Self {
            kind,
            horizon,
            spec_hash,
            initial_slots: assignment.slots().to_vec(),
            classes: assignment.classes().to_vec(),
            times: Vec::new(),
            particles: Vec::new(),
            pre_ranks: Vec::new(),
        }
    }

    #[inline]
    pub(crate) fn push(&mut self, time: f64, particle: u32, pre_rank: u32) {
        self.times.push(time);
        self.particles.push(particle);
        self.pre_ranks.push(pre_rank);
    }

    pub fn kind(&self) -> LogKind {
        self.kind
    }

    pub fn n(&self) -> usize {
        self.initial_slots.len()
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn spec_hash(&self) -> u64 {
        self.spec_hash
    }

    pub fn initial_slots(&self) -> &[u32] {
        &self.initial_slots
    }

    pub fn classes(&self) -> &[u32] {
        &self.classes
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn particles(&self) -> &[u32] {
        &self.particles
    }

    pub fn pre_ranks(&self) -> &[u32] {
        &self.pre_ranks
    }

    pub fn event(&self, k: usize) -> Event {
        Event {
            time: self.times[k],
            particle: self.particles[k],
            pre_rank: self.pre_ranks[k],
        }
    }

    pub fn events(&self) -> impl Iterator<Item = Event> + '_ {
        (0..self.len()).map(|k| self.event(k))
    }

    /// Number of events at or before `t`.
    pub fn count_until(&self, t: f64) -> usize {
        self.times.partition_point(|&s| s <= t)
    }

    /// Jump times of each particle.
    pub fn jumps_by_particle(&self) -> Vec<Vec<f64>> {
        let mut out = vec![Vec::new(); self.n()];
        for e in self.events() {
            out[e.particle as usize].push(e.time);
        }
        out
    }

    /// Ranks of all particles at time `t` (after every event at or before `t`).
    pub fn ranks_at(&self, t: f64) -> Result<Vec<u32>> {
        let mut idx = RankIndex::new(&self.initial_slots)?;
        for k in 0..self.count_until(t) {
            idx.move_to_front(self.particles[k] as usize)?;
        }
        Ok(idx.ranks())
    }

    /// Replays the log and checks its internal consistency: times in
    /// `(0, T]` and non-decreasing, and each recorded pre-jump rank equal
    /// to the replayed rank. Returns the number of tied event times.
    pub fn validate(&self) -> Result<usize> {
        let mut idx = RankIndex::new(&self.initial_slots)?;
        let mut prev = 0.0;
        let mut ties = 0;
        for e in self.events() {
            if !(e.time > 0.0 && e.time <= self.horizon) || e.time < prev {
                return Err(Error::Format(format!("event time {} out of order", e.time)));
            }
            if e.time == prev {
                ties += 1;
            }
            prev = e.time;
            let r = idx.move_to_front(e.particle as usize)?;
            if r != e.pre_rank {
                return Err(Error::Format(format!(
                    "event at {} records rank {} but replay gives {r}",
                    e.time, e.pre_rank
                )));
            }
        }
        Ok(ties)
    }

    pub fn write_binary<W: Write>(&self, mut out: W) -> Result<()> {
        out.write_all(MAGIC)?;
        out.write_all(&VERSION.to_le_bytes())?;
        out.write_all(&[match self.kind {
            LogKind::Original => 0u8,
            LogKind::FlowDriven => 1u8,
        }])?;
        out.write_all(&(self.n() as u64).to_le_bytes())?;
        out.write_all(&self.horizon.to_le_bytes())?;
        out.write_all(&self.spec_hash.to_le_bytes())?;
        for v in self.initial_slots.iter().chain(&self.classes) {
            out.write_all(&v.to_le_bytes())?;
        }
        out.write_all(&(self.len() as u64).to_le_bytes())?;
        for t in &self.times {
            out.write_all(&t.to_le_bytes())?;
        }
        for v in self.particles.iter().chain(&self.pre_ranks) {
            out.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(mut input: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        input.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Format("not an event log".into()));
        }
        let version = read_u32(&mut input)?;
        if version != VERSION {
            return Err(Error::Format(format!(
                "unsupported event log version {version}"
            )));
        }
        let mut kind = [0u8; 1];
        input.read_exact(&mut kind)?;
        let kind = match kind[0] {
            0 => LogKind::Original,
            1 => LogKind::FlowDriven,
            other => return Err(Error::Format(format!("unknown log kind {other}"))),
        };
        let n = read_u64(&mut input)? as usize;
        let horizon = f64::from_bits(read_u64(&mut input)?);
        let spec_hash = read_u64(&mut input)?;
        let initial_slots = read_u32s(&mut input, n)?;
        let classes = read_u32s(&mut input, n)?;
        let e = read_u64(&mut input)? as usize;
        let mut times = Vec::with_capacity(e);
        for _ in 0..e {
            times.push(f64::from_bits(read_u64(&mut input)?));
        }
        let particles = read_u32s(&mut input, e)?;
        let pre_ranks = read_u32s(&mut input, e)?;
        Ok(Self {
            kind,
            horizon,
            spec_hash,
            initial_slots,
            classes,
            times,
            particles,
            pre_ranks,
        })
    }

    /// Debug dump: `time,particle,pre_jump_position`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let n = self.n() as f64;
        writeln!(out, "time,particle,pre_jump_position")?;
        for e in self.events() {
            writeln!(out, "{},{},{}", e.time, e.particle, e.pre_rank as f64 / n)?;
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_binary(&mut f)?;
        f.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_binary(std::io::BufReader::new(std::fs::File::open(path)?))
    }
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_u32s<R: Read>(r: &mut R, n: usize) -> Result<Vec<u32>> {
    (0..n).map(|_| read_u32(r)).collect()
}
