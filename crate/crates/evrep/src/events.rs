//! Canonical event and stream model plus the EVT1 binary format and CSV import.
//!
//! An [`EventStream`] is an immutable, time-ordered sequence of polarity-signed
//! brightness-change samples together with the sensor geometry and the time
//! window the events were recorded in. Streams built through [`EventStream::new`]
//! or the readers always satisfy the invariants listed on [`validate`];
//! [`EventStream::new_unchecked`] exists so tests can build violating mutants.
//!
//! EVT1 layout (little-endian):
//!
//! ```text
//! header, 24 bytes:  magic "EVT1" | version u16 = 1 | flags u16 = 0
//!                    | H u16 | W u16 | n_events u32 | t_start_lo u32 | t_start_hi u32
//! record, 13 bytes:  x u16 | y u16 | t i64 | p i8 (-1 or +1, nothing else)
//! ```
//!
//! The header does not carry the window's upper bound; readers derive
//! `t_end = max(t_start, last event t)`. Writing a stream and reading it back
//! therefore reproduces every field for streams whose window ends at their last
//! event, and reading any valid file and writing it again is byte-identical.

use std::fmt;
use std::io::{Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use crate::error::{Error, Result};

pub const EVT1_MAGIC: &[u8; 4] = b"EVT1";
pub const EVT1_VERSION: u16 = 1;
pub const EVT1_HEADER_BYTES: u64 = 24;
pub const EVT1_RECORD_BYTES: u64 = 13;

/// Polarity of the log-intensity change that triggered an event.
///
/// Negative sorts before positive, matching the channel layout of every
/// representation grid (channel 0 = negative, channel 1 = positive).
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Polarity {
    Negative,
    Positive,
}

impl Polarity {
    pub fn sign(self) -> i8 {
        match self {
            Polarity::Negative => -1,
            Polarity::Positive => 1,
        }
    }

    pub fn channel(self) -> usize {
        match self {
            Polarity::Negative => 0,
            Polarity::Positive => 1,
        }
    }

    pub fn from_sign(sign: i8) -> Option<Polarity> {
        match sign {
            -1 => Some(Polarity::Negative),
            1 => Some(Polarity::Positive),
            _ => None,
        }
    }
}

/// A single brightness-change sample: pixel location, microsecond timestamp,
/// polarity.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Event {
    pub x: u16,
    pub y: u16,
    pub t: i64,
    pub p: Polarity,
}

/// Sensor geometry: `height` rows by `width` columns.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Geometry {
    pub height: u16,
    pub width: u16,
}

impl Geometry {
    pub fn new(height: u16, width: u16) -> Geometry {
        Geometry { height, width }
    }

    pub fn pixels(&self) -> usize {
        self.height as usize * self.width as usize
    }
}

/// One violated stream invariant, referencing the offending event when there
/// is one.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ValidationIssue {
    EmptyGeometry,
    NegativeStart { t_start: i64 },
    InvertedWindow { t_start: i64, t_end: i64 },
    XOutOfBounds { index: usize, x: u16, width: u16 },
    YOutOfBounds { index: usize, y: u16, height: u16 },
    BeforeWindow { index: usize, t: i64 },
    AfterWindow { index: usize, t: i64 },
    NonMonotoneTimestamp { index: usize, t: i64, prev: i64 },
}

impl fmt::Display for ValidationIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ValidationIssue::EmptyGeometry => write!(f, "geometry has a zero dimension"),
            ValidationIssue::NegativeStart { t_start } => {
                write!(f, "negative window start {t_start}")
            }
            ValidationIssue::InvertedWindow { t_start, t_end } => {
                write!(f, "window start {t_start} exceeds window end {t_end}")
            }
            ValidationIssue::XOutOfBounds { index, x, width } => {
                write!(f, "x out of bounds at index {index} (x={x}, width={width})")
            }
            ValidationIssue::YOutOfBounds { index, y, height } => {
                write!(f, "y out of bounds at index {index} (y={y}, height={height})")
            }
            ValidationIssue::BeforeWindow { index, t } => {
                write!(f, "timestamp before window at index {index} (t={t})")
            }
            ValidationIssue::AfterWindow { index, t } => {
                write!(f, "timestamp after window at index {index} (t={t})")
            }
            ValidationIssue::NonMonotoneTimestamp { index, t, prev } => {
                write!(f, "non-monotone timestamp at index {index} (t={t} after {prev})")
            }
        }
    }
}

/// Every invariant violation found in a stream; empty means valid.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ValidationReport {
    pub issues: Vec<ValidationIssue>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.issues.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, issue) in self.issues.iter().enumerate() {
            if i > 0 {
                writeln!(f)?;
            }
            write!(f, "{issue}")?;
        }
        Ok(())
    }
}

/// Time-ordered event sequence with its sensor geometry and time window.
///
/// Immutable after construction; all operations are pure and the stream is
/// safe to share across threads.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EventStream {
    geometry: Geometry,
    events: Vec<Event>,
    t_start: i64,
    t_end: i64,
}

impl EventStream {
    /// Builds a stream and rejects it if any invariant is violated.
    pub fn new(geometry: Geometry, events: Vec<Event>, t_start: i64, t_end: i64) -> Result<EventStream> {
        let stream = EventStream::new_unchecked(geometry, events, t_start, t_end);
        let report = validate(&stream);
        if report.is_valid() {
            Ok(stream)
        } else {
            Err(Error::Validation(report))
        }
    }

    /// Builds a stream without checking invariants. Intended for tests that
    /// need violating mutants; everything else should use [`EventStream::new`].
    pub fn new_unchecked(geometry: Geometry, events: Vec<Event>, t_start: i64, t_end: i64) -> EventStream {
        EventStream { geometry, events, t_start, t_end }
    }

    pub fn empty(geometry: Geometry, t_start: i64, t_end: i64) -> Result<EventStream> {
        EventStream::new(geometry, Vec::new(), t_start, t_end)
    }

    pub fn geometry(&self) -> Geometry {
        self.geometry
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn t_start(&self) -> i64 {
        self.t_start
    }

    pub fn t_end(&self) -> i64 {
        self.t_end
    }

    pub fn duration_us(&self) -> i64 {
        self.t_end - self.t_start
    }

    /// Restricts the stream to events with `a <= t <= b`, preserving order,
    /// and narrows the window to `[a, b]`.
    pub fn window(&self, a: i64, b: i64) -> Result<EventStream> {
        if a > b {
            return Err(Error::arg(format!("window start {a} exceeds window end {b}")));
        }
        let lo = self.events.partition_point(|e| e.t < a);
        let hi = self.events.partition_point(|e| e.t <= b);
        EventStream::new(self.geometry, self.events[lo..hi].to_vec(), a, b)
    }

    /// Applies the affine time map `t -> t * num / den + offset` (integer
    /// floor division) to every timestamp and to the window bounds. `num` and
    /// `den` must be positive so the map is order-preserving; when every
    /// timestamp is divisible by `den` the map is exact.
    pub fn scale_time(&self, num: i64, den: i64, offset: i64) -> Result<EventStream> {
        if num <= 0 || den <= 0 {
            return Err(Error::arg(format!("time scale {num}/{den} must be positive")));
        }
        let map = |t: i64| t.saturating_mul(num).div_euclid(den) + offset;
        let events = self
            .events
            .iter()
            .map(|e| Event { t: map(e.t), ..*e })
            .collect();
        EventStream::new(self.geometry, events, map(self.t_start), map(self.t_end))
    }
}

/// Checks every typed invariant and reports each violation with the index of
/// the offending event. Valid streams yield an empty report.
pub fn validate(stream: &EventStream) -> ValidationReport {
    let mut issues = Vec::new();
    let g = stream.geometry;
    if g.height == 0 || g.width == 0 {
        issues.push(ValidationIssue::EmptyGeometry);
    }
    if stream.t_start < 0 {
        issues.push(ValidationIssue::NegativeStart { t_start: stream.t_start });
    }
    if stream.t_start > stream.t_end {
        issues.push(ValidationIssue::InvertedWindow { t_start: stream.t_start, t_end: stream.t_end });
    }
    let mut prev_t = None;
    for (index, e) in stream.events.iter().enumerate() {
        if e.x >= g.width {
            issues.push(ValidationIssue::XOutOfBounds { index, x: e.x, width: g.width });
        }
        if e.y >= g.height {
            issues.push(ValidationIssue::YOutOfBounds { index, y: e.y, height: g.height });
        }
        if e.t < stream.t_start {
            issues.push(ValidationIssue::BeforeWindow { index, t: e.t });
        }
        if e.t > stream.t_end {
            issues.push(ValidationIssue::AfterWindow { index, t: e.t });
        }
        if let Some(prev) = prev_t {
            if e.t < prev {
                issues.push(ValidationIssue::NonMonotoneTimestamp { index, t: e.t, prev });
            }
        }
        prev_t = Some(e.t);
    }
    ValidationReport { issues }
}

/// Reads an EVT1 stream, consuming the source to the end. Trailing bytes after
/// the last record are a format error.
pub fn read_stream<R: Read>(mut reader: R) -> Result<EventStream> {
    let mut magic = [0u8; 4];
    reader
        .read_exact(&mut magic)
        .map_err(|_| Error::Truncated { offset: 0, what: "magic" })?;
    if &magic != EVT1_MAGIC {
        return Err(Error::format(format!("bad magic {magic:02x?}, expected \"EVT1\"")));
    }
    let version = reader
        .read_u16::<LittleEndian>()
        .map_err(|_| Error::Truncated { offset: 4, what: "version" })?;
    if version != EVT1_VERSION {
        return Err(Error::format(format!("unsupported EVT1 version {version}")));
    }
    let flags = reader
        .read_u16::<LittleEndian>()
        .map_err(|_| Error::Truncated { offset: 6, what: "flags" })?;
    if flags != 0 {
        return Err(Error::format(format!("unsupported EVT1 flags {flags:#06x}")));
    }
    let height = reader
        .read_u16::<LittleEndian>()
        .map_err(|_| Error::Truncated { offset: 8, what: "height" })?;
    let width = reader
        .read_u16::<LittleEndian>()
        .map_err(|_| Error::Truncated { offset: 10, what: "width" })?;
    let n_events = reader
        .read_u32::<LittleEndian>()
        .map_err(|_| Error::Truncated { offset: 12, what: "event count" })?;
    let t_start_lo = reader
        .read_u32::<LittleEndian>()
        .map_err(|_| Error::Truncated { offset: 16, what: "t_start_lo" })?;
    let t_start_hi = reader
        .read_u32::<LittleEndian>()
        .map_err(|_| Error::Truncated { offset: 20, what: "t_start_hi" })?;
    let t_start = ((t_start_hi as u64) << 32 | t_start_lo as u64) as i64;

    let mut events = Vec::with_capacity(n_events as usize);
    for i in 0..n_events as u64 {
        let offset = EVT1_HEADER_BYTES + i * EVT1_RECORD_BYTES;
        let mut record = [0u8; EVT1_RECORD_BYTES as usize];
        reader
            .read_exact(&mut record)
            .map_err(|_| Error::Truncated { offset, what: "event record" })?;
        let x = u16::from_le_bytes([record[0], record[1]]);
        let y = u16::from_le_bytes([record[2], record[3]]);
        let t = i64::from_le_bytes(record[4..12].try_into().unwrap());
        let p_raw = record[12] as i8;
        let p = Polarity::from_sign(p_raw)
            .ok_or_else(|| Error::format(format!("polarity {p_raw} at record {i}, must be -1 or +1")))?;
        events.push(Event { x, y, t, p });
    }
    let mut trailing = [0u8; 1];
    if reader.read(&mut trailing)? != 0 {
        return Err(Error::format("trailing bytes after final record".to_string()));
    }

    let t_end = events.last().map_or(t_start, |e| e.t.max(t_start));
    EventStream::new(Geometry::new(height, width), events, t_start, t_end)
}

pub fn read_stream_path(path: &Path) -> Result<EventStream> {
    let file = std::fs::File::open(path)?;
    read_stream(std::io::BufReader::new(file))
}

/// Writes the stream as EVT1 and returns the byte count, always
/// `24 + 13 * n_events`. The stream is re-validated first.
pub fn write_stream<W: Write>(stream: &EventStream, mut writer: W) -> Result<u64> {
    let report = validate(stream);
    if !report.is_valid() {
        return Err(Error::Validation(report));
    }
    if stream.events.len() > u32::MAX as usize {
        return Err(Error::arg(format!("{} events exceed the EVT1 u32 count", stream.events.len())));
    }
    writer.write_all(EVT1_MAGIC)?;
    writer.write_u16::<LittleEndian>(EVT1_VERSION)?;
    writer.write_u16::<LittleEndian>(0)?;
    writer.write_u16::<LittleEndian>(stream.geometry.height)?;
    writer.write_u16::<LittleEndian>(stream.geometry.width)?;
    writer.write_u32::<LittleEndian>(stream.events.len() as u32)?;
    let t_start_bits = stream.t_start as u64;
    writer.write_u32::<LittleEndian>(t_start_bits as u32)?;
    writer.write_u32::<LittleEndian>((t_start_bits >> 32) as u32)?;
    for e in &stream.events {
        writer.write_u16::<LittleEndian>(e.x)?;
        writer.write_u16::<LittleEndian>(e.y)?;
        writer.write_i64::<LittleEndian>(e.t)?;
        writer.write_i8(e.p.sign())?;
    }
    Ok(EVT1_HEADER_BYTES + stream.events.len() as u64 * EVT1_RECORD_BYTES)
}

pub fn write_stream_path(stream: &EventStream, path: &Path) -> Result<u64> {
    let file = std::fs::File::create(path)?;
    let mut writer = std::io::BufWriter::new(file);
    let n = write_stream(stream, &mut writer)?;
    writer.flush()?;
    Ok(n)
}

/// Imports the CSV form: a `x,y,t,p` header then one event per line. The
/// window is `[0, last event t]`; the same invariants apply, so unsorted
/// input is rejected rather than sorted.
pub fn read_csv<R: std::io::BufRead>(reader: R, geometry: Geometry) -> Result<EventStream> {
    let mut lines = reader.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::format("missing CSV header".to_string()))??;
    if header.trim() != "x,y,t,p" {
        return Err(Error::format(format!("bad CSV header {header:?}, expected \"x,y,t,p\"")));
    }
    let mut events = Vec::new();
    for (lineno, line) in lines.enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 4 {
            return Err(Error::format(format!("line {}: expected 4 fields, got {}", lineno + 2, fields.len())));
        }
        let parse = |field: &str, what: &str| -> Result<i64> {
            field
                .trim()
                .parse::<i64>()
                .map_err(|_| Error::format(format!("line {}: bad {} {:?}", lineno + 2, what, field)))
        };
        let x = parse(fields[0], "x")?;
        let y = parse(fields[1], "y")?;
        let t = parse(fields[2], "t")?;
        let p_raw = parse(fields[3], "p")?;
        let p = match p_raw {
            -1 => Polarity::Negative,
            1 => Polarity::Positive,
            other => {
                return Err(Error::format(format!("line {}: polarity {other} must be -1 or +1", lineno + 2)))
            }
        };
        if !(0..=u16::MAX as i64).contains(&x) || !(0..=u16::MAX as i64).contains(&y) {
            return Err(Error::format(format!("line {}: pixel ({x}, {y}) outside u16 range", lineno + 2)));
        }
        events.push(Event { x: x as u16, y: y as u16, t, p });
    }
    let t_end = events.last().map_or(0, |e| e.t.max(0));
    EventStream::new(geometry, events, 0, t_end)
}
