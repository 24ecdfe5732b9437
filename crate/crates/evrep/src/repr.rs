//! Dense grid representations of an event stream.
//!
//! Every builder aggregates a stream into a 2-channel (or, for the event
//! image, 4-channel) `H x W` grid of `f64`, channel 0 holding the negative
//! polarity and channel 1 the positive. The discounted variants subtract a
//! neighborhood-derived penalty from each pixel's newest timestamp before
//! normalizing:
//!
//! * the discount is the neighborhood event time range divided by the
//!   neighborhood event count, so sparse slow activity (background noise) and
//!   spatially isolated repeaters (hot pixels) receive large discounts;
//! * the discounted timestamp image min-max normalizes the result, while the
//!   discounted *sorted* timestamp image replaces each occupied value by its
//!   global rank across both channels, scaled so the largest rank maps to 1.
//!
//! Rank outputs depend only on the ordering of timestamps, which makes them
//! exactly invariant under positive affine time maps.

use std::fmt;
use std::io::{Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use crate::error::{Error, Result};
use crate::events::{EventStream, Geometry};
use crate::neighborhood::{compute_stats, pixel_stats, NeighborhoodStats};

pub const RGR1_MAGIC: &[u8; 4] = b"RGR1";

/// Identifier of a grid representation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ReprKind {
    Binary,
    Histogram,
    Timestamp,
    EventImage,
    TimeSurface,
    Hats,
    SortedTimeSurface,
    Dit,
    Dist,
    /// Neighborhood discount in microseconds; an intermediate grid, not part
    /// of the representation catalog.
    Discount,
}

impl ReprKind {
    /// The nine catalog representations, in CLI naming order.
    pub const CATALOG: [ReprKind; 9] = [
        ReprKind::Binary,
        ReprKind::Histogram,
        ReprKind::Timestamp,
        ReprKind::EventImage,
        ReprKind::TimeSurface,
        ReprKind::Hats,
        ReprKind::SortedTimeSurface,
        ReprKind::Dit,
        ReprKind::Dist,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ReprKind::Binary => "binary",
            ReprKind::Histogram => "histogram",
            ReprKind::Timestamp => "timestamp",
            ReprKind::EventImage => "event_image",
            ReprKind::TimeSurface => "time_surface",
            ReprKind::Hats => "hats",
            ReprKind::SortedTimeSurface => "sorted_ts",
            ReprKind::Dit => "dit",
            ReprKind::Dist => "dist",
            ReprKind::Discount => "discount",
        }
    }

    pub fn channels(self) -> usize {
        match self {
            ReprKind::EventImage => 4,
            _ => 2,
        }
    }

    fn id(self) -> u16 {
        match self {
            ReprKind::Binary => 0,
            ReprKind::Histogram => 1,
            ReprKind::Timestamp => 2,
            ReprKind::EventImage => 3,
            ReprKind::TimeSurface => 4,
            ReprKind::Hats => 5,
            ReprKind::SortedTimeSurface => 6,
            ReprKind::Dit => 7,
            ReprKind::Dist => 8,
            ReprKind::Discount => 9,
        }
    }

    fn from_id(id: u16) -> Option<ReprKind> {
        match id {
            0 => Some(ReprKind::Binary),
            1 => Some(ReprKind::Histogram),
            2 => Some(ReprKind::Timestamp),
            3 => Some(ReprKind::EventImage),
            4 => Some(ReprKind::TimeSurface),
            5 => Some(ReprKind::Hats),
            6 => Some(ReprKind::SortedTimeSurface),
            7 => Some(ReprKind::Dit),
            8 => Some(ReprKind::Dist),
            9 => Some(ReprKind::Discount),
            _ => None,
        }
    }
}

impl fmt::Display for ReprKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for ReprKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<ReprKind> {
        ReprKind::CATALOG
            .iter()
            .copied()
            .chain([ReprKind::Discount])
            .find(|k| k.name() == s)
            .ok_or_else(|| {
                let names: Vec<&str> = ReprKind::CATALOG.iter().map(|k| k.name()).collect();
                Error::arg(format!("unknown representation {s:?}; expected one of {}", names.join(", ")))
            })
    }
}

/// Parameters a representation was computed with; only the applicable ones
/// are set. Embedded in RGR1 files as `key=value` pairs.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ReprParams {
    pub alpha: Option<f64>,
    pub rho: Option<u32>,
    pub tau_us: Option<f64>,
    pub cell: Option<u32>,
    pub patch: Option<u32>,
}

impl ReprParams {
    pub fn with_alpha_rho(alpha: f64, rho: u32) -> ReprParams {
        ReprParams { alpha: Some(alpha), rho: Some(rho), ..ReprParams::default() }
    }

    pub fn with_tau(tau_us: f64) -> ReprParams {
        ReprParams { tau_us: Some(tau_us), ..ReprParams::default() }
    }
}

/// An `H x W x C` grid holding one computed representation, the parameters it
/// was computed with, and the time window of its source stream. Data is laid
/// out channel-major, then row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct ReprGrid {
    kind: ReprKind,
    geometry: Geometry,
    channels: usize,
    data: Vec<f64>,
    params: ReprParams,
    window: (i64, i64),
}

impl ReprGrid {
    fn zeros(kind: ReprKind, stream: &EventStream, params: ReprParams) -> ReprGrid {
        let geometry = stream.geometry();
        let channels = kind.channels();
        ReprGrid {
            kind,
            geometry,
            channels,
            data: vec![0.0; channels * geometry.pixels()],
            params,
            window: (stream.t_start(), stream.t_end()),
        }
    }

    pub fn kind(&self) -> ReprKind {
        self.kind
    }

    pub fn geometry(&self) -> Geometry {
        self.geometry
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn params(&self) -> &ReprParams {
        &self.params
    }

    pub fn window(&self) -> (i64, i64) {
        self.window
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn index(&self, channel: usize, y: usize, x: usize) -> usize {
        debug_assert!(channel < self.channels);
        (channel * self.geometry.height as usize + y) * self.geometry.width as usize + x
    }

    #[inline]
    pub fn get(&self, channel: usize, y: usize, x: usize) -> f64 {
        self.data[self.index(channel, y, x)]
    }

    pub fn channel(&self, channel: usize) -> &[f64] {
        let pixels = self.geometry.pixels();
        &self.data[channel * pixels..(channel + 1) * pixels]
    }
}

fn require_positive(value: f64, name: &str) -> Result<()> {
    if !(value.is_finite() && value > 0.0) {
        return Err(Error::arg(format!("{name} must be positive and finite, got {value}")));
    }
    Ok(())
}

fn require_discount_args(alpha: f64, rho: u32) -> Result<()> {
    if !(alpha.is_finite() && alpha >= 0.0) {
        return Err(Error::arg(format!("alpha must be nonnegative and finite, got {alpha}")));
    }
    if rho < 2 {
        return Err(Error::arg(format!("rho must be at least 2, got {rho}")));
    }
    Ok(())
}

/// 1 where the pixel saw at least one event of the channel's polarity, else 0.
pub fn binary_event_image(stream: &EventStream) -> ReprGrid {
    let stats = pixel_stats(stream);
    let mut grid = ReprGrid::zeros(ReprKind::Binary, stream, ReprParams::default());
    fill_from_stats(&mut grid, &stats, |st, x, y, c| f64::from(st.count(x, y, c) > 0));
    grid
}

/// Per-pixel event count, one channel per polarity.
pub fn event_histogram(stream: &EventStream) -> ReprGrid {
    let stats = pixel_stats(stream);
    let mut grid = ReprGrid::zeros(ReprKind::Histogram, stream, ReprParams::default());
    fill_from_stats(&mut grid, &stats, |st, x, y, c| st.count(x, y, c) as f64);
    grid
}

/// Newest event timestamp per pixel, normalized over the stream window to
/// `[0, 1]`; empty pixels are 0. A degenerate window maps occupied pixels
/// to 1.
pub fn timestamp_image(stream: &EventStream) -> ReprGrid {
    let stats = pixel_stats(stream);
    let mut grid = ReprGrid::zeros(ReprKind::Timestamp, stream, ReprParams::default());
    let t_start = stream.t_start();
    let span = (stream.t_end() - t_start) as f64;
    fill_from_stats(&mut grid, &stats, |st, x, y, c| match st.t_new(x, y, c) {
        Some(t) if span > 0.0 => (t - t_start) as f64 / span,
        Some(_) => 1.0,
        None => 0.0,
    });
    grid
}

/// Event histogram (channels 0-1) concatenated with the timestamp image
/// (channels 2-3).
pub fn event_image(stream: &EventStream) -> ReprGrid {
    let hist = event_histogram(stream);
    let ts = timestamp_image(stream);
    let mut grid = ReprGrid::zeros(ReprKind::EventImage, stream, ReprParams::default());
    let pixels = grid.geometry.pixels();
    grid.data[..2 * pixels].copy_from_slice(hist.data());
    grid.data[2 * pixels..].copy_from_slice(ts.data());
    grid
}

/// Exponentially decayed newest timestamp: `exp(-(t_end - t_new) / tau)` at
/// occupied pixels, 0 elsewhere.
pub fn time_surface(stream: &EventStream, tau_us: f64) -> Result<ReprGrid> {
    require_positive(tau_us, "tau")?;
    let stats = pixel_stats(stream);
    let mut grid = ReprGrid::zeros(ReprKind::TimeSurface, stream, ReprParams::with_tau(tau_us));
    let t_end = stream.t_end();
    fill_from_stats(&mut grid, &stats, |st, x, y, c| match st.t_new(x, y, c) {
        Some(t) => (-((t_end - t) as f64) / tau_us).exp(),
        None => 0.0,
    });
    Ok(grid)
}

/// Tile-averaged time surface: the sensor is partitioned into `cell x cell`
/// tiles and every pixel of a tile takes the mean time-surface value over the
/// tile's occupied pixels (0 if the tile is empty for that polarity).
pub fn hats_surface(stream: &EventStream, cell: u32, tau_us: f64) -> Result<ReprGrid> {
    if cell < 1 {
        return Err(Error::arg("cell must be at least 1".to_string()));
    }
    require_positive(tau_us, "tau")?;
    let surface = time_surface(stream, tau_us)?;
    let stats = pixel_stats(stream);
    let mut grid = ReprGrid::zeros(ReprKind::Hats, stream, ReprParams {
        cell: Some(cell),
        tau_us: Some(tau_us),
        ..ReprParams::default()
    });
    let (h, w) = (grid.geometry.height as usize, grid.geometry.width as usize);
    let cell = cell as usize;
    for c in 0..2 {
        for tile_y in (0..h).step_by(cell) {
            for tile_x in (0..w).step_by(cell) {
                let y_end = (tile_y + cell).min(h);
                let x_end = (tile_x + cell).min(w);
                let mut sum = 0.0;
                let mut occupied = 0u32;
                for y in tile_y..y_end {
                    for x in tile_x..x_end {
                        if stats.count(x, y, c) > 0 {
                            sum += surface.get(c, y, x);
                            occupied += 1;
                        }
                    }
                }
                let mean = if occupied > 0 { sum / occupied as f64 } else { 0.0 };
                for y in tile_y..y_end {
                    for x in tile_x..x_end {
                        let i = grid.index(c, y, x);
                        grid.data[i] = mean;
                    }
                }
            }
        }
    }
    Ok(grid)
}

/// Neighborhood discount in microseconds: event time range of the radius-rho
/// neighborhood divided by its event count, at pixels that themselves carry
/// events; 0 (and excluded from any downstream subtraction) elsewhere.
pub fn discount_grid(stream: &EventStream, rho: u32) -> Result<ReprGrid> {
    require_discount_args(0.0, rho)?;
    let own = pixel_stats(stream);
    let hood = compute_stats(stream, rho);
    let mut grid = ReprGrid::zeros(ReprKind::Discount, stream, ReprParams {
        rho: Some(rho),
        ..ReprParams::default()
    });
    fill_from_stats(&mut grid, &own, |own, x, y, c| {
        if own.count(x, y, c) == 0 {
            return 0.0;
        }
        let newest = hood.t_new(x, y, c).expect("occupied pixel has occupied neighborhood");
        let oldest = hood.t_old(x, y, c).expect("occupied pixel has occupied neighborhood");
        (newest - oldest) as f64 / hood.count(x, y, c) as f64
    });
    Ok(grid)
}

/// Raw discounted timestamps (newest pixel timestamp minus `alpha` times the
/// neighborhood discount) together with the occupancy mask, shared by the
/// discounted representations.
fn discounted_raw(stream: &EventStream, alpha: f64, rho: u32) -> Result<(Vec<f64>, Vec<bool>, usize, usize)> {
    require_discount_args(alpha, rho)?;
    let own = pixel_stats(stream);
    let discount = discount_grid(stream, rho)?;
    let (h, w) = (own.height(), own.width());
    let mut raw = vec![0.0; 2 * h * w];
    let mut occupied = vec![false; 2 * h * w];
    for c in 0..2 {
        for y in 0..h {
            for x in 0..w {
                if let Some(t_new) = own.t_new(x, y, c) {
                    let i = (c * h + y) * w + x;
                    raw[i] = t_new as f64 - alpha * discount.get(c, y, x);
                    occupied[i] = true;
                }
            }
        }
    }
    Ok((raw, occupied, h, w))
}

/// Discounted timestamp image: raw discounted timestamps min-max normalized
/// to `[0, 1]` over the occupied pixels of both channels jointly; unoccupied
/// pixels are 0. When all occupied values coincide they map to 1.
pub fn dit(stream: &EventStream, alpha: f64, rho: u32) -> Result<ReprGrid> {
    let (raw, occupied, ..) = discounted_raw(stream, alpha, rho)?;
    let mut grid = ReprGrid::zeros(ReprKind::Dit, stream, ReprParams::with_alpha_rho(alpha, rho));
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for (i, &occ) in occupied.iter().enumerate() {
        if occ {
            lo = lo.min(raw[i]);
            hi = hi.max(raw[i]);
        }
    }
    if lo <= hi {
        let span = hi - lo;
        for (i, &occ) in occupied.iter().enumerate() {
            if occ {
                grid.data[i] = if span > 0.0 { (raw[i] - lo) / span } else { 1.0 };
            }
        }
    }
    Ok(grid)
}

/// Discounted sorted timestamp image: each occupied pixel of either channel
/// receives its rank (1-based, ascending raw discounted timestamp, ties broken
/// by (polarity, y, x)) divided by the occupied count, so values lie in
/// `(0, 1]` with the newest-ranked pixel exactly 1; unoccupied pixels are 0.
pub fn dist(stream: &EventStream, alpha: f64, rho: u32) -> Result<ReprGrid> {
    let (raw, occupied, h, w) = discounted_raw(stream, alpha, rho)?;
    let mut grid = ReprGrid::zeros(ReprKind::Dist, stream, ReprParams::with_alpha_rho(alpha, rho));
    rank_normalize(&raw, &occupied, h, w, &mut grid.data);
    Ok(grid)
}

/// Globally sort-normalized timestamp image: the rank transform applied to
/// the raw newest timestamps, i.e. the discounted sorted image with alpha 0.
pub fn sorted_time_surface(stream: &EventStream) -> ReprGrid {
    let own = pixel_stats(stream);
    let (h, w) = (own.height(), own.width());
    let mut raw = vec![0.0; 2 * h * w];
    let mut occupied = vec![false; 2 * h * w];
    for c in 0..2 {
        for y in 0..h {
            for x in 0..w {
                if let Some(t_new) = own.t_new(x, y, c) {
                    let i = (c * h + y) * w + x;
                    raw[i] = t_new as f64;
                    occupied[i] = true;
                }
            }
        }
    }
    let mut grid = ReprGrid::zeros(ReprKind::SortedTimeSurface, stream, ReprParams::default());
    rank_normalize(&raw, &occupied, h, w, &mut grid.data);
    grid
}

/// Patch-wise variant of [`sorted_time_surface`]: ranks are computed within
/// each `patch x patch` tile (both channels of a tile jointly) and normalized
/// by the tile's own occupied count.
pub fn sorted_time_surface_patchwise(stream: &EventStream, patch: u32) -> Result<ReprGrid> {
    if patch < 1 {
        return Err(Error::arg("patch must be at least 1".to_string()));
    }
    let own = pixel_stats(stream);
    let (h, w) = (own.height(), own.width());
    let mut grid = ReprGrid::zeros(ReprKind::SortedTimeSurface, stream, ReprParams {
        patch: Some(patch),
        ..ReprParams::default()
    });
    let patch = patch as usize;
    for tile_y in (0..h).step_by(patch) {
        for tile_x in (0..w).step_by(patch) {
            let y_end = (tile_y + patch).min(h);
            let x_end = (tile_x + patch).min(w);
            let mut entries: Vec<(f64, usize, usize, usize)> = Vec::new();
            for c in 0..2 {
                for y in tile_y..y_end {
                    for x in tile_x..x_end {
                        if let Some(t_new) = own.t_new(x, y, c) {
                            entries.push((t_new as f64, c, y, x));
                        }
                    }
                }
            }
            entries.sort_unstable_by(|a, b| {
                a.0.partial_cmp(&b.0)
                    .expect("timestamps are finite")
                    .then(a.1.cmp(&b.1))
                    .then(a.2.cmp(&b.2))
                    .then(a.3.cmp(&b.3))
            });
            let m = entries.len() as f64;
            for (rank0, &(_, c, y, x)) in entries.iter().enumerate() {
                let i = grid.index(c, y, x);
                grid.data[i] = (rank0 + 1) as f64 / m;
            }
        }
    }
    Ok(grid)
}

/// Assigns ascending ranks 1..=m over the occupied entries of both channels
/// (ties broken by (channel, y, x)) and writes rank/m; unoccupied stay 0.
fn rank_normalize(raw: &[f64], occupied: &[bool], h: usize, w: usize, out: &mut [f64]) {
    let mut entries: Vec<(f64, u32)> = Vec::new();
    for (i, &occ) in occupied.iter().enumerate() {
        if occ {
            // The flat index already orders (channel, y, x) lexicographically.
            entries.push((raw[i], i as u32));
        }
    }
    debug_assert!(h * w * 2 <= u32::MAX as usize);
    entries.sort_unstable_by(|a, b| {
        a.0.partial_cmp(&b.0).expect("discounted timestamps are finite").then(a.1.cmp(&b.1))
    });
    let m = entries.len() as f64;
    for (rank0, &(_, i)) in entries.iter().enumerate() {
        out[i as usize] = (rank0 + 1) as f64 / m;
    }
}

fn fill_from_stats<F>(grid: &mut ReprGrid, stats: &NeighborhoodStats, f: F)
where
    F: Fn(&NeighborhoodStats, usize, usize, usize) -> f64,
{
    let (h, w) = (stats.height(), stats.width());
    for c in 0..2 {
        for y in 0..h {
            for x in 0..w {
                let i = grid.index(c, y, x);
                grid.data[i] = f(stats, x, y, c);
            }
        }
    }
}

/// Dispatches to the builder named by `kind` with the applicable parameters;
/// missing parameters fall back to [`defaults`].
pub fn compute(stream: &EventStream, kind: ReprKind, params: &ReprParams) -> Result<ReprGrid> {
    let d = defaults();
    let alpha = params.alpha.unwrap_or(d.alpha.unwrap());
    let rho = params.rho.unwrap_or(d.rho.unwrap());
    let tau = params.tau_us.unwrap_or(d.tau_us.unwrap());
    let cell = params.cell.unwrap_or(d.cell.unwrap());
    match kind {
        ReprKind::Binary => Ok(binary_event_image(stream)),
        ReprKind::Histogram => Ok(event_histogram(stream)),
        ReprKind::Timestamp => Ok(timestamp_image(stream)),
        ReprKind::EventImage => Ok(event_image(stream)),
        ReprKind::TimeSurface => time_surface(stream, tau),
        ReprKind::Hats => hats_surface(stream, cell, tau),
        ReprKind::SortedTimeSurface => match params.patch {
            Some(patch) => sorted_time_surface_patchwise(stream, patch),
            None => Ok(sorted_time_surface(stream)),
        },
        ReprKind::Dit => dit(stream, alpha, rho),
        ReprKind::Dist => dist(stream, alpha, rho),
        ReprKind::Discount => discount_grid(stream, rho),
    }
}

/// Default parameter set: alpha 5, rho 3, tau 50000 us, HATS cell 8. These
/// are library defaults, not values taken from any reference recording; every
/// output grid embeds the parameters actually used.
pub fn defaults() -> ReprParams {
    ReprParams {
        alpha: Some(5.0),
        rho: Some(3),
        tau_us: Some(50_000.0),
        cell: Some(8),
        patch: None,
    }
}

// ---------------------------------------------------------------------------
// RGR1 serialization
// ---------------------------------------------------------------------------

fn params_block(grid: &ReprGrid) -> String {
    let mut pairs: Vec<String> = Vec::new();
    let p = &grid.params;
    if let Some(alpha) = p.alpha {
        pairs.push(format!("alpha={alpha}"));
    }
    if let Some(rho) = p.rho {
        pairs.push(format!("rho={rho}"));
    }
    if let Some(tau) = p.tau_us {
        pairs.push(format!("tau={tau}"));
    }
    if let Some(cell) = p.cell {
        pairs.push(format!("cell={cell}"));
    }
    if let Some(patch) = p.patch {
        pairs.push(format!("patch={patch}"));
    }
    pairs.push(format!("t_start={}", grid.window.0));
    pairs.push(format!("t_end={}", grid.window.1));
    pairs.join(";")
}

fn parse_params_block(block: &str) -> Result<(ReprParams, (i64, i64))> {
    let mut params = ReprParams::default();
    let mut t_start = None;
    let mut t_end = None;
    for pair in block.split(';').filter(|p| !p.is_empty()) {
        let (key, value) = pair
            .split_once('=')
            .ok_or_else(|| Error::format(format!("bad param pair {pair:?}")))?;
        let bad = |what: &str| Error::format(format!("bad {what} value {value:?}"));
        match key {
            "alpha" => params.alpha = Some(value.parse().map_err(|_| bad("alpha"))?),
            "rho" => params.rho = Some(value.parse().map_err(|_| bad("rho"))?),
            "tau" => params.tau_us = Some(value.parse().map_err(|_| bad("tau"))?),
            "cell" => params.cell = Some(value.parse().map_err(|_| bad("cell"))?),
            "patch" => params.patch = Some(value.parse().map_err(|_| bad("patch"))?),
            "t_start" => t_start = Some(value.parse().map_err(|_| bad("t_start"))?),
            "t_end" => t_end = Some(value.parse().map_err(|_| bad("t_end"))?),
            _ => return Err(Error::format(format!("unknown param key {key:?}"))),
        }
    }
    let t_start = t_start.ok_or_else(|| Error::format("missing t_start param".to_string()))?;
    let t_end = t_end.ok_or_else(|| Error::format("missing t_end param".to_string()))?;
    Ok((params, (t_start, t_end)))
}

/// Writes an RGR1 grid file and returns the byte count.
pub fn write_rgr1<W: Write>(grid: &ReprGrid, mut writer: W) -> Result<u64> {
    let block = params_block(grid);
    if block.len() > u16::MAX as usize {
        return Err(Error::arg("param block exceeds u16 length".to_string()));
    }
    writer.write_all(RGR1_MAGIC)?;
    writer.write_u16::<LittleEndian>(grid.kind.id())?;
    writer.write_u16::<LittleEndian>(grid.geometry.height)?;
    writer.write_u16::<LittleEndian>(grid.geometry.width)?;
    writer.write_u16::<LittleEndian>(grid.channels as u16)?;
    writer.write_u16::<LittleEndian>(block.len() as u16)?;
    writer.write_all(block.as_bytes())?;
    for &v in &grid.data {
        writer.write_f64::<LittleEndian>(v)?;
    }
    Ok(14 + block.len() as u64 + grid.data.len() as u64 * 8)
}

pub fn write_rgr1_path(grid: &ReprGrid, path: &Path) -> Result<u64> {
    let file = std::fs::File::create(path)?;
    let mut writer = std::io::BufWriter::new(file);
    let n = write_rgr1(grid, &mut writer)?;
    writer.flush()?;
    Ok(n)
}

/// Reads an RGR1 grid file, consuming the source to the end.
pub fn read_rgr1<R: Read>(mut reader: R) -> Result<ReprGrid> {
    let mut magic = [0u8; 4];
    reader
        .read_exact(&mut magic)
        .map_err(|_| Error::Truncated { offset: 0, what: "magic" })?;
    if &magic != RGR1_MAGIC {
        return Err(Error::format(format!("bad magic {magic:02x?}, expected \"RGR1\"")));
    }
    let kind_id = reader
        .read_u16::<LittleEndian>()
        .map_err(|_| Error::Truncated { offset: 4, what: "kind" })?;
    let kind = ReprKind::from_id(kind_id)
        .ok_or_else(|| Error::format(format!("unknown representation id {kind_id}")))?;
    let height = reader
        .read_u16::<LittleEndian>()
        .map_err(|_| Error::Truncated { offset: 6, what: "height" })?;
    let width = reader
        .read_u16::<LittleEndian>()
        .map_err(|_| Error::Truncated { offset: 8, what: "width" })?;
    let channels = reader
        .read_u16::<LittleEndian>()
        .map_err(|_| Error::Truncated { offset: 10, what: "channels" })?;
    if channels as usize != kind.channels() {
        return Err(Error::format(format!(
            "kind {} expects {} channels, file says {channels}",
            kind.name(),
            kind.channels()
        )));
    }
    let block_len = reader
        .read_u16::<LittleEndian>()
        .map_err(|_| Error::Truncated { offset: 12, what: "param block length" })?;
    let mut block = vec![0u8; block_len as usize];
    reader
        .read_exact(&mut block)
        .map_err(|_| Error::Truncated { offset: 14, what: "param block" })?;
    let block = String::from_utf8(block).map_err(|_| Error::format("param block is not UTF-8".to_string()))?;
    let (params, window) = parse_params_block(&block)?;

    let cells = channels as usize * height as usize * width as usize;
    let mut data = vec![0.0f64; cells];
    for (i, v) in data.iter_mut().enumerate() {
        *v = reader.read_f64::<LittleEndian>().map_err(|_| Error::Truncated {
            offset: 14 + block_len as u64 + i as u64 * 8,
            what: "grid data",
        })?;
    }
    let mut trailing = [0u8; 1];
    if reader.read(&mut trailing)? != 0 {
        return Err(Error::format("trailing bytes after grid data".to_string()));
    }
    Ok(ReprGrid {
        kind,
        geometry: Geometry::new(height, width),
        channels: channels as usize,
        data,
        params,
        window,
    })
}

pub fn read_rgr1_path(path: &Path) -> Result<ReprGrid> {
    let file = std::fs::File::open(path)?;
    read_rgr1(std::io::BufReader::new(file))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::events::{Event, EventStream, Polarity};
    use approx::assert_relative_eq;

    fn ev(x: u16, y: u16, t: i64, sign: i8) -> Event {
        Event { x, y, t, p: Polarity::from_sign(sign).unwrap() }
    }

    fn stream(h: u16, w: u16, events: Vec<Event>, t_start: i64, t_end: i64) -> EventStream {
        EventStream::new(Geometry::new(h, w), events, t_start, t_end).unwrap()
    }

    fn empty_stream() -> EventStream {
        stream(4, 4, vec![], 0, 100)
    }

    #[test]
    fn all_representations_zero_on_empty_stream() {
        let s = empty_stream();
        let grids = vec![
            binary_event_image(&s),
            event_histogram(&s),
            timestamp_image(&s),
            event_image(&s),
            time_surface(&s, 100.0).unwrap(),
            hats_surface(&s, 2, 100.0).unwrap(),
            discount_grid(&s, 2).unwrap(),
            dit(&s, 1.0, 2).unwrap(),
            dist(&s, 1.0, 2).unwrap(),
            sorted_time_surface(&s),
            sorted_time_surface_patchwise(&s, 2).unwrap(),
        ];
        for grid in grids {
            assert!(grid.data().iter().all(|&v| v == 0.0), "{} not zero", grid.kind());
        }
    }

    #[test]
    fn binary_single_event() {
        let s = stream(4, 4, vec![ev(1, 1, 50, 1)], 0, 100);
        let grid = binary_event_image(&s);
        assert_eq!(grid.get(1, 1, 1), 1.0);
        assert_eq!(grid.channel(1).iter().sum::<f64>(), 1.0);
        assert!(grid.channel(0).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn histogram_counts_repeats() {
        let events = vec![ev(2, 1, 10, 1), ev(2, 1, 20, 1), ev(2, 1, 30, 1)];
        let s = stream(4, 4, events, 0, 100);
        let grid = event_histogram(&s);
        assert_eq!(grid.get(1, 1, 2), 3.0);
        assert_eq!(grid.channel(1).iter().sum::<f64>(), 3.0);
    }

    #[test]
    fn timestamp_normalization_endpoints() {
        let s = stream(4, 4, vec![ev(0, 0, 0, 1), ev(1, 1, 100, 1)], 0, 100);
        let grid = timestamp_image(&s);
        assert_eq!(grid.get(1, 0, 0), 0.0); // t = t_start, same as empty by design
        assert_eq!(grid.get(1, 1, 1), 1.0); // t = t_end
    }

    #[test]
    fn timestamp_degenerate_window_marks_occupied() {
        let s = stream(4, 4, vec![ev(1, 1, 50, 1)], 50, 50);
        let grid = timestamp_image(&s);
        assert_eq!(grid.get(1, 1, 1), 1.0);
        assert_eq!(grid.get(1, 0, 0), 0.0);
    }

    #[test]
    fn event_image_concatenates_constituents() {
        let events = vec![ev(1, 2, 25, -1), ev(3, 0, 75, 1)];
        let s = stream(4, 4, events, 0, 100);
        let grid = event_image(&s);
        let hist = event_histogram(&s);
        let ts = timestamp_image(&s);
        let pixels = 16;
        assert_eq!(&grid.data()[..2 * pixels], hist.data());
        assert_eq!(&grid.data()[2 * pixels..], ts.data());
    }

    #[test]
    fn time_surface_decay_values() {
        let s = stream(4, 4, vec![ev(0, 0, 60, 1), ev(1, 1, 100, 1)], 0, 100);
        let grid = time_surface(&s, 40.0).unwrap();
        assert_eq!(grid.get(1, 1, 1), 1.0);
        assert_relative_eq!(grid.get(1, 0, 0), (-1.0f64).exp(), max_relative = 1e-12);
        assert!(matches!(time_surface(&s, 0.0), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn hats_tile_of_one_event_broadcasts_its_value() {
        let s = stream(4, 4, vec![ev(1, 1, 80, 1)], 0, 100);
        let grid = hats_surface(&s, 2, 50.0).unwrap();
        let expected = (-(20.0 / 50.0f64)).exp();
        for y in 0..2 {
            for x in 0..2 {
                assert_relative_eq!(grid.get(1, y, x), expected, max_relative = 1e-12);
            }
        }
        // Empty tile stays zero.
        assert_eq!(grid.get(1, 3, 3), 0.0);
    }

    #[test]
    fn discount_single_event_is_zero() {
        let s = stream(8, 8, vec![ev(4, 4, 10, 1)], 0, 100);
        let grid = discount_grid(&s, 2).unwrap();
        assert_eq!(grid.get(1, 4, 4), 0.0);
    }

    #[test]
    fn discount_two_events_same_pixel() {
        let s = stream(8, 8, vec![ev(4, 4, 0, 1), ev(4, 4, 100, 1)], 0, 100);
        let grid = discount_grid(&s, 2).unwrap();
        assert_eq!(grid.get(1, 4, 4), 50.0);
    }

    #[test]
    fn discount_rejects_small_rho() {
        let s = empty_stream();
        assert!(matches!(discount_grid(&s, 1), Err(Error::InvalidArgument(_))));
        assert!(matches!(dit(&s, 1.0, 0), Err(Error::InvalidArgument(_))));
        assert!(matches!(dist(&s, 1.0, 1), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn dist_single_pixel_is_one() {
        let s = stream(8, 8, vec![ev(3, 2, 40, 1)], 0, 100);
        let grid = dist(&s, 5.0, 2).unwrap();
        assert_eq!(grid.get(1, 2, 3), 1.0);
        let nonzero = grid.data().iter().filter(|&&v| v != 0.0).count();
        assert_eq!(nonzero, 1);
    }

    #[test]
    fn dist_ranks_follow_discounted_order() {
        // Pixel (1,1) newest 100 but heavily discounted; pixel (5,5) newest 60,
        // isolated single event so undiscounted.
        let events = vec![ev(1, 1, 0, 1), ev(5, 5, 60, 1), ev(1, 1, 100, 1)];
        let s = stream(8, 8, events, 0, 100);
        // D(1,1) = (100-0)/2 = 50, D(5,5) = 0. With alpha = 2: S_D(1,1) = 0, S_D(5,5) = 60.
        let grid = dist(&s, 2.0, 2).unwrap();
        assert_eq!(grid.get(1, 1, 1), 0.5);
        assert_eq!(grid.get(1, 5, 5), 1.0);
    }

    #[test]
    fn dit_alpha_zero_matches_timestamp_order() {
        let events = vec![ev(0, 0, 10, 1), ev(2, 2, 40, -1), ev(3, 1, 90, 1)];
        let s = stream(4, 4, events, 0, 100);
        let d = dit(&s, 0.0, 2).unwrap();
        let ts = timestamp_image(&s);
        // Both are affine images of t_new; re-normalizing the timestamp image
        // over its occupied range must reproduce DiT exactly.
        let occupied: Vec<(usize, usize, usize)> = vec![(0, 0, 0), (0, 2, 2), (1, 1, 3)];
        let values: Vec<f64> = occupied.iter().map(|&(c, y, x)| ts.get(c, y, x)).collect();
        let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        for (&(c, y, x), &v) in occupied.iter().zip(&values) {
            assert_relative_eq!(d.get(c, y, x), (v - lo) / (hi - lo), max_relative = 1e-12);
        }
    }

    #[test]
    fn sorted_time_surface_is_dist_alpha_zero() {
        let events = vec![ev(0, 0, 10, 1), ev(2, 2, 40, -1), ev(3, 1, 90, 1), ev(2, 3, 90, -1)];
        let s = stream(4, 4, events, 0, 100);
        let sorted = sorted_time_surface(&s);
        let via_dist = dist(&s, 0.0, 2).unwrap();
        assert_eq!(sorted.data(), via_dist.data());
    }

    #[test]
    fn rank_ties_break_by_channel_then_position() {
        let events = vec![ev(3, 1, 50, 1), ev(1, 1, 50, -1), ev(2, 1, 50, 1)];
        let s = stream(4, 4, events, 0, 100);
        let grid = sorted_time_surface(&s);
        // All timestamps equal: negative channel first, then (y, x).
        assert_relative_eq!(grid.get(0, 1, 1), 1.0 / 3.0, max_relative = 1e-15);
        assert_relative_eq!(grid.get(1, 1, 2), 2.0 / 3.0, max_relative = 1e-15);
        assert_eq!(grid.get(1, 1, 3), 1.0);
    }

    #[test]
    fn patchwise_ranks_stay_inside_tiles() {
        let events = vec![ev(0, 0, 10, 1), ev(3, 3, 90, 1)];
        let s = stream(4, 4, events, 0, 100);
        let grid = sorted_time_surface_patchwise(&s, 2).unwrap();
        // Each tile holds a single occupied pixel, so both normalize to 1.
        assert_eq!(grid.get(1, 0, 0), 1.0);
        assert_eq!(grid.get(1, 3, 3), 1.0);
    }

    #[test]
    fn rgr1_round_trip() {
        let events = vec![ev(1, 2, 25, -1), ev(3, 0, 75, 1)];
        let s = stream(4, 4, events, 0, 100);
        for kind in ReprKind::CATALOG {
            let grid = compute(&s, kind, &defaults()).unwrap();
            let mut buf = Vec::new();
            let n = write_rgr1(&grid, &mut buf).unwrap();
            assert_eq!(n as usize, buf.len());
            let back = read_rgr1(buf.as_slice()).unwrap();
            assert_eq!(back, grid, "round trip for {kind}");
        }
    }

    #[test]
    fn rgr1_rejects_bad_magic_and_trailing() {
        let grid = binary_event_image(&empty_stream());
        let mut buf = Vec::new();
        write_rgr1(&grid, &mut buf).unwrap();
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(read_rgr1(bad.as_slice()), Err(Error::Format(_))));
        buf.push(7);
        assert!(matches!(read_rgr1(buf.as_slice()), Err(Error::Format(_))));
    }

    #[test]
    fn kind_parsing_matches_cli_names() {
        for kind in ReprKind::CATALOG {
            assert_eq!(kind.name().parse::<ReprKind>().unwrap(), kind);
        }
        assert!("voxel".parse::<ReprKind>().is_err());
    }
}
