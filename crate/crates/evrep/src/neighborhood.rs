//! Per-(pixel, polarity) spatio-temporal neighborhood statistics.
//!
//! For every pixel and polarity, [`compute_stats`] aggregates the events whose
//! pixel lies within Chebyshev distance `rho` (a `(2*rho+1) x (2*rho+1)`
//! square clipped at the sensor borders): the newest timestamp, the oldest
//! timestamp, and the event count. These three grids feed the timestamp image
//! and the neighborhood discount.
//!
//! The implementation aggregates per pixel in one pass over the events and
//! then runs separable sliding max/min/sum passes over rows and columns, so
//! the cost is `O(n + H*W)` independent of `rho`.

use rayon::prelude::*;

use crate::events::EventStream;

const NEWEST_SENTINEL: i64 = i64::MIN;
const OLDEST_SENTINEL: i64 = i64::MAX;

/// Newest/oldest timestamp and event count per (pixel, polarity) over a
/// square neighborhood. Emptiness is tracked by `count == 0`; the timestamp
/// accessors return `None` there, so a legal `t = 0` is never conflated with
/// "no events".
#[derive(Clone, Debug)]
pub struct NeighborhoodStats {
    rho: u32,
    height: usize,
    width: usize,
    newest: Vec<i64>,
    oldest: Vec<i64>,
    count: Vec<u32>,
}

impl NeighborhoodStats {
    pub fn rho(&self) -> u32 {
        self.rho
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    fn index(&self, x: usize, y: usize, channel: usize) -> usize {
        debug_assert!(x < self.width && y < self.height && channel < 2);
        (channel * self.height + y) * self.width + x
    }

    pub fn count(&self, x: usize, y: usize, channel: usize) -> u32 {
        self.count[self.index(x, y, channel)]
    }

    pub fn t_new(&self, x: usize, y: usize, channel: usize) -> Option<i64> {
        let i = self.index(x, y, channel);
        (self.count[i] > 0).then(|| self.newest[i])
    }

    pub fn t_old(&self, x: usize, y: usize, channel: usize) -> Option<i64> {
        let i = self.index(x, y, channel);
        (self.count[i] > 0).then(|| self.oldest[i])
    }
}

/// Per-pixel (radius 0) statistics in a single pass over the events.
pub fn pixel_stats(stream: &EventStream) -> NeighborhoodStats {
    let g = stream.geometry();
    let (height, width) = (g.height as usize, g.width as usize);
    let cells = height * width * 2;
    let mut stats = NeighborhoodStats {
        rho: 0,
        height,
        width,
        newest: vec![NEWEST_SENTINEL; cells],
        oldest: vec![OLDEST_SENTINEL; cells],
        count: vec![0; cells],
    };
    for e in stream.events() {
        let i = (e.p.channel() * height + e.y as usize) * width + e.x as usize;
        stats.newest[i] = stats.newest[i].max(e.t);
        stats.oldest[i] = stats.oldest[i].min(e.t);
        stats.count[i] += 1;
    }
    stats
}

/// Neighborhood statistics at Chebyshev radius `rho`, clipped at the sensor
/// borders (no wraparound, no padding). Neighborhoods span the full stream
/// window in time.
pub fn compute_stats(stream: &EventStream, rho: u32) -> NeighborhoodStats {
    assert!(
        stream.len() <= u32::MAX as usize,
        "per-cell counts are u32; {} events exceed that",
        stream.len()
    );
    let mut stats = pixel_stats(stream);
    stats.rho = rho;
    if rho == 0 {
        return stats;
    }
    let (h, w) = (stats.height, stats.width);
    let radius = rho as usize;
    for channel in 0..2 {
        let lo = channel * h * w;
        let hi = lo + h * w;
        slide_2d(&mut stats.newest[lo..hi], h, w, radius, WindowOp::Max);
        slide_2d(&mut stats.oldest[lo..hi], h, w, radius, WindowOp::Min);
        slide_counts_2d(&mut stats.count[lo..hi], h, w, radius);
    }
    stats
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum WindowOp {
    Max,
    Min,
}

/// Replaces each cell with the max/min over the clipped 1D window of
/// half-width `radius`, applied along rows and then columns.
fn slide_2d(plane: &mut [i64], h: usize, w: usize, radius: usize, op: WindowOp) {
    plane
        .par_chunks_mut(w)
        .for_each(|row| slide_1d(row, radius, op));
    // Column pass over the row results. Work on transposed copies so the row
    // kernel is reused; the transpose cost is dwarfed by the event pass.
    let mut transposed = vec![0i64; h * w];
    transpose(plane, &mut transposed, h, w);
    transposed
        .par_chunks_mut(h)
        .for_each(|col| slide_1d(col, radius, op));
    transpose(&transposed, plane, w, h);
}

fn transpose(src: &[i64], dst: &mut [i64], rows: usize, cols: usize) {
    for r in 0..rows {
        for c in 0..cols {
            dst[c * rows + r] = src[r * cols + c];
        }
    }
}

/// Monotonic-deque sliding extremum over the clipped window `[i-radius, i+radius]`.
fn slide_1d(line: &mut [i64], radius: usize, op: WindowOp) {
    let n = line.len();
    if n == 0 {
        return;
    }
    let keep = |cand: i64, back: i64| match op {
        WindowOp::Max => cand <= back,
        WindowOp::Min => cand >= back,
    };
    let mut deque: std::collections::VecDeque<usize> = std::collections::VecDeque::new();
    let mut out = vec![0i64; n];
    let mut next = 0usize;
    for i in 0..n {
        let right = (i + radius).min(n - 1);
        while next <= right {
            while let Some(&b) = deque.back() {
                if keep(line[b], line[next]) {
                    deque.pop_back();
                } else {
                    break;
                }
            }
            deque.push_back(next);
            next += 1;
        }
        while let Some(&f) = deque.front() {
            if f + radius < i {
                deque.pop_front();
            } else {
                break;
            }
        }
        out[i] = line[*deque.front().expect("window never empty")];
    }
    line.copy_from_slice(&out);
}

/// Windowed sum of counts via running sums along rows then columns.
fn slide_counts_2d(plane: &mut [u32], h: usize, w: usize, radius: usize) {
    plane
        .par_chunks_mut(w)
        .for_each(|row| slide_sum_1d(row, radius));
    let mut transposed = vec![0u32; h * w];
    for r in 0..h {
        for c in 0..w {
            transposed[c * h + r] = plane[r * w + c];
        }
    }
    transposed
        .par_chunks_mut(h)
        .for_each(|col| slide_sum_1d(col, radius));
    for c in 0..w {
        for r in 0..h {
            plane[r * w + c] = transposed[c * h + r];
        }
    }
}

fn slide_sum_1d(line: &mut [u32], radius: usize) {
    let n = line.len();
    if n == 0 {
        return;
    }
    let mut out = vec![0u32; n];
    let mut sum: u64 = 0;
    for j in 0..=radius.min(n - 1) {
        sum += line[j] as u64;
    }
    for i in 0..n {
        out[i] = u32::try_from(sum).expect("window count exceeds u32");
        if i >= radius {
            sum -= line[i - radius] as u64;
        }
        if i + radius + 1 < n {
            sum += line[i + radius + 1] as u64;
        }
    }
    line.copy_from_slice(&out);
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::events::{Event, EventStream, Geometry, Polarity};

    fn ev(x: u16, y: u16, t: i64, sign: i8) -> Event {
        Event { x, y, t, p: Polarity::from_sign(sign).unwrap() }
    }

    fn stream(h: u16, w: u16, events: Vec<Event>, t_end: i64) -> EventStream {
        EventStream::new(Geometry::new(h, w), events, 0, t_end).unwrap()
    }

    #[test]
    fn single_event_radius_zero() {
        let s = stream(5, 5, vec![ev(2, 2, 10, 1)], 20);
        let st = compute_stats(&s, 0);
        assert_eq!(st.count(2, 2, 1), 1);
        assert_eq!(st.t_new(2, 2, 1), Some(10));
        assert_eq!(st.t_old(2, 2, 1), Some(10));
        assert_eq!(st.count(2, 2, 0), 0);
        assert_eq!(st.t_new(2, 2, 0), None);
        assert_eq!(st.count(1, 2, 1), 0);
    }

    #[test]
    fn single_event_radius_one_covers_3x3_block() {
        let s = stream(5, 5, vec![ev(2, 2, 10, 1)], 20);
        let st = compute_stats(&s, 1);
        for y in 0..5usize {
            for x in 0..5usize {
                let inside = (1..=3).contains(&x) && (1..=3).contains(&y);
                assert_eq!(st.count(x, y, 1), u32::from(inside), "at ({x},{y})");
                assert_eq!(st.t_new(x, y, 1), inside.then_some(10));
                assert_eq!(st.count(x, y, 0), 0);
            }
        }
    }

    #[test]
    fn corner_pixel_clips_to_in_bounds_neighbors() {
        // Four events in the 2x2 block at the origin; the corner's radius-1
        // window sees exactly those four.
        let events = vec![ev(0, 0, 1, 1), ev(1, 0, 2, 1), ev(0, 1, 3, 1), ev(1, 1, 4, 1)];
        let s = stream(4, 4, events, 10);
        let st = compute_stats(&s, 1);
        assert_eq!(st.count(0, 0, 1), 4);
        assert_eq!(st.t_old(0, 0, 1), Some(1));
        assert_eq!(st.t_new(0, 0, 1), Some(4));
    }

    #[test]
    fn two_events_same_pixel() {
        let s = stream(4, 4, vec![ev(1, 1, 5, 1), ev(1, 1, 9, 1)], 10);
        let st = pixel_stats(&s);
        assert_eq!(st.count(1, 1, 1), 2);
        assert_eq!(st.t_old(1, 1, 1), Some(5));
        assert_eq!(st.t_new(1, 1, 1), Some(9));
    }

    #[test]
    fn empty_stream_all_empty() {
        let s = stream(3, 3, vec![], 0);
        let st = pixel_stats(&s);
        for y in 0..3 {
            for x in 0..3 {
                for c in 0..2 {
                    assert_eq!(st.count(x, y, c), 0);
                    assert_eq!(st.t_new(x, y, c), None);
                    assert_eq!(st.t_old(x, y, c), None);
                }
            }
        }
    }

    #[test]
    fn radius_larger_than_sensor_aggregates_everything() {
        let events = vec![ev(0, 0, 1, 1), ev(3, 3, 9, 1)];
        let s = stream(4, 4, events, 10);
        let st = compute_stats(&s, 10);
        for y in 0..4 {
            for x in 0..4 {
                assert_eq!(st.count(x, y, 1), 2);
                assert_eq!(st.t_old(x, y, 1), Some(1));
                assert_eq!(st.t_new(x, y, 1), Some(9));
            }
        }
    }
}
