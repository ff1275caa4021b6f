//! Event-stream domain types and utilities: validation, time slicing, and
//! voxelization into a signed histogram tensor.
//!
//! Timestamps are seconds relative to the centre of the exposure window, so
//! a window of length `T` spans `[-T/2, T/2]`.

use crate::error::{Error, Result};

/// A single camera event: pixel coordinates, timestamp, and polarity.
///
/// Polarity is `+1` for a log-intensity increment and `-1` for a decrement;
/// no other value is valid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Event {
    pub x: u16,
    pub y: u16,
    pub t: f64,
    pub p: i8,
}

impl Event {
    pub fn new(x: u16, y: u16, t: f64, p: i8) -> Self {
        Event { x, y, t, p }
    }

    /// Canonical total order: by time, ties broken by (y, x, p).
    pub fn canonical_cmp(&self, other: &Event) -> std::cmp::Ordering {
        self.t
            .total_cmp(&other.t)
            .then(self.y.cmp(&other.y))
            .then(self.x.cmp(&other.x))
            .then(self.p.cmp(&other.p))
    }
}

/// The exposure interval `[-T/2, T/2]` of length `T > 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExposureWindow {
    length: f64,
}

impl ExposureWindow {
    pub fn new(length: f64) -> Result<Self> {
        if !(length.is_finite() && length > 0.0) {
            return Err(Error::InvalidExposure(length));
        }
        Ok(ExposureWindow { length })
    }

    pub fn length(&self) -> f64 {
        self.length
    }

    pub fn start(&self) -> f64 {
        -0.5 * self.length
    }

    pub fn end(&self) -> f64 {
        0.5 * self.length
    }

    pub fn contains(&self, t: f64) -> bool {
        t >= self.start() && t <= self.end()
    }

    pub fn check_contains(&self, t: f64) -> Result<()> {
        if self.contains(t) {
            Ok(())
        } else {
            Err(Error::TimeOutOfWindow {
                t,
                lo: self.start(),
                hi: self.end(),
            })
        }
    }

    /// `n` uniform timestamps `t_i = -T/2 + i T / n`.
    ///
    /// The left-edge convention makes coarser grids exact subsets of finer
    /// ones (every 30-fps timestamp is bitwise a 60-fps timestamp).
    pub fn uniform_timestamps(&self, n: usize) -> Vec<f64> {
        let step = self.length / n as f64;
        (0..n).map(|i| self.start() + i as f64 * step).collect()
    }
}

/// An ordered event stream over one exposure window on an `h x w` grid.
///
/// Fields are public plain data; invariants (canonical order, in-bounds
/// coordinates and timestamps, valid polarities) are checked by
/// [`validate_stream`], not enforced by construction, so that externally
/// sourced data can be inspected before use.
#[derive(Debug, Clone, PartialEq)]
pub struct EventStream {
    pub height: usize,
    pub width: usize,
    pub window: ExposureWindow,
    pub events: Vec<Event>,
}

impl EventStream {
    pub fn empty(height: usize, width: usize, window: ExposureWindow) -> Self {
        EventStream {
            height,
            width,
            window,
            events: Vec::new(),
        }
    }

    /// Builds a stream by sorting `events` into canonical order.
    pub fn from_unsorted(
        height: usize,
        width: usize,
        window: ExposureWindow,
        mut events: Vec<Event>,
    ) -> Self {
        events.sort_by(Event::canonical_cmp);
        EventStream {
            height,
            width,
            window,
            events,
        }
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// Per-pixel sum of polarities over the whole stream, row-major.
    pub fn polarity_sums(&self) -> Vec<i64> {
        let mut sums = vec![0i64; self.height * self.width];
        for e in &self.events {
            let idx = e.y as usize * self.width + e.x as usize;
            if idx < sums.len() {
                sums[idx] += e.p as i64;
            }
        }
        sums
    }
}

/// One invariant violation found by [`validate_stream`].
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    CoordinateOutOfRange { index: usize, x: u16, y: u16 },
    TimestampOutsideWindow { index: usize, t: f64 },
    UnsortedOrder { index: usize },
    InvalidPolarity { index: usize, p: i8 },
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Violation::CoordinateOutOfRange { index, x, y } => {
                write!(f, "event {index}: coordinate ({x}, {y}) out of range")
            }
            Violation::TimestampOutsideWindow { index, t } => {
                write!(f, "event {index}: timestamp {t} outside window")
            }
            Violation::UnsortedOrder { index } => {
                write!(f, "event {index}: out of order")
            }
            Violation::InvalidPolarity { index, p } => {
                write!(f, "event {index}: invalid polarity {p}")
            }
        }
    }
}

/// Result of checking a stream against the [`EventStream`] invariants.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Checks coordinates, timestamps, polarities, and ordering.
///
/// Violations are data, not errors: an empty report means the stream
/// satisfies every invariant.
pub fn validate_stream(stream: &EventStream) -> ValidationReport {
    let mut violations = Vec::new();
    for (index, e) in stream.events.iter().enumerate() {
        if (e.x as usize) >= stream.width || (e.y as usize) >= stream.height {
            violations.push(Violation::CoordinateOutOfRange {
                index,
                x: e.x,
                y: e.y,
            });
        }
        if !e.t.is_finite() || !stream.window.contains(e.t) {
            violations.push(Violation::TimestampOutsideWindow { index, t: e.t });
        }
        if e.p != 1 && e.p != -1 {
            violations.push(Violation::InvalidPolarity { index, p: e.p });
        }
        if index > 0 && stream.events[index - 1].t > e.t {
            violations.push(Violation::UnsortedOrder { index });
        }
    }
    ValidationReport { violations }
}

/// Returns the events with `t0 <= t < t1` (half-open), order preserved.
/// Window and resolution metadata are copied unchanged.
pub fn slice_by_time(stream: &EventStream, t0: f64, t1: f64) -> Result<EventStream> {
    let (lo, hi) = (stream.window.start(), stream.window.end());
    if !(t0 >= lo && t0 <= t1 && t1 <= hi) {
        return Err(Error::TimeOutOfWindow {
            t: if t0 < lo { t0 } else { t1 },
            lo,
            hi,
        });
    }
    let start = stream.events.partition_point(|e| e.t < t0);
    let end = stream.events.partition_point(|e| e.t < t1);
    Ok(EventStream {
        height: stream.height,
        width: stream.width,
        window: stream.window,
        events: stream.events[start..end].to_vec(),
    })
}

/// An `m x h x w` tensor of signed per-bin event counts.
#[derive(Debug, Clone, PartialEq)]
pub struct EventHistogram {
    pub bins: usize,
    pub height: usize,
    pub width: usize,
    /// Bin-major, then row-major: index = (bin * h + y) * w + x.
    pub data: Vec<i32>,
}

impl EventHistogram {
    pub fn get(&self, bin: usize, y: usize, x: usize) -> i32 {
        self.data[(bin * self.height + y) * self.width + x]
    }

    /// Per-pixel signed sum over all bins, row-major.
    pub fn bin_sums(&self) -> Vec<i64> {
        let mut sums = vec![0i64; self.height * self.width];
        for bin in 0..self.bins {
            let base = bin * self.height * self.width;
            for (i, s) in sums.iter_mut().enumerate() {
                *s += self.data[base + i] as i64;
            }
        }
        sums
    }
}

/// Bins the stream into `bins` uniform temporal slots; each cell accumulates
/// the signed polarity sum. Bin index is `floor((t + T/2) / T * bins)`,
/// clamped so events at exactly `t = T/2` land in the last bin.
pub fn voxelize(stream: &EventStream, bins: usize) -> Result<EventHistogram> {
    if bins == 0 {
        return Err(Error::InvalidInput("histogram needs at least one bin".into()));
    }
    let mut data = vec![0i32; bins * stream.height * stream.width];
    let t_len = stream.window.length();
    let t_lo = stream.window.start();
    for e in &stream.events {
        let raw = ((e.t - t_lo) / t_len * bins as f64).floor();
        let bin = (raw.max(0.0) as usize).min(bins - 1);
        let idx = (bin * stream.height + e.y as usize) * stream.width + e.x as usize;
        data[idx] += e.p as i32;
    }
    Ok(EventHistogram {
        bins,
        height: stream.height,
        width: stream.width,
        data,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn window(t: f64) -> ExposureWindow {
        ExposureWindow::new(t).unwrap()
    }

    #[test]
    fn window_rejects_nonpositive_lengths() {
        assert!(ExposureWindow::new(0.0).is_err());
        assert!(ExposureWindow::new(-1.0).is_err());
        assert!(ExposureWindow::new(f64::NAN).is_err());
        assert!(ExposureWindow::new(f64::INFINITY).is_err());
    }

    #[test]
    fn validate_empty_stream_is_clean() {
        let s = EventStream::empty(1, 1, window(1.0));
        assert!(validate_stream(&s).is_clean());
    }

    #[test]
    fn validate_accepts_single_in_bounds_event() {
        let s = EventStream {
            height: 1,
            width: 1,
            window: window(1.0),
            events: vec![Event::new(0, 0, 0.0, 1)],
        };
        assert!(validate_stream(&s).is_clean());
    }

    #[test]
    fn validate_flags_out_of_window_timestamp() {
        let s = EventStream {
            height: 1,
            width: 1,
            window: window(1.0),
            events: vec![Event::new(0, 0, 0.6, 1)],
        };
        let report = validate_stream(&s);
        assert_eq!(report.violations.len(), 1);
        assert!(matches!(
            report.violations[0],
            Violation::TimestampOutsideWindow { index: 0, .. }
        ));
    }

    #[test]
    fn validate_flags_each_kind() {
        let s = EventStream {
            height: 2,
            width: 2,
            window: window(1.0),
            events: vec![
                Event::new(0, 0, 0.4, 1),
                Event::new(5, 0, 0.0, 1),  // out of range and out of order
                Event::new(0, 0, 0.1, 0),  // zero polarity
            ],
        };
        let report = validate_stream(&s);
        assert!(report
            .violations
            .iter()
            .any(|v| matches!(v, Violation::CoordinateOutOfRange { index: 1, .. })));
        assert!(report
            .violations
            .iter()
            .any(|v| matches!(v, Violation::UnsortedOrder { index: 1 })));
        assert!(report
            .violations
            .iter()
            .any(|v| matches!(v, Violation::InvalidPolarity { index: 2, p: 0 })));
    }

    #[test]
    fn slice_full_window_is_identity_up_to_right_endpoint() {
        let w = window(1.0);
        let events = vec![
            Event::new(0, 0, -0.4, 1),
            Event::new(0, 0, 0.0, -1),
            Event::new(0, 0, 0.5, 1),
        ];
        let s = EventStream {
            height: 1,
            width: 1,
            window: w,
            events: events.clone(),
        };
        let sliced = slice_by_time(&s, -0.5, 0.5).unwrap();
        assert_eq!(sliced.events, &events[..2]);

        // Appending the events at exactly t = T/2 reconstructs the stream.
        let mut rebuilt = sliced.events.clone();
        rebuilt.extend(events.iter().filter(|e| e.t == 0.5).cloned());
        assert_eq!(rebuilt, events);
    }

    #[test]
    fn slice_empty_interval_is_empty() {
        let s = EventStream {
            height: 1,
            width: 1,
            window: window(1.0),
            events: vec![Event::new(0, 0, 0.1, 1)],
        };
        assert!(slice_by_time(&s, 0.1, 0.1).unwrap().is_empty());
    }

    #[test]
    fn slice_selects_half_open_membership() {
        let s = EventStream {
            height: 1,
            width: 1,
            window: window(1.0),
            events: vec![
                Event::new(0, 0, -0.4, 1),
                Event::new(0, 0, 0.0, 1),
                Event::new(0, 0, 0.4, 1),
            ],
        };
        let sliced = slice_by_time(&s, -0.1, 0.1).unwrap();
        assert_eq!(sliced.events, vec![Event::new(0, 0, 0.0, 1)]);
    }

    #[test]
    fn slice_outside_window_is_range_error() {
        let s = EventStream::empty(1, 1, window(1.0));
        assert!(slice_by_time(&s, -0.6, 0.0).is_err());
        assert!(slice_by_time(&s, 0.0, 0.6).is_err());
        assert!(slice_by_time(&s, 0.2, 0.1).is_err());
    }

    #[test]
    fn voxelize_single_event_single_bin() {
        let s = EventStream {
            height: 1,
            width: 1,
            window: window(1.0),
            events: vec![Event::new(0, 0, 0.0, 1)],
        };
        let h = voxelize(&s, 1).unwrap();
        assert_eq!(h.get(0, 0, 0), 1);
    }

    #[test]
    fn voxelize_cancels_opposite_polarities_in_one_bin() {
        let s = EventStream {
            height: 1,
            width: 1,
            window: window(1.0),
            events: vec![Event::new(0, 0, 0.01, 1), Event::new(0, 0, 0.02, -1)],
        };
        let h = voxelize(&s, 4).unwrap();
        assert_eq!(h.get(2, 0, 0), 0);
        assert!(h.data.iter().all(|&v| v == 0));
    }

    #[test]
    fn voxelize_clamps_right_endpoint_into_last_bin() {
        let s = EventStream {
            height: 1,
            width: 1,
            window: window(1.0),
            events: vec![Event::new(0, 0, 0.5, 1)],
        };
        let h = voxelize(&s, 4).unwrap();
        assert_eq!(h.get(3, 0, 0), 1);
    }

    proptest! {
        // Summing the histogram over bins must reproduce the raw per-pixel
        // polarity sums, for any stream and bin count.
        #[test]
        fn voxelize_preserves_per_pixel_polarity_sums(
            events in proptest::collection::vec(
                (0u16..8, 0u16..8, -0.5f64..=0.5, prop_oneof![Just(1i8), Just(-1i8)]),
                0..1000,
            ),
            bins in 1usize..32,
        ) {
            let events: Vec<Event> = events
                .into_iter()
                .map(|(x, y, t, p)| Event::new(x, y, t, p))
                .collect();
            let s = EventStream::from_unsorted(8, 8, window(1.0), events);
            let h = voxelize(&s, bins).unwrap();
            prop_assert_eq!(h.bin_sums(), s.polarity_sums());
        }

        #[test]
        fn validate_is_pure_and_idempotent(
            events in proptest::collection::vec(
                (0u16..4, 0u16..4, -0.6f64..=0.6, -1i8..=1),
                0..50,
            ),
        ) {
            let events: Vec<Event> = events
                .into_iter()
                .map(|(x, y, t, p)| Event::new(x, y, t, p))
                .collect();
            let s = EventStream {
                height: 4,
                width: 4,
                window: window(1.0),
                events,
            };
            let before = s.clone();
            let first = validate_stream(&s);
            let second = validate_stream(&s);
            prop_assert_eq!(first, second);
            prop_assert_eq!(s, before);
        }
    }
}
