//! Event stream primitives and count-based temporal windowing.

use alloc::vec::Vec;

use thiserror::Error;

/// A single sensor event.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Event {
    pub t_us: i64,
    pub x: u16,
    pub y: u16,
    /// Polarity, `+1` or `-1`.
    pub polarity: i8,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum EventError {
    #[error("event {index}: timestamp {t_us} decreases below predecessor")]
    NotSorted { index: usize, t_us: i64 },
    #[error("event {index}: pixel ({x}, {y}) outside {width}x{height} sensor")]
    OutOfBounds { index: usize, x: u16, y: u16, width: u16, height: u16 },
    #[error("event {index}: polarity {polarity} not in {{-1, +1}}")]
    BadPolarity { index: usize, polarity: i8 },
    #[error("event stream is empty")]
    Empty,
}

/// A time-ordered event stream tied to a sensor geometry.
///
/// Construction validates ordering (non-decreasing timestamps), pixel
/// bounds, and polarity values, so downstream code can rely on them.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EventStream {
    width: u16,
    height: u16,
    events: Vec<Event>,
}

/// Which side of the reference time a window is drawn from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WindowDirection {
    /// The `n` latest events with `t <= t_ref`.
    Before,
    /// The `n` events nearest `t_ref` by `|t - t_ref|` (ties prefer earlier).
    Centered,
}

/// A count-based window: a contiguous index range into the stream.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WindowSlice {
    pub range: core::ops::Range<usize>,
    /// Set when the stream held fewer events than requested.
    pub truncated: bool,
}

impl EventStream {
    pub fn new(width: u16, height: u16, events: Vec<Event>) -> Result<Self, EventError> {
        for (index, e) in events.iter().enumerate() {
            if index > 0 && e.t_us < events[index - 1].t_us {
                return Err(EventError::NotSorted { index, t_us: e.t_us });
            }
            if e.x >= width || e.y >= height {
                return Err(EventError::OutOfBounds { index, x: e.x, y: e.y, width, height });
            }
            if e.polarity != 1 && e.polarity != -1 {
                return Err(EventError::BadPolarity { index, polarity: e.polarity });
            }
        }
        Ok(Self { width, height, events })
    }

    pub fn width(&self) -> u16 {
        self.width
    }

    pub fn height(&self) -> u16 {
        self.height
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

    pub fn t_first(&self) -> Option<i64> {
        self.events.first().map(|e| e.t_us)
    }

    pub fn t_last(&self) -> Option<i64> {
        self.events.last().map(|e| e.t_us)
    }

    /// Select the `n_events` events nearest `t_ref_us` in the given
    /// direction. The result is a contiguous, time-ordered range; when the
    /// stream holds fewer than `n_events` candidates the whole candidate set
    /// is returned with `truncated` set.
    pub fn slice_window(
        &self,
        t_ref_us: i64,
        n_events: usize,
        direction: WindowDirection,
    ) -> WindowSlice {
        // First index with t > t_ref.
        let upper = self.events.partition_point(|e| e.t_us <= t_ref_us);
        match direction {
            WindowDirection::Before => {
                let start = upper.saturating_sub(n_events);
                WindowSlice { range: start..upper, truncated: upper < n_events }
            }
            WindowDirection::Centered => {
                let (mut lo, mut hi) = (upper, upper); // grow [lo, hi)
                while hi - lo < n_events {
                    let take_left = match (lo > 0, hi < self.events.len()) {
                        (true, true) => {
                            // Tie on |dt| prefers the earlier event.
                            t_ref_us - self.events[lo - 1].t_us
                                <= self.events[hi].t_us - t_ref_us
                        }
                        (true, false) => true,
                        (false, true) => false,
                        (false, false) => break,
                    };
                    if take_left {
                        lo -= 1;
                    } else {
                        hi += 1;
                    }
                }
                WindowSlice { range: lo..hi, truncated: hi - lo < n_events }
            }
        }
    }

    /// Events covered by a window.
    pub fn window_events(&self, w: &WindowSlice) -> &[Event] {
        &self.events[w.range.clone()]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stream(ts: &[i64]) -> EventStream {
        let events =
            ts.iter().map(|&t| Event { t_us: t, x: 1, y: 1, polarity: 1 }).collect::<Vec<_>>();
        EventStream::new(4, 4, events).unwrap()
    }

    #[test]
    fn construction_validates() {
        let bad = vec![
            Event { t_us: 5, x: 0, y: 0, polarity: 1 },
            Event { t_us: 4, x: 0, y: 0, polarity: 1 },
        ];
        assert_eq!(
            EventStream::new(4, 4, bad).unwrap_err(),
            EventError::NotSorted { index: 1, t_us: 4 }
        );
        let oob = vec![Event { t_us: 0, x: 4, y: 0, polarity: 1 }];
        assert!(matches!(
            EventStream::new(4, 4, oob).unwrap_err(),
            EventError::OutOfBounds { index: 0, x: 4, .. }
        ));
        let pol = vec![Event { t_us: 0, x: 0, y: 0, polarity: 0 }];
        assert!(matches!(
            EventStream::new(4, 4, pol).unwrap_err(),
            EventError::BadPolarity { index: 0, polarity: 0 }
        ));
    }

    #[test]
    fn before_window_takes_latest_n() {
        let s = stream(&[0, 10, 20, 30, 40, 50]);
        let w = s.slice_window(35, 3, WindowDirection::Before);
        let ts: Vec<i64> = s.window_events(&w).iter().map(|e| e.t_us).collect();
        assert_eq!(ts, vec![10, 20, 30]);
        assert!(!w.truncated);
    }

    #[test]
    fn boundary_event_belongs_to_window_ending_there() {
        let s = stream(&[0, 10, 20, 30]);
        let w = s.slice_window(20, 2, WindowDirection::Before);
        let ts: Vec<i64> = s.window_events(&w).iter().map(|e| e.t_us).collect();
        assert_eq!(ts, vec![10, 20]);
    }

    #[test]
    fn centered_window_prefers_earlier_on_tie() {
        let s = stream(&[0, 10, 20, 30, 40]);
        let w = s.slice_window(20, 3, WindowDirection::Centered);
        let ts: Vec<i64> = s.window_events(&w).iter().map(|e| e.t_us).collect();
        // 20 (dt 0), then 10 (dt 10) wins the tie against 30 (dt 10).
        assert_eq!(ts, vec![10, 20, 30]);
        let w2 = s.slice_window(20, 2, WindowDirection::Centered);
        let ts2: Vec<i64> = s.window_events(&w2).iter().map(|e| e.t_us).collect();
        assert_eq!(ts2, vec![10, 20]);
    }

    #[test]
    fn short_stream_returns_all_flagged() {
        let s = stream(&[0, 10]);
        let w = s.slice_window(10, 5, WindowDirection::Before);
        assert_eq!(w.range, 0..2);
        assert!(w.truncated);
    }

    #[test]
    fn window_is_time_ordered_subsequence() {
        let s = stream(&[0, 0, 5, 5, 5, 9, 12]);
        let w = s.slice_window(7, 4, WindowDirection::Centered);
        let evs = s.window_events(&w);
        assert!(evs.windows(2).all(|p| p[0].t_us <= p[1].t_us));
        assert_eq!(evs.len(), 4);
    }
}
