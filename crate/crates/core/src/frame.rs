//! Event frames: fixed-interval grouping plus image representations.
//!
//! At every interval tick the recent history is sliced into count-based
//! windows and each window is rendered three ways: a polarity-merged binary
//! occupancy image and one latest-timestamp image per polarity. Detection
//! then runs on every rendered image.

use alloc::vec;
use alloc::vec::Vec;

use thiserror::Error;

use crate::event::{Event, EventStream, WindowDirection, WindowSlice};

/// Dense single-channel image with `f32` pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageF32 {
    width: u16,
    height: u16,
    data: Vec<f32>,
}

impl ImageF32 {
    pub fn zeros(width: u16, height: u16) -> Self {
        Self { width, height, data: vec![0.0; width as usize * height as usize] }
    }

    pub fn width(&self) -> u16 {
        self.width
    }

    pub fn height(&self) -> u16 {
        self.height
    }

    #[inline]
    pub fn get(&self, x: u16, y: u16) -> f32 {
        self.data[y as usize * self.width as usize + x as usize]
    }

    #[inline]
    pub fn set(&mut self, x: u16, y: u16, v: f32) {
        self.data[y as usize * self.width as usize + x as usize] = v;
    }

    pub fn pixels(&self) -> &[f32] {
        &self.data
    }

    pub fn max_value(&self) -> f32 {
        self.data.iter().copied().fold(0.0, f32::max)
    }
}

/// Binary occupancy: 1.0 wherever at least one event of either polarity
/// occurred, 0.0 elsewhere.
pub fn render_binary(events: &[Event], width: u16, height: u16) -> ImageF32 {
    let mut img = ImageF32::zeros(width, height);
    for e in events {
        img.set(e.x, e.y, 1.0);
    }
    img
}

/// Latest-timestamp image for one polarity.
///
/// Pixels holding at least one matching event store the normalized timestamp
/// of the latest one; the window span `[t_min, t_max]` (over all events in
/// the window, both polarities) maps to `(0, 1]` so that an untouched pixel
/// (0.0) is always distinguishable from the oldest event.
pub fn render_timestamp(events: &[Event], width: u16, height: u16, polarity: i8) -> ImageF32 {
    let mut img = ImageF32::zeros(width, height);
    let (Some(first), Some(last)) = (events.first(), events.last()) else {
        return img;
    };
    let (t_min, t_max) = (first.t_us, last.t_us);
    let span = (t_max - t_min + 1) as f64;
    for e in events {
        if e.polarity == polarity {
            // Events are time-ordered, so a plain overwrite keeps the latest.
            img.set(e.x, e.y, ((e.t_us - t_min + 1) as f64 / span) as f32);
        }
    }
    img
}

/// Which rendered representation an image is.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum Repr {
    /// Polarity-merged binary occupancy.
    Binary,
    /// Latest-timestamp image of positive events.
    TimestampPos,
    /// Latest-timestamp image of negative events.
    TimestampNeg,
}

/// Identifies one rendered image within a frame: which window (index into
/// `EventFrame::windows`, largest window first) and which representation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ImageTag {
    pub window: usize,
    pub repr: Repr,
}

/// The three rendered representations of one event window.
#[derive(Debug, Clone)]
pub struct WindowImages {
    pub binary: ImageF32,
    pub ts_pos: ImageF32,
    pub ts_neg: ImageF32,
}

/// One window of a frame: the slice plus its rendered images.
#[derive(Debug, Clone)]
pub struct FrameWindow {
    pub slice: WindowSlice,
    pub images: WindowImages,
}

/// All windows rendered at one interval tick.
#[derive(Debug, Clone)]
pub struct EventFrame {
    pub frame_id: usize,
    /// Observation time of the frame (the end of its interval).
    pub t_center_us: i64,
    /// One entry per configured window size, largest first.
    pub windows: Vec<FrameWindow>,
}

impl EventFrame {
    /// Iterate all rendered images of the frame (3 per window).
    pub fn images(&self) -> impl Iterator<Item = &ImageF32> {
        self.images_tagged().map(|(_, img)| img)
    }

    /// Iterate all rendered images with their window / representation tags.
    pub fn images_tagged(&self) -> impl Iterator<Item = (ImageTag, &ImageF32)> {
        self.windows.iter().enumerate().flat_map(|(window, w)| {
            [
                (ImageTag { window, repr: Repr::Binary }, &w.images.binary),
                (ImageTag { window, repr: Repr::TimestampPos }, &w.images.ts_pos),
                (ImageTag { window, repr: Repr::TimestampNeg }, &w.images.ts_neg),
            ]
        })
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FrameError {
    #[error("event stream is empty")]
    EmptyStream,
    #[error("frame interval must be positive, got {0} us")]
    BadInterval(i64),
    #[error("window fractions must be positive, got {0}")]
    BadWindowFraction(f64),
}

/// Build one `EventFrame` per `interval_us` tick covering the stream.
///
/// Frame `k` observes at `t_first + (k + 1) * interval_us`; events exactly on
/// a tick belong to the frame ending there. Window sizes are event counts
/// derived from `window_fracs` as fractions of the mean per-interval event
/// count; each window gathers that many events immediately before the
/// observation time.
pub fn build_frames(
    stream: &EventStream,
    interval_us: i64,
    window_fracs: &[f64],
) -> Result<Vec<EventFrame>, FrameError> {
    if interval_us <= 0 {
        return Err(FrameError::BadInterval(interval_us));
    }
    if let Some(&f) = window_fracs.iter().find(|&&f| f <= 0.0) {
        return Err(FrameError::BadWindowFraction(f));
    }
    let (Some(t0), Some(t1)) = (stream.t_first(), stream.t_last()) else {
        return Err(FrameError::EmptyStream);
    };
    let span = t1 - t0;
    // Number of interval ticks needed to cover the stream (at least one).
    let n_frames = if span == 0 { 1 } else { ((span + interval_us - 1) / interval_us) as usize };
    let mean_per_interval = stream.len() as f64 / n_frames as f64;

    let mut counts: Vec<usize> = window_fracs
        .iter()
        .map(|f| ((f * mean_per_interval).round() as usize).max(1))
        .collect();
    // Largest window first, mirroring the rendered image order.
    counts.sort_unstable_by(|a, b| b.cmp(a));
    counts.dedup();

    let (w, h) = (stream.width(), stream.height());
    let mut frames = Vec::with_capacity(n_frames);
    for k in 0..n_frames {
        let t_center_us = t0 + (k as i64 + 1) * interval_us;
        let windows = counts
            .iter()
            .map(|&n| {
                let slice = stream.slice_window(t_center_us, n, WindowDirection::Before);
                let evs = stream.window_events(&slice);
                let images = WindowImages {
                    binary: render_binary(evs, w, h),
                    ts_pos: render_timestamp(evs, w, h, 1),
                    ts_neg: render_timestamp(evs, w, h, -1),
                };
                FrameWindow { slice, images }
            })
            .collect();
        frames.push(EventFrame { frame_id: k, t_center_us, windows });
    }
    Ok(frames)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ev(t: i64, x: u16, y: u16, p: i8) -> Event {
        Event { t_us: t, x, y, polarity: p }
    }

    #[test]
    fn binary_merges_polarities() {
        let img = render_binary(&[ev(0, 2, 3, 1), ev(5, 2, 3, -1), ev(7, 1, 0, -1)], 4, 4);
        assert_eq!(img.get(2, 3), 1.0);
        assert_eq!(img.get(1, 0), 1.0);
        assert_eq!(img.get(0, 0), 0.0);
    }

    #[test]
    fn timestamp_keeps_latest_and_normalizes_into_unit_interval() {
        // Window [10, 20]: latest positive event at pixel (1,1) is t=20.
        let evs = [ev(10, 1, 1, 1), ev(15, 2, 2, -1), ev(20, 1, 1, 1)];
        let img = render_timestamp(&evs, 4, 4, 1);
        assert_eq!(img.get(1, 1), 1.0);
        assert_eq!(img.get(2, 2), 0.0); // opposite polarity
        let neg = render_timestamp(&evs, 4, 4, -1);
        // (15 - 10 + 1) / (20 - 10 + 1)
        assert!((neg.get(2, 2) - 6.0 / 11.0).abs() < 1e-6);
        assert!(neg.pixels().iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn single_event_pixel_is_one() {
        let img = render_timestamp(&[ev(42, 3, 0, 1)], 4, 4, 1);
        assert_eq!(img.get(3, 0), 1.0);
    }

    #[test]
    fn one_second_stream_yields_twenty_frames() {
        // 1 s of events at 50 ms intervals -> 20 frames, 6 images each.
        let events: Vec<Event> =
            (0..=1000).map(|i| ev(i * 1000, (i % 4) as u16, 0, 1)).collect();
        let stream = EventStream::new(4, 4, events).unwrap();
        let frames = build_frames(&stream, 50_000, &[1.0, 0.2]).unwrap();
        assert_eq!(frames.len(), 20);
        assert!(frames.iter().all(|f| f.images().count() == 6));
        assert_eq!(frames[0].t_center_us, 50_000);
        assert_eq!(frames[19].t_center_us, 1_000_000);
    }

    #[test]
    fn stream_shorter_than_interval_yields_one_frame() {
        let stream = EventStream::new(4, 4, vec![ev(0, 0, 0, 1), ev(10, 1, 1, -1)]).unwrap();
        let frames = build_frames(&stream, 50_000, &[1.0]).unwrap();
        assert_eq!(frames.len(), 1);
    }

    #[test]
    fn window_counts_follow_fractions() {
        // 200 events over 2 intervals -> mean 100/interval; fracs 1.0 / 0.2
        // -> windows of 100 and 20 events.
        let events: Vec<Event> = (0..200).map(|i| ev(i * 500, 0, 0, 1)).collect();
        let stream = EventStream::new(4, 4, events).unwrap();
        let frames = build_frames(&stream, 50_000, &[1.0, 0.2]).unwrap();
        let f = &frames[1];
        assert_eq!(f.windows[0].slice.range.len(), 100);
        assert_eq!(f.windows[1].slice.range.len(), 20);
    }
}
