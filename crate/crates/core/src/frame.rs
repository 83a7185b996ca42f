//! Binary event frames and their column-compressed form.
//!
//! An [`EventFrame`] marks every pixel that fired at least once inside a
//! half-open window `[t_k, t_k + tau)`. Polarity and event counts are
//! discarded. Storage is bit-packed, one bit per pixel, rows padded to a
//! whole number of 64-bit words.

use thiserror::Error;

use crate::event::Event;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum FrameError {
    #[error("event at ({u}, {v}) lies outside the {width}x{height} sensor")]
    EventOutOfBounds {
        u: u32,
        v: u32,
        width: usize,
        height: usize,
    },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

/// Read access shared by raw and compressed frames, as consumed by the
/// correlator.
pub trait MatchFrame {
    fn width(&self) -> usize;
    fn height(&self) -> usize;
    /// Number of sensor columns folded into one frame column (1 when raw).
    fn column_factor(&self) -> usize;
    fn row_is_empty(&self, row: usize) -> bool;
    /// Writes row `row` into `out[..width]` as real values.
    fn write_row(&self, row: usize, out: &mut [f64]);
    fn value(&self, row: usize, col: usize) -> u32;
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EventFrame {
    width: usize,
    height: usize,
    window_start: u64,
    window_length: u64,
    words_per_row: usize,
    bits: Vec<u64>,
}

impl EventFrame {
    pub fn empty(
        width: usize,
        height: usize,
        window_start: u64,
        window_length: u64,
    ) -> Result<Self, FrameError> {
        if width == 0 || height == 0 {
            return Err(FrameError::InvalidArgument(format!(
                "frame dimensions must be positive, got {width}x{height}"
            )));
        }
        if window_length == 0 {
            return Err(FrameError::InvalidArgument(
                "window length must be positive".into(),
            ));
        }
        let words_per_row = width.div_ceil(64);
        Ok(Self {
            width,
            height,
            window_start,
            window_length,
            words_per_row,
            bits: vec![0; words_per_row * height],
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn window_start(&self) -> u64 {
        self.window_start
    }

    pub fn window_length(&self) -> u64 {
        self.window_length
    }

    pub fn get(&self, u: usize, v: usize) -> bool {
        assert!(u < self.width && v < self.height, "pixel out of range");
        let w = self.bits[v * self.words_per_row + u / 64];
        (w >> (u % 64)) & 1 == 1
    }

    pub fn set(&mut self, u: usize, v: usize) {
        assert!(u < self.width && v < self.height, "pixel out of range");
        self.bits[v * self.words_per_row + u / 64] |= 1 << (u % 64);
    }

    pub fn row_words(&self, row: usize) -> &[u64] {
        let start = row * self.words_per_row;
        &self.bits[start..start + self.words_per_row]
    }

    /// Number of set pixels.
    pub fn count_ones(&self) -> usize {
        self.bits.iter().map(|w| w.count_ones() as usize).sum()
    }

    /// Set pixels in a half-open column range of one row.
    pub fn count_ones_in_row(&self, row: usize, start: usize, end: usize) -> u32 {
        debug_assert!(start <= end && end <= self.width);
        let words = self.row_words(row);
        let mut total = 0;
        let mut col = start;
        while col < end {
            let wi = col / 64;
            let lo = col % 64;
            let hi = (end - wi * 64).min(64);
            let mask = if hi - lo == 64 {
                u64::MAX
            } else {
                ((1u64 << (hi - lo)) - 1) << lo
            };
            total += (words[wi] & mask).count_ones();
            col = wi * 64 + hi;
        }
        total
    }

    /// Iterates `(u, v)` of every set pixel in row-major order.
    pub fn set_pixels(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.height).flat_map(move |v| {
            self.row_words(v)
                .iter()
                .enumerate()
                .flat_map(move |(wi, &word)| {
                    let mut w = word;
                    std::iter::from_fn(move || {
                        if w == 0 {
                            return None;
                        }
                        let b = w.trailing_zeros() as usize;
                        w &= w - 1;
                        Some((wi * 64 + b, v))
                    })
                })
        })
    }

    /// Bytes per row in the byte-aligned serialized layout.
    pub fn row_bytes(width: usize) -> usize {
        width.div_ceil(8)
    }

    /// Serializes one row, least significant bit first.
    pub fn write_row_bytes(&self, row: usize, out: &mut Vec<u8>) {
        let n = Self::row_bytes(self.width);
        let words = self.row_words(row);
        for byte_idx in 0..n {
            let word = words[byte_idx / 8];
            out.push((word >> ((byte_idx % 8) * 8)) as u8);
        }
    }

    /// Rebuilds a frame from byte-aligned rows (the inverse of
    /// [`write_row_bytes`](Self::write_row_bytes) applied to every row).
    pub fn from_row_bytes(
        width: usize,
        height: usize,
        window_start: u64,
        window_length: u64,
        bytes: &[u8],
    ) -> Result<Self, FrameError> {
        let mut frame = Self::empty(width, height, window_start, window_length)?;
        let n = Self::row_bytes(width);
        if bytes.len() != n * height {
            return Err(FrameError::InvalidArgument(format!(
                "expected {} bytes of pixel data, got {}",
                n * height,
                bytes.len()
            )));
        }
        for row in 0..height {
            let src = &bytes[row * n..(row + 1) * n];
            let dst = &mut frame.bits[row * frame.words_per_row..(row + 1) * frame.words_per_row];
            for (i, &b) in src.iter().enumerate() {
                dst[i / 8] |= (b as u64) << ((i % 8) * 8);
            }
            // Padding bits past the frame width must stay clear.
            let tail = width % 64;
            if tail != 0 {
                let last = dst.len() - 1;
                if dst[last] >> tail != 0 {
                    return Err(FrameError::InvalidArgument(format!(
                        "row {row} has bits set past column {width}"
                    )));
                }
            }
        }
        Ok(frame)
    }
}

impl MatchFrame for EventFrame {
    fn width(&self) -> usize {
        self.width
    }

    fn height(&self) -> usize {
        self.height
    }

    fn column_factor(&self) -> usize {
        1
    }

    fn row_is_empty(&self, row: usize) -> bool {
        self.row_words(row).iter().all(|&w| w == 0)
    }

    fn write_row(&self, row: usize, out: &mut [f64]) {
        out[..self.width].fill(0.0);
        for (wi, &word) in self.row_words(row).iter().enumerate() {
            let mut w = word;
            while w != 0 {
                let b = w.trailing_zeros() as usize;
                out[wi * 64 + b] = 1.0;
                w &= w - 1;
            }
        }
    }

    fn value(&self, row: usize, col: usize) -> u32 {
        self.get(col, row) as u32
    }
}

/// Row-wise column sums of a binary frame over non-overlapping windows of
/// `factor` columns. The final window is partial when the width is not a
/// multiple of the factor.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CompressedFrame {
    width: usize,
    height: usize,
    factor: usize,
    source_width: usize,
    values: Vec<u16>,
}

impl CompressedFrame {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn factor(&self) -> usize {
        self.factor
    }

    pub fn source_width(&self) -> usize {
        self.source_width
    }

    pub fn get(&self, col: usize, row: usize) -> u16 {
        self.values[row * self.width + col]
    }

    pub fn row(&self, row: usize) -> &[u16] {
        &self.values[row * self.width..(row + 1) * self.width]
    }

    pub fn total(&self) -> u64 {
        self.values.iter().map(|&v| v as u64).sum()
    }
}

impl MatchFrame for CompressedFrame {
    fn width(&self) -> usize {
        self.width
    }

    fn height(&self) -> usize {
        self.height
    }

    fn column_factor(&self) -> usize {
        self.factor
    }

    fn row_is_empty(&self, row: usize) -> bool {
        self.row(row).iter().all(|&v| v == 0)
    }

    fn write_row(&self, row: usize, out: &mut [f64]) {
        for (o, &v) in out.iter_mut().zip(self.row(row)) {
            *o = v as f64;
        }
    }

    fn value(&self, row: usize, col: usize) -> u32 {
        self.get(col, row) as u32
    }
}

/// Builds the binary frame for window `[window_start, window_start + window_length)`.
///
/// Every supplied event is checked against the sensor geometry, including
/// events outside the window. `events` must be sorted by timestamp.
pub fn accumulate(
    events: &[Event],
    window_start: u64,
    window_length: u64,
    width: usize,
    height: usize,
) -> Result<EventFrame, FrameError> {
    let mut frame = EventFrame::empty(width, height, window_start, window_length)?;
    if let Some(e) = events
        .iter()
        .find(|e| e.u as usize >= width || e.v as usize >= height)
    {
        return Err(FrameError::EventOutOfBounds {
            u: e.u,
            v: e.v,
            width,
            height,
        });
    }
    let window_end = window_start.saturating_add(window_length);
    let lo = events.partition_point(|e| e.t < window_start);
    let hi = events.partition_point(|e| e.t < window_end);
    for e in &events[lo..hi.max(lo)] {
        frame.set(e.u as usize, e.v as usize);
    }
    Ok(frame)
}

/// Nearest-neighbour resampling to a smaller (or equal) geometry.
pub fn downsample(
    frame: &EventFrame,
    target_width: usize,
    target_height: usize,
) -> Result<EventFrame, FrameError> {
    if target_width == 0 || target_height == 0 {
        return Err(FrameError::InvalidArgument(
            "target dimensions must be positive".into(),
        ));
    }
    if target_width > frame.width || target_height > frame.height {
        return Err(FrameError::InvalidArgument(format!(
            "cannot downsample {}x{} to larger {}x{}",
            frame.width, frame.height, target_width, target_height
        )));
    }
    let mut out = EventFrame::empty(
        target_width,
        target_height,
        frame.window_start,
        frame.window_length,
    )?;
    for v in 0..target_height {
        let sv = v * frame.height / target_height;
        for u in 0..target_width {
            let su = u * frame.width / target_width;
            if frame.get(su, sv) {
                out.set(u, v);
            }
        }
    }
    Ok(out)
}

/// Sums each row over windows of `factor` columns with stride `factor`.
pub fn compress(frame: &EventFrame, factor: usize) -> Result<CompressedFrame, FrameError> {
    if factor == 0 {
        return Err(FrameError::InvalidArgument(
            "compression factor must be at least 1".into(),
        ));
    }
    if factor > frame.width {
        return Err(FrameError::InvalidArgument(format!(
            "compression factor {factor} exceeds frame width {}",
            frame.width
        )));
    }
    let width = frame.width.div_ceil(factor);
    let mut values = vec![0u16; width * frame.height];
    for row in 0..frame.height {
        if frame.row_is_empty(row) {
            continue;
        }
        let out = &mut values[row * width..(row + 1) * width];
        for (c, o) in out.iter_mut().enumerate() {
            let start = c * factor;
            let end = (start + factor).min(frame.width);
            *o = frame.count_ones_in_row(row, start, end) as u16;
        }
    }
    Ok(CompressedFrame {
        width,
        height: frame.height,
        factor,
        source_width: frame.width,
        values,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_frame(rng: &mut impl Rng, w: usize, h: usize, density: f64) -> EventFrame {
        let mut f = EventFrame::empty(w, h, 0, 66_000).unwrap();
        for v in 0..h {
            for u in 0..w {
                if rng.random_bool(density) {
                    f.set(u, v);
                }
            }
        }
        f
    }

    #[test]
    fn polarity_and_repeats_collapse_to_one_pixel() {
        let events = [Event::new(10, 3, 2, 1), Event::new(20, 3, 2, -1)];
        let f = accumulate(&events, 0, 66_000, 8, 4).unwrap();
        assert!(f.get(3, 2));
        assert_eq!(f.count_ones(), 1);
    }

    #[test]
    fn empty_stream_gives_blank_frame() {
        let f = accumulate(&[], 0, 66_000, 320, 180).unwrap();
        assert_eq!(f.count_ones(), 0);
    }

    #[test]
    fn window_is_half_open() {
        let events = [
            Event::new(999, 0, 0, 1),
            Event::new(1000, 1, 0, 1),
            Event::new(1099, 2, 0, 1),
            Event::new(1100, 3, 0, 1),
        ];
        let f = accumulate(&events, 1000, 100, 4, 1).unwrap();
        assert!(!f.get(0, 0));
        assert!(f.get(1, 0));
        assert!(f.get(2, 0));
        assert!(!f.get(3, 0), "event at t_k + tau must be excluded");
    }

    #[test]
    fn geometry_mismatch_is_rejected() {
        let err = accumulate(&[Event::new(0, 8, 0, 1)], 0, 10, 8, 4).unwrap_err();
        assert!(matches!(err, FrameError::EventOutOfBounds { u: 8, .. }));
        // Out-of-window events are still checked.
        let err = accumulate(&[Event::new(500, 0, 9, 1)], 0, 10, 8, 4).unwrap_err();
        assert!(matches!(err, FrameError::EventOutOfBounds { v: 9, .. }));
        assert!(accumulate(&[], 0, 0, 8, 4).is_err());
        assert!(accumulate(&[], 0, 10, 0, 4).is_err());
    }

    #[test]
    fn downsample_by_four_samples_every_fourth_pixel() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let src = random_frame(&mut rng, 1280, 720, 0.05);
        let dst = downsample(&src, 320, 180).unwrap();
        for v in 0..180 {
            for u in 0..320 {
                assert_eq!(dst.get(u, v), src.get(4 * u, 4 * v));
            }
        }
    }

    #[test]
    fn downsample_identity_and_single_pixel() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let src = random_frame(&mut rng, 64, 48, 0.2);
        assert_eq!(downsample(&src, 64, 48).unwrap(), src);

        let mut one = EventFrame::empty(32, 32, 0, 1).unwrap();
        one.set(8, 8);
        let d = downsample(&one, 8, 8).unwrap();
        assert!(d.get(2, 2));
        assert_eq!(d.count_ones(), 1);
    }

    #[test]
    fn downsample_rejects_bad_targets() {
        let f = EventFrame::empty(16, 16, 0, 1).unwrap();
        assert!(downsample(&f, 0, 4).is_err());
        assert!(downsample(&f, 32, 4).is_err());
    }

    #[test]
    fn compress_known_row() {
        let mut f = EventFrame::empty(8, 1, 0, 1).unwrap();
        for u in [0, 2, 3] {
            f.set(u, 0);
        }
        let c = compress(&f, 4).unwrap();
        assert_eq!(c.row(0), &[3, 0]);
        assert_eq!(c.width(), 2);
    }

    #[test]
    fn compress_identity_factor() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let f = random_frame(&mut rng, 70, 9, 0.3);
        let c = compress(&f, 1).unwrap();
        for v in 0..9 {
            for u in 0..70 {
                assert_eq!(c.get(u, v) as u32, f.get(u, v) as u32);
            }
        }
    }

    #[test]
    fn compress_matches_naive_window_sums() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let f = random_frame(&mut rng, 320, 180, 0.1);
        let c = compress(&f, 8).unwrap();
        assert_eq!(c.width(), 40);
        for v in 0..180 {
            for col in 0..40 {
                let naive: u16 = (col * 8..col * 8 + 8).map(|u| f.get(u, v) as u16).sum();
                assert_eq!(c.get(col, v), naive);
            }
        }
    }

    #[test]
    fn compress_partial_final_window_and_errors() {
        let mut f = EventFrame::empty(10, 1, 0, 1).unwrap();
        f.set(8, 0);
        f.set(9, 0);
        let c = compress(&f, 4).unwrap();
        assert_eq!(c.row(0), &[0, 0, 2]);
        assert!(compress(&f, 0).is_err());
        assert!(compress(&f, 11).is_err());
    }

    #[test]
    fn row_bytes_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let f = random_frame(&mut rng, 77, 5, 0.4);
        let mut bytes = Vec::new();
        for r in 0..5 {
            f.write_row_bytes(r, &mut bytes);
        }
        assert_eq!(bytes.len(), 10 * 5);
        let g = EventFrame::from_row_bytes(77, 5, 0, 66_000, &bytes).unwrap();
        assert_eq!(f, g);
    }

    #[test]
    fn set_pixels_lists_every_bit() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let f = random_frame(&mut rng, 130, 7, 0.2);
        let listed: Vec<_> = f.set_pixels().collect();
        assert_eq!(listed.len(), f.count_ones());
        assert!(listed.iter().all(|&(u, v)| f.get(u, v)));
    }

    fn arb_events() -> impl Strategy<Value = Vec<Event>> {
        prop::collection::vec((0u64..2000, 0u32..40, 0u32..20, prop::bool::ANY), 0..200).prop_map(
            |mut v| {
                v.sort_by_key(|e| e.0);
                v.into_iter()
                    .map(|(t, u, vv, p)| Event::new(t, u, vv, if p { 1 } else { -1 }))
                    .collect()
            },
        )
    }

    proptest! {
        #[test]
        fn duplicating_events_changes_nothing(events in arb_events(), dup in 0usize..200) {
            let base = accumulate(&events, 100, 1500, 40, 20).unwrap();
            let mut doubled = events.clone();
            if !events.is_empty() {
                let e = events[dup % events.len()];
                let pos = doubled.partition_point(|x| x.t <= e.t);
                doubled.insert(pos, e);
            }
            prop_assert_eq!(accumulate(&doubled, 100, 1500, 40, 20).unwrap(), base);
        }

        #[test]
        fn polarity_is_ignored(events in arb_events()) {
            let flipped: Vec<Event> = events.iter().map(|e| Event { p: -e.p, ..*e }).collect();
            prop_assert_eq!(
                accumulate(&events, 0, 2000, 40, 20).unwrap(),
                accumulate(&flipped, 0, 2000, 40, 20).unwrap()
            );
        }

        #[test]
        fn compression_preserves_total(events in arb_events(), factor in 1usize..=40) {
            let f = accumulate(&events, 0, 2000, 40, 20).unwrap();
            let c = compress(&f, factor).unwrap();
            prop_assert_eq!(c.total(), f.count_ones() as u64);
            prop_assert!(c.row(0).iter().all(|&v| v as usize <= factor));
            prop_assert_eq!(c.width(), 40usize.div_ceil(factor));
        }

        #[test]
        fn downsample_shape(events in arb_events(), tw in 1usize..=40, th in 1usize..=20) {
            let f = accumulate(&events, 0, 2000, 40, 20).unwrap();
            let d = downsample(&f, tw, th).unwrap();
            prop_assert_eq!((d.width(), d.height()), (tw, th));
        }
    }
}
