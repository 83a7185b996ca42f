//! Horizontal cross-correlation of event frames in the Fourier domain.
//!
//! For a teach frame `T` and a repeat frame `R` of width `w` the score of a
//! horizontal shift `delta` is
//!
//! ```text
//! P[delta] = sum_rows sum_u T(row, u + delta) * R(row, u)
//! ```
//!
//! with out-of-frame pixels treated as zero. Rows are transformed
//! independently (real FFT, zero-padded to `2w` so the correlation is
//! linear rather than circular), multiplied against the conjugate repeat
//! spectrum, summed over rows and inverted once.
//!
//! Sign convention: a positive `delta` means the repeat view's content sits
//! `delta` columns to the left of where it appears in the teach frame.
//!
//! A whole search space is handled with a single transform of the teach
//! frames laid side by side, each in its own `2w`-wide zero-padded slot so
//! neighbouring candidates cannot leak into each other's shift window.

use std::collections::HashMap;
use std::sync::Arc;

use realfft::num_complex::Complex64;
use realfft::{ComplexToReal, RealFftPlanner, RealToComplex};
use thiserror::Error;

use crate::frame::MatchFrame;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CorrelationError {
    #[error("frame geometry mismatch: {0}")]
    DimensionMismatch(String),
    #[error("search space is empty")]
    EmptySearchSpace,
}

/// Scores for every horizontal shift in `[-w/2, -w/2 + w)` plus the peak.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationResult {
    /// `scores[i]` is the score of shift `min_shift() + i`.
    pub scores: Vec<f64>,
    /// Shift at the peak, in frame columns.
    pub delta: i32,
    /// Peak score.
    pub rho: f64,
    /// Sensor columns per frame column of the correlated frames.
    pub column_factor: usize,
}

impl CorrelationResult {
    pub fn width(&self) -> usize {
        self.scores.len()
    }

    pub fn min_shift(&self) -> i32 {
        min_shift(self.scores.len())
    }

    pub fn score_at(&self, delta: i32) -> Option<f64> {
        let i = delta - self.min_shift();
        (i >= 0)
            .then(|| self.scores.get(i as usize).copied())
            .flatten()
    }

    /// Peak shift expressed in sensor columns.
    pub fn delta_pixels(&self) -> i32 {
        self.delta * self.column_factor as i32
    }

    fn from_scores(scores: Vec<f64>, column_factor: usize) -> Self {
        let lo = min_shift(scores.len());
        // Inputs are integer valued, so peaks are compared after rounding;
        // ties go to the smallest |delta|, then to the negative shift.
        let mut best: Option<(f64, i32)> = None;
        for (i, &s) in scores.iter().enumerate() {
            let d = lo + i as i32;
            let r = s.round();
            best = match best {
                None => Some((r, d)),
                Some((br, bd)) => {
                    if r > br || (r == br && d.abs() < bd.abs()) {
                        Some((r, d))
                    } else {
                        Some((br, bd))
                    }
                }
            };
        }
        let (_, delta) = best.unwrap_or((0.0, 0));
        let rho = scores[(delta - lo) as usize].max(0.0);
        Self {
            scores,
            delta,
            rho,
            column_factor,
        }
    }
}

fn min_shift(width: usize) -> i32 {
    -((width / 2) as i32)
}

/// The candidate teach frames `j in [k - s, k + s]`, clamped to the map.
#[derive(Debug, Clone)]
pub struct SearchSpace<'a, F> {
    /// Current goal index.
    pub k: usize,
    /// Requested half-width.
    pub s: usize,
    /// Map index of `candidates[0]`.
    pub first: usize,
    pub candidates: Vec<&'a F>,
}

impl<'a, F> SearchSpace<'a, F> {
    /// Clamped, ascending index range `[max(k - s, 0), min(k + s, len - 1)]`.
    pub fn index_range(k: usize, s: usize, len: usize) -> std::ops::RangeInclusive<usize> {
        debug_assert!(k < len);
        k.saturating_sub(s)..=(k + s).min(len - 1)
    }

    /// Selects the search space over a contiguous list of frames.
    pub fn over(frames: &'a [F], k: usize, s: usize) -> Result<Self, CorrelationError> {
        if frames.is_empty() || k >= frames.len() {
            return Err(CorrelationError::EmptySearchSpace);
        }
        let range = Self::index_range(k, s, frames.len());
        Ok(Self {
            k,
            s,
            first: *range.start(),
            candidates: frames[range].iter().collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }

    /// Map indices of the candidates, ascending.
    pub fn indices(&self) -> std::ops::Range<usize> {
        self.first..self.first + self.candidates.len()
    }
}

/// Converts a peak shift into a heading angle: `theta = (fov / width) * delta`.
///
/// `width` is in the same units as `delta` (compressed columns when the
/// frames were compressed). Panics if `width` is zero.
pub fn pixel_offset_to_angle(delta: f64, width: usize, fov_deg: f64) -> f64 {
    assert!(width > 0, "frame width must be positive");
    fov_deg / width as f64 * delta
}

#[derive(Clone)]
struct Plan {
    forward: Arc<dyn RealToComplex<f64>>,
    inverse: Arc<dyn ComplexToReal<f64>>,
}

#[derive(Clone)]
struct Workspace {
    plan: Plan,
    real: Vec<f64>,
    spectrum: Vec<Complex64>,
    accum: Vec<Complex64>,
    scratch: Vec<Complex64>,
}

impl Workspace {
    fn new(len: usize) -> Self {
        let mut planner = RealFftPlanner::<f64>::new();
        let forward = planner.plan_fft_forward(len);
        let inverse = planner.plan_fft_inverse(len);
        let scratch_len = forward.get_scratch_len().max(inverse.get_scratch_len());
        Self {
            real: forward.make_input_vec(),
            spectrum: forward.make_output_vec(),
            accum: forward.make_output_vec(),
            scratch: vec![Complex64::default(); scratch_len],
            plan: Plan { forward, inverse },
        }
    }

    /// Transforms `real` into `spectrum`.
    fn forward(&mut self) {
        self.plan
            .forward
            .process_with_scratch(&mut self.real, &mut self.spectrum, &mut self.scratch)
            .expect("buffer sizes come from the plan");
    }

    /// Inverts `accum` into `real` and normalizes.
    fn inverse(&mut self) {
        let n = self.real.len();
        // DC and Nyquist bins of a product of real spectra are real; clear
        // rounding residue so the inverse accepts them.
        self.accum[0].im = 0.0;
        if n.is_multiple_of(2) {
            let last = self.accum.len() - 1;
            self.accum[last].im = 0.0;
        }
        self.plan
            .inverse
            .process_with_scratch(&mut self.accum, &mut self.real, &mut self.scratch)
            .expect("buffer sizes come from the plan");
        let scale = 1.0 / n as f64;
        for v in &mut self.real {
            *v *= scale;
        }
    }
}

/// Teach-side spectra of a search space, reusable across repeat frames.
#[derive(Clone)]
pub struct PreparedSearchSpace {
    width: usize,
    height: usize,
    column_factor: usize,
    segments: usize,
    first: usize,
    /// Per row: spectrum of the concatenated teach rows, or `None` when
    /// every candidate row is blank.
    rows: Vec<Option<Vec<Complex64>>>,
}

impl PreparedSearchSpace {
    pub fn len(&self) -> usize {
        self.segments
    }

    pub fn is_empty(&self) -> bool {
        self.segments == 0
    }

    pub fn first(&self) -> usize {
        self.first
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }
}

/// Holds FFT plans and scratch buffers for the frame geometries it has seen.
///
/// Not meant to be shared between threads; clone one per worker (plans are
/// reference counted, so clones are cheap).
#[derive(Clone, Default)]
pub struct CorrelationEngine {
    workspaces: HashMap<usize, Workspace>,
    row: Vec<f64>,
}

impl CorrelationEngine {
    pub fn new() -> Self {
        Self::default()
    }

    fn workspace(&mut self, len: usize) -> &mut Workspace {
        self.workspaces
            .entry(len)
            .or_insert_with(|| Workspace::new(len))
    }

    /// Scores every horizontal shift of `repeat` against `teach`.
    pub fn correlate_horizontal<F: MatchFrame>(
        &mut self,
        teach: &F,
        repeat: &F,
    ) -> Result<CorrelationResult, CorrelationError> {
        check_same_geometry(teach, repeat)?;
        let prepared = self.prepare_frames(&[teach], 0)?;
        let mut out = self.correlate_prepared(&prepared, repeat)?;
        Ok(out.pop().expect("one segment"))
    }

    /// Correlates `repeat` against every candidate with one forward
    /// transform per side and a single inverse transform.
    pub fn correlate_search_space<F: MatchFrame>(
        &mut self,
        space: &SearchSpace<'_, F>,
        repeat: &F,
    ) -> Result<Vec<CorrelationResult>, CorrelationError> {
        let prepared = self.prepare(space)?;
        self.correlate_prepared(&prepared, repeat)
    }

    /// Precomputes the concatenated teach spectra of a search space.
    pub fn prepare<F: MatchFrame>(
        &mut self,
        space: &SearchSpace<'_, F>,
    ) -> Result<PreparedSearchSpace, CorrelationError> {
        self.prepare_frames(&space.candidates, space.first)
    }

    fn prepare_frames<F: MatchFrame>(
        &mut self,
        frames: &[&F],
        first: usize,
    ) -> Result<PreparedSearchSpace, CorrelationError> {
        let head = frames.first().ok_or(CorrelationError::EmptySearchSpace)?;
        for f in &frames[1..] {
            check_same_geometry(*head, *f)?;
        }
        let (w, h) = (head.width(), head.height());
        let slot = 2 * w;
        let len = slot * frames.len();
        self.row.resize(w, 0.0);
        let mut row_buf = std::mem::take(&mut self.row);
        let ws = self.workspace(len);
        let mut rows = Vec::with_capacity(h);
        for r in 0..h {
            if frames.iter().all(|f| f.row_is_empty(r)) {
                rows.push(None);
                continue;
            }
            ws.real.fill(0.0);
            for (j, f) in frames.iter().enumerate() {
                if f.row_is_empty(r) {
                    continue;
                }
                f.write_row(r, &mut row_buf);
                ws.real[j * slot..j * slot + w].copy_from_slice(&row_buf);
            }
            ws.forward();
            rows.push(Some(ws.spectrum.clone()));
        }
        self.row = row_buf;
        Ok(PreparedSearchSpace {
            width: w,
            height: h,
            column_factor: head.column_factor(),
            segments: frames.len(),
            first,
            rows,
        })
    }

    /// Correlates a repeat frame against a prepared search space.
    pub fn correlate_prepared<F: MatchFrame>(
        &mut self,
        prepared: &PreparedSearchSpace,
        repeat: &F,
    ) -> Result<Vec<CorrelationResult>, CorrelationError> {
        if repeat.width() != prepared.width
            || repeat.height() != prepared.height
            || repeat.column_factor() != prepared.column_factor
        {
            return Err(CorrelationError::DimensionMismatch(format!(
                "repeat frame {}x{} (factor {}) vs teach {}x{} (factor {})",
                repeat.width(),
                repeat.height(),
                repeat.column_factor(),
                prepared.width,
                prepared.height,
                prepared.column_factor
            )));
        }
        let w = prepared.width;
        let slot = 2 * w;
        let len = slot * prepared.segments;
        self.row.resize(w, 0.0);
        let mut row_buf = std::mem::take(&mut self.row);
        let ws = self.workspace(len);
        ws.accum.fill(Complex64::default());
        let mut any = false;
        for (r, teach) in prepared.rows.iter().enumerate() {
            let Some(teach) = teach else { continue };
            if repeat.row_is_empty(r) {
                continue;
            }
            any = true;
            ws.real.fill(0.0);
            repeat.write_row(r, &mut row_buf);
            ws.real[..w].copy_from_slice(&row_buf);
            ws.forward();
            for ((a, t), r) in ws.accum.iter_mut().zip(teach).zip(&ws.spectrum) {
                *a += t * r.conj();
            }
        }
        if any {
            ws.inverse();
        } else {
            ws.real.fill(0.0);
        }
        let lo = min_shift(w);
        let results = (0..prepared.segments)
            .map(|j| {
                let base = (j * slot) as i64;
                let scores = (0..w as i64)
                    .map(|i| {
                        let idx = (base + lo as i64 + i).rem_euclid(len as i64) as usize;
                        ws.real[idx]
                    })
                    .collect();
                CorrelationResult::from_scores(scores, prepared.column_factor)
            })
            .collect();
        self.row = row_buf;
        Ok(results)
    }
}

fn check_same_geometry<F: MatchFrame>(a: &F, b: &F) -> Result<(), CorrelationError> {
    if a.width() != b.width() || a.height() != b.height() || a.column_factor() != b.column_factor()
    {
        return Err(CorrelationError::DimensionMismatch(format!(
            "{}x{} (factor {}) vs {}x{} (factor {})",
            a.width(),
            a.height(),
            a.column_factor(),
            b.width(),
            b.height(),
            b.column_factor()
        )));
    }
    Ok(())
}

/// Direct nested-loop evaluation of the score formula. Quadratic in the
/// width; used as a reference.
pub fn correlate_direct<F: MatchFrame>(teach: &F, repeat: &F) -> Vec<f64> {
    let (w, h) = (teach.width(), teach.height());
    let lo = min_shift(w);
    (0..w as i32)
        .map(|i| {
            let d = lo + i;
            let mut s = 0u64;
            for row in 0..h {
                for u in 0..w as i32 {
                    let tu = u + d;
                    if tu < 0 || tu >= w as i32 {
                        continue;
                    }
                    s +=
                        teach.value(row, tu as usize) as u64 * repeat.value(row, u as usize) as u64;
                }
            }
            s as f64
        })
        .collect()
}
