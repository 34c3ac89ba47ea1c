//! 1/30-second segmentation shared by labeling, detection and masking.

use serde::{Deserialize, Serialize};

use crate::error::{ensure_arg, Result};

pub const SEGMENTS_PER_SECOND: usize = 30;

/// Start sample of segment `i`: `round(i * rate / 30)`, halves rounded up.
pub fn segment_boundary(i: usize, rate: u32) -> usize {
    let per = SEGMENTS_PER_SECOND;
    (2 * i * rate as usize + per) / (2 * per)
}

/// Number of whole-and-partial segments covering `n_samples`.
pub fn segment_count(n_samples: usize, rate: u32) -> usize {
    if n_samples == 0 {
        return 0;
    }
    // Smallest S with boundary(S) >= n_samples.
    let mut s = (n_samples * SEGMENTS_PER_SECOND) / rate as usize;
    while segment_boundary(s, rate) < n_samples {
        s += 1;
    }
    while s > 0 && segment_boundary(s - 1, rate) >= n_samples {
        s -= 1;
    }
    s
}

/// Sample ranges of all segments covering `n_samples`; the last may be partial.
pub fn segment_bounds(n_samples: usize, rate: u32) -> Vec<std::ops::Range<usize>> {
    let count = segment_count(n_samples, rate);
    (0..count)
        .map(|i| segment_boundary(i, rate)..segment_boundary(i + 1, rate).min(n_samples))
        .collect()
}

/// Per-segment silence labels in mask polarity: `1` marks a silent segment.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmentLabels {
    pub labels: Vec<u8>,
    pub sample_rate: u32,
}

impl SegmentLabels {
    pub fn new(labels: Vec<u8>, sample_rate: u32) -> Result<Self> {
        ensure_arg!(
            labels.iter().all(|&l| l <= 1),
            "segment labels must be 0 or 1"
        );
        Ok(Self {
            labels,
            sample_rate,
        })
    }

    pub fn segment_s(&self) -> f64 {
        1.0 / SEGMENTS_PER_SECOND as f64
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn is_silent(&self, i: usize) -> bool {
        self.labels[i] == 1
    }

    pub fn silent_count(&self) -> usize {
        self.labels.iter().filter(|&&l| l == 1).count()
    }
}

/// Per-sample mask; binary for thresholded detections and ground truth,
/// continuous in end-to-end training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleMask(pub Vec<f64>);

impl SampleMask {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }
}

/// Expand one value per segment to one value per sample.
pub fn expand_segments(values: &[f64], n_samples: usize, rate: u32) -> Result<Vec<f64>> {
    let bounds = segment_bounds(n_samples, rate);
    ensure_arg!(
        bounds.len() == values.len(),
        "{} segment values cannot cover {} samples ({} segments needed)",
        values.len(),
        n_samples,
        bounds.len()
    );
    let mut out = vec![0.0; n_samples];
    for (range, &v) in bounds.into_iter().zip(values) {
        out[range].iter_mut().for_each(|o| *o = v);
    }
    Ok(out)
}
