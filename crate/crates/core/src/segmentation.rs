//! Segmentations of a sample range into intervals of constant input.
//!
//! A segmentation is stored as its change bit sequence `delta`, where
//! `delta[t]` is set when the input differs between `t - 1` and `t`. The set
//! bits are the change points; each change point starts a new segment. The
//! samples before the first change point form the initial segment, on which
//! the input equals its zero initial condition.

use std::fmt;

/// Inclusive sample range of one segment.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SegmentBounds {
    pub start: usize,
    pub end: usize,
}

impl SegmentBounds {
    pub fn len(&self) -> usize {
        self.end + 1 - self.start
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Segmentation {
    delta: Vec<bool>,
}

impl Segmentation {
    pub fn from_delta(bits: &[bool]) -> Self {
        Segmentation {
            delta: bits.to_vec(),
        }
    }

    /// Builds the segmentation of `len` samples with changes at `changepoints`.
    /// Indices at or beyond `len` are ignored.
    pub fn from_changepoints(len: usize, changepoints: &[usize]) -> Self {
        let mut delta = vec![false; len];
        for &k in changepoints {
            if k < len {
                delta[k] = true;
            }
        }
        Segmentation { delta }
    }

    pub fn delta(&self) -> &[bool] {
        &self.delta
    }

    pub fn len(&self) -> usize {
        self.delta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.delta.is_empty()
    }

    pub fn push(&mut self, bit: bool) {
        self.delta.push(bit);
    }

    pub fn to_changepoints(&self) -> Vec<usize> {
        self.delta
            .iter()
            .enumerate()
            .filter_map(|(t, &b)| b.then_some(t))
            .collect()
    }

    pub fn num_changes(&self) -> usize {
        self.delta.iter().filter(|&&b| b).count()
    }

    /// Non-empty segments in time order. Together they partition `0..len`.
    pub fn segments(&self) -> Vec<SegmentBounds> {
        let mut out = Vec::new();
        let mut start = 0;
        for k in self.to_changepoints() {
            if k > start {
                out.push(SegmentBounds { start, end: k - 1 });
            }
            start = k;
        }
        if start < self.delta.len() {
            out.push(SegmentBounds {
                start,
                end: self.delta.len() - 1,
            });
        }
        out
    }

    /// The first `len` bits.
    pub fn prefix(&self, len: usize) -> Segmentation {
        Segmentation {
            delta: self.delta[..len.min(self.delta.len())].to_vec(),
        }
    }

    /// Comma-separated change point list, the CLI wire form.
    pub fn changepoints_csv(&self) -> String {
        self.to_changepoints()
            .iter()
            .map(usize::to_string)
            .collect::<Vec<_>>()
            .join(",")
    }
}

impl fmt::Display for Segmentation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for &b in &self.delta {
            f.write_str(if b { "1" } else { "0" })?;
        }
        Ok(())
    }
}

/// True iff every closed segment has at least `min_len` samples.
///
/// The trailing segment is still open and exempt. An empty initial segment
/// (a change at the very first sample) is not a segment at all.
pub fn min_segment_ok(seg: &Segmentation, min_len: usize) -> bool {
    let segs = seg.segments();
    let closed = segs.len().saturating_sub(1);
    segs[..closed].iter().all(|s| s.len() >= min_len)
}
