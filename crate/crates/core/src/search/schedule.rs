use serde::{Deserialize, Serialize};

use crate::error::SearchError;

/// A contiguous run of factors, `start..start + width`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Segment {
    pub start: usize,
    pub width: usize,
}

impl Segment {
    pub fn new(start: usize, width: usize) -> Self {
        Self { start, width }
    }

    pub fn end(&self) -> usize {
        self.start + self.width
    }

    /// The two halves processed in the next layer, or `None` at width 1.
    pub fn children(&self) -> Option<[Segment; 2]> {
        if self.width < 2 {
            return None;
        }
        let half = self.width / 2;
        Some([
            Segment::new(self.start + half, half),
            Segment::new(self.start, half),
        ])
    }
}

/// Layers of segments visited by the search, coarsest first.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SegmentSchedule {
    layers: Vec<Vec<Segment>>,
}

impl SegmentSchedule {
    pub fn layers(&self) -> &[Vec<Segment>] {
        &self.layers
    }

    pub fn num_segments(&self) -> usize {
        self.layers.iter().map(Vec::len).sum()
    }

    /// `(layer index, segment)` in visiting order; layer indices start at 1.
    pub fn iter(&self) -> impl Iterator<Item = (usize, Segment)> + '_ {
        self.layers
            .iter()
            .enumerate()
            .flat_map(|(i, layer)| layer.iter().map(move |s| (i + 1, *s)))
    }
}

/// Halving schedule over `num_factors` factors: widths `F/2, F/4, .., 1`,
/// high-index (low-frequency) segments first within each layer.
pub fn segment_schedule(num_factors: usize) -> Result<SegmentSchedule, SearchError> {
    if num_factors < 2 || !num_factors.is_power_of_two() {
        return Err(SearchError::UnsupportedDimension(num_factors));
    }
    let mut layers = Vec::new();
    let mut width = num_factors / 2;
    while width >= 1 {
        let layer = (0..num_factors / width)
            .rev()
            .map(|j| Segment::new(j * width, width))
            .collect();
        layers.push(layer);
        width /= 2;
    }
    Ok(SegmentSchedule { layers })
}

/// `C` evenly spaced values from `low` to `high` inclusive.
pub fn incremental_values(range: (f64, f64), count: usize) -> Result<Vec<f64>, SearchError> {
    let (low, high) = range;
    if count < 2 {
        return Err(SearchError::InvalidCount { min: 2, got: count });
    }
    if !(low <= high) || !low.is_finite() || !high.is_finite() {
        return Err(SearchError::InvalidRange { low, high });
    }
    let step = (high - low) / (count - 1) as f64;
    let mut values: Vec<f64> = (0..count).map(|k| low + k as f64 * step).collect();
    values[count - 1] = high;
    Ok(values)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pairs(layer: &[Segment]) -> Vec<(usize, usize)> {
        layer.iter().map(|s| (s.start, s.width)).collect()
    }

    #[test]
    fn schedule_of_eight() {
        let s = segment_schedule(8).unwrap();
        let l = s.layers();
        assert_eq!(l.len(), 3);
        assert_eq!(pairs(&l[0]), vec![(4, 4), (0, 4)]);
        assert_eq!(pairs(&l[1]), vec![(6, 2), (4, 2), (2, 2), (0, 2)]);
        assert_eq!(
            pairs(&l[2]),
            (0..8).rev().map(|i| (i, 1)).collect::<Vec<_>>()
        );
        assert_eq!(s.num_segments(), 14);
    }

    #[test]
    fn schedule_smallest_and_largest() {
        let s = segment_schedule(2).unwrap();
        assert_eq!(pairs(&s.layers()[0]), vec![(1, 1), (0, 1)]);
        assert_eq!(s.num_segments(), 2);
        assert_eq!(segment_schedule(64).unwrap().num_segments(), 126);
    }

    #[test]
    fn schedule_rejects_non_powers() {
        for f in [0, 1, 3, 6, 12, 48] {
            assert!(matches!(
                segment_schedule(f),
                Err(SearchError::UnsupportedDimension(_))
            ));
        }
    }

    #[test]
    fn layers_tile_and_children_nest() {
        for f in [2usize, 4, 8, 16, 32, 64, 128] {
            let s = segment_schedule(f).unwrap();
            assert_eq!(s.num_segments(), 2 * f - 2);
            for (i, layer) in s.layers().iter().enumerate() {
                let mut covered = vec![0u8; f];
                for seg in layer {
                    assert_eq!(seg.width, f >> (i + 1));
                    covered[seg.start..seg.end()]
                        .iter_mut()
                        .for_each(|c| *c += 1);
                }
                assert!(covered.iter().all(|&c| c == 1));
                assert!(layer.windows(2).all(|w| w[0].start > w[1].start));
                if let Some(next) = s.layers().get(i + 1) {
                    let kids: Vec<Segment> =
                        layer.iter().flat_map(|s| s.children().unwrap()).collect();
                    assert_eq!(&kids, next);
                }
            }
        }
    }

    #[test]
    fn values_examples() {
        let v = incremental_values((-5.0, 5.0), 10).unwrap();
        assert_eq!(v.len(), 10);
        assert_eq!(v[0], -5.0);
        assert_eq!(v[9], 5.0);
        for w in v.windows(2) {
            assert!((w[1] - w[0] - 10.0 / 9.0).abs() < 1e-12);
        }
        assert_eq!(incremental_values((0.0, 0.0), 5).unwrap(), vec![0.0; 5]);
        assert_eq!(
            incremental_values((-3.0, 3.0), 3).unwrap(),
            vec![-3.0, 0.0, 3.0]
        );
        assert!(incremental_values((0.0, 1.0), 1).is_err());
        assert!(incremental_values((1.0, 0.0), 3).is_err());
    }
}
