//! Flat trainable parameter vectors with named, disjoint segments.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A named block `[offset, offset + product(shape))` of a parameter vector.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub name: String,
    pub offset: usize,
    pub shape: Vec<usize>,
}

impl Segment {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> core::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

/// Ordered list of segments tiling `[0, len)`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamLayout {
    segments: Vec<Segment>,
}

impl ParamLayout {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends a segment directly after the previous one.
    pub fn push(&mut self, name: impl Into<String>, shape: &[usize]) -> Segment {
        let seg = Segment { name: name.into(), offset: self.len(), shape: shape.to_vec() };
        self.segments.push(seg.clone());
        seg
    }

    pub fn len(&self) -> usize {
        self.segments.last().map_or(0, |s| s.offset + s.len())
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn get(&self, name: &str) -> Option<&Segment> {
        self.segments.iter().find(|s| s.name == name)
    }

    /// Checks that the segments are disjoint and cover `[0, len)` exactly.
    pub fn validate(&self) -> Result<()> {
        let mut ranges: Vec<_> = self.segments.iter().map(|s| s.range()).collect();
        ranges.sort_by_key(|r| r.start);
        let mut cursor = 0;
        for r in ranges {
            if r.start != cursor {
                return Err(Error::dim(format!("layout gap or overlap at offset {}", cursor)));
            }
            cursor = r.end;
        }
        if cursor != self.len() {
            return Err(Error::dim("layout does not end at its length"));
        }
        Ok(())
    }
}

/// The trainable vector θ together with its layout.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    values: Vec<f64>,
    layout: ParamLayout,
}

impl ParamVector {
    pub fn zeros(layout: ParamLayout) -> Self {
        ParamVector { values: vec![0.0; layout.len()], layout }
    }

    pub fn from_values(layout: ParamLayout, values: Vec<f64>) -> Result<Self> {
        if values.len() != layout.len() {
            return Err(Error::dim(format!(
                "layout expects {} parameters, got {}",
                layout.len(),
                values.len()
            )));
        }
        Ok(ParamVector { values, layout })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn segment(&self, seg: &Segment) -> &[f64] {
        &self.values[seg.range()]
    }

    pub fn segment_mut(&mut self, seg: &Segment) -> &mut [f64] {
        &mut self.values[seg.range()]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn push_tiles_contiguously() {
        let mut layout = ParamLayout::new();
        let a = layout.push("a", &[2, 3]);
        let b = layout.push("b", &[4]);
        assert_eq!(a.range(), 0..6);
        assert_eq!(b.range(), 6..10);
        assert_eq!(layout.len(), 10);
        layout.validate().unwrap();
        assert_eq!(layout.get("b"), Some(&b));
    }

    #[test]
    fn from_values_checks_length() {
        let mut layout = ParamLayout::new();
        layout.push("a", &[3]);
        assert!(ParamVector::from_values(layout.clone(), vec![0.0; 2]).is_err());
        let mut p = ParamVector::from_values(layout.clone(), vec![1.0, 2.0, 3.0]).unwrap();
        let seg = layout.get("a").unwrap().clone();
        p.segment_mut(&seg)[1] = 9.0;
        assert_eq!(p.values(), &[1.0, 9.0, 3.0]);
    }
}
