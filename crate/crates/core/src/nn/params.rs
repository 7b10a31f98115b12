use super::NnError;

/// One named tensor inside a flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayoutEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
    pub len: usize,
}

impl LayoutEntry {
    pub fn new(name: impl Into<String>, shape: Vec<usize>, offset: usize) -> Self {
        let len = shape.iter().product();
        LayoutEntry {
            name: name.into(),
            shape,
            offset,
            len,
        }
    }
}

/// Ordered map from layer tensors to slices of the flat vector.
///
/// Entries must be contiguous, non-overlapping and cover the whole vector;
/// [`Layout::new`] enforces this at construction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    entries: Vec<LayoutEntry>,
    total_len: usize,
}

impl Layout {
    pub fn new(entries: Vec<LayoutEntry>) -> Result<Self, NnError> {
        let mut expected_offset = 0usize;
        for e in &entries {
            if e.len != e.shape.iter().product::<usize>() {
                return Err(NnError::InvalidLayout(format!(
                    "entry {}: len {} does not match shape {:?}",
                    e.name, e.len, e.shape
                )));
            }
            if e.offset != expected_offset {
                return Err(NnError::InvalidLayout(format!(
                    "entry {}: offset {} leaves a gap or overlap (expected {})",
                    e.name, e.offset, expected_offset
                )));
            }
            expected_offset += e.len;
        }
        Ok(Layout {
            entries,
            total_len: expected_offset,
        })
    }

    pub fn entries(&self) -> &[LayoutEntry] {
        &self.entries
    }

    pub fn total_len(&self) -> usize {
        self.total_len
    }

    pub fn entry(&self, name: &str) -> Option<&LayoutEntry> {
        self.entries.iter().find(|e| e.name == name)
    }
}

/// A flat, layout-tagged parameter (or gradient) vector.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    layout: Layout,
    values: Vec<f64>,
}

impl ParamVector {
    pub fn new(layout: Layout, values: Vec<f64>) -> Result<Self, NnError> {
        if values.len() != layout.total_len() {
            return Err(NnError::LengthMismatch {
                left: layout.total_len(),
                right: values.len(),
            });
        }
        Ok(ParamVector { layout, values })
    }

    pub fn zeros(layout: Layout) -> Self {
        let values = vec![0.0; layout.total_len()];
        ParamVector { layout, values }
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
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

    /// The slice for a named layout entry.
    pub fn slice(&self, name: &str) -> Option<&[f64]> {
        let e = self.layout.entry(name)?;
        Some(&self.values[e.offset..e.offset + e.len])
    }

    /// Copy values from `src`; layouts must be identical.
    pub fn copy_from(&mut self, src: &ParamVector) -> Result<(), NnError> {
        if self.layout != src.layout {
            return Err(NnError::LayoutMismatch);
        }
        self.values.copy_from_slice(&src.values);
        Ok(())
    }

    /// True when every value is bit-identical to `other`'s.
    pub fn bitwise_eq(&self, other: &ParamVector) -> bool {
        self.layout == other.layout
            && self.values.len() == other.values.len()
            && self
                .values
                .iter()
                .zip(other.values.iter())
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_rejects_gaps_and_overlaps() {
        let gap = Layout::new(vec![
            LayoutEntry::new("a", vec![2], 0),
            LayoutEntry::new("b", vec![2], 3),
        ]);
        assert!(gap.is_err());

        let overlap = Layout::new(vec![
            LayoutEntry::new("a", vec![2], 0),
            LayoutEntry::new("b", vec![2], 1),
        ]);
        assert!(overlap.is_err());
    }

    #[test]
    fn layout_total_is_sum_of_entries() {
        let layout = Layout::new(vec![
            LayoutEntry::new("w", vec![3, 2], 0),
            LayoutEntry::new("b", vec![3], 6),
        ])
        .unwrap();
        assert_eq!(layout.total_len(), 9);
    }

    #[test]
    fn copy_rejects_layout_mismatch() {
        let a = Layout::new(vec![LayoutEntry::new("w", vec![2], 0)]).unwrap();
        let b = Layout::new(vec![LayoutEntry::new("v", vec![2], 0)]).unwrap();
        let mut pa = ParamVector::zeros(a);
        let pb = ParamVector::zeros(b);
        assert!(matches!(
            pa.copy_from(&pb),
            Err(NnError::LayoutMismatch)
        ));
    }
}
