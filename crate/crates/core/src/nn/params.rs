use std::sync::Arc;

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl ParamEntry {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

/// Ordered `(name, shape)` descriptors over one flat buffer.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Layout {
    entries: Vec<ParamEntry>,
    total: usize,
}

impl Layout {
    pub fn builder() -> LayoutBuilder {
        LayoutBuilder::default()
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn total(&self) -> usize {
        self.total
    }

    pub fn get(&self, name: &str) -> Option<&ParamEntry> {
        self.entries.iter().find(|e| e.name == name)
    }
}

#[derive(Debug, Default)]
pub struct LayoutBuilder {
    entries: Vec<ParamEntry>,
    total: usize,
}

impl LayoutBuilder {
    pub fn push(mut self, name: impl Into<String>, shape: &[usize]) -> Self {
        let entry = ParamEntry {
            name: name.into(),
            shape: shape.to_vec(),
            offset: self.total,
        };
        self.total += entry.len();
        self.entries.push(entry);
        self
    }

    pub fn build(self) -> Layout {
        Layout {
            entries: self.entries,
            total: self.total,
        }
    }
}

/// All learnable parameters of one model in a single flat `f64` buffer.
///
/// The layout is shared and never changes after construction; vectors with
/// equal layouts can be combined elementwise.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    values: Vec<f64>,
    layout: Arc<Layout>,
}

impl ParamVector {
    pub fn zeros(layout: Arc<Layout>) -> Self {
        Self {
            values: vec![0.0; layout.total()],
            layout,
        }
    }

    pub fn from_values(layout: Arc<Layout>, values: Vec<f64>) -> Result<Self> {
        if values.len() != layout.total() {
            return Err(Error::config(format!(
                "parameter count {} does not match layout total {}",
                values.len(),
                layout.total()
            )));
        }
        Ok(Self { values, layout })
    }

    pub fn layout(&self) -> &Arc<Layout> {
        &self.layout
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn same_layout(&self, other: &ParamVector) -> bool {
        Arc::ptr_eq(&self.layout, &other.layout) || self.layout == other.layout
    }

    pub fn check_compatible(&self, other: &ParamVector) -> Result<()> {
        if self.same_layout(other) {
            Ok(())
        } else {
            Err(Error::config("parameter layouts differ"))
        }
    }

    pub fn slice(&self, name: &str) -> Option<&[f64]> {
        self.layout.get(name).map(|e| &self.values[e.range()])
    }

    pub fn slice_mut(&mut self, name: &str) -> Option<&mut [f64]> {
        let range = self.layout.get(name)?.range();
        Some(&mut self.values[range])
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn total_is_sum_of_shape_products() {
        let layout = Layout::builder()
            .push("w", &[3, 4])
            .push("b", &[3])
            .push("s", &[])
            .build();
        assert_eq!(layout.total(), 12 + 3 + 1);
        assert_eq!(layout.get("b").unwrap().range(), 12..15);
    }

    #[test]
    fn incompatible_layouts_are_rejected() {
        let a = ParamVector::zeros(Arc::new(Layout::builder().push("w", &[2]).build()));
        let b = ParamVector::zeros(Arc::new(Layout::builder().push("w", &[3]).build()));
        assert!(a.check_compatible(&b).is_err());
        assert!(a.check_compatible(&a.clone()).is_ok());
        assert!(ParamVector::from_values(a.layout().clone(), vec![0.0; 5]).is_err());
    }
}
