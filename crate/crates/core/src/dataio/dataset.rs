use crate::error::{Error, Result};
use crate::imgfreq::ImageTensor;

/// An ordered list of labelled images that all share one shape.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    name: String,
    num_classes: usize,
    items: Vec<(ImageTensor, usize)>,
}

impl LabeledDataset {
    pub fn new(
        name: impl Into<String>,
        num_classes: usize,
        items: Vec<(ImageTensor, usize)>,
    ) -> Result<Self> {
        if num_classes == 0 {
            return Err(Error::invalid("num_classes must be positive"));
        }
        if let Some((first, _)) = items.first() {
            let dims = first.dims();
            for (i, (img, label)) in items.iter().enumerate() {
                if *label >= num_classes {
                    return Err(Error::invalid(format!(
                        "item {i}: label {label} out of range for {num_classes} classes"
                    )));
                }
                if img.dims() != dims {
                    return Err(Error::shape(format!(
                        "item {i}: dims {:?} differ from {:?}",
                        img.dims(),
                        dims
                    )));
                }
            }
        }
        Ok(Self {
            name: name.into(),
            num_classes,
            items,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn items(&self) -> &[(ImageTensor, usize)] {
        &self.items
    }

    pub fn image(&self, index: usize) -> &ImageTensor {
        &self.items[index].0
    }

    pub fn label(&self, index: usize) -> usize {
        self.items[index].1
    }

    pub fn labels(&self) -> Vec<usize> {
        self.items.iter().map(|(_, l)| *l).collect()
    }

    /// `(height, width, channels)` of the images, if any.
    pub fn image_dims(&self) -> Option<(usize, usize, usize)> {
        self.items.first().map(|(img, _)| img.dims())
    }

    /// First `limit` items (all of them when `limit` is `None`).
    pub fn truncated(mut self, limit: Option<usize>) -> Self {
        if let Some(n) = limit {
            self.items.truncate(n);
        }
        self
    }

    pub fn renamed(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    /// Applies `f` to every image, keeping labels and order.
    pub fn map_images(
        &self,
        name: impl Into<String>,
        f: impl Fn(&ImageTensor) -> Result<ImageTensor> + Sync,
    ) -> Result<Self> {
        use rayon::prelude::*;
        let items = self
            .items
            .par_iter()
            .map(|(img, label)| f(img).map(|out| (out, *label)))
            .collect::<Result<Vec<_>>>()?;
        Self::new(name, self.num_classes, items)
    }

    pub(crate) fn into_items(self) -> Vec<(ImageTensor, usize)> {
        self.items
    }
}
