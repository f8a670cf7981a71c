//! In-memory labeled dataset of quantized image tensors.

use crate::error::{Error, Result};
use crate::model::tensor::{Shape, Tensor};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledDataset {
    shape: Shape,
    images: Vec<Tensor>,
    labels: Vec<u16>,
}

impl LabeledDataset {
    pub fn new(images: Vec<Tensor>, labels: Vec<u16>) -> Result<Self> {
        if images.is_empty() {
            return Err(Error::usage("dataset must contain at least one image"));
        }
        if images.len() != labels.len() {
            return Err(Error::usage(format!(
                "{} images but {} labels",
                images.len(),
                labels.len()
            )));
        }
        let shape = images[0].shape();
        if let Some(bad) = images.iter().find(|t| t.shape() != shape) {
            return Err(Error::ShapeMismatch(format!(
                "mixed image shapes in dataset: {} vs {}",
                shape,
                bad.shape()
            )));
        }
        Ok(LabeledDataset {
            shape,
            images,
            labels,
        })
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn images(&self) -> &[Tensor] {
        &self.images
    }

    pub fn labels(&self) -> &[u16] {
        &self.labels
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Tensor, u16)> {
        self.images.iter().zip(self.labels.iter().copied())
    }

    /// First `n` records, for desk-scale runs; `n >= len` keeps everything.
    pub fn subset(&self, n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::usage("subset size must be positive"));
        }
        let n = n.min(self.len());
        LabeledDataset::new(self.images[..n].to_vec(), self.labels[..n].to_vec())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_empty_and_mismatched() {
        assert!(LabeledDataset::new(vec![], vec![]).is_err());
        let img = Tensor::filled(Shape::flat(2), 1);
        assert!(LabeledDataset::new(vec![img.clone()], vec![0, 1]).is_err());
        let other = Tensor::filled(Shape::flat(3), 1);
        assert!(LabeledDataset::new(vec![img, other], vec![0, 1]).is_err());
    }

    #[test]
    fn subset_is_a_prefix() {
        let imgs: Vec<Tensor> = (0..5).map(|i| Tensor::filled(Shape::flat(1), i)).collect();
        let ds = LabeledDataset::new(imgs, vec![0, 1, 2, 3, 4]).unwrap();
        let sub = ds.subset(3).unwrap();
        assert_eq!(sub.len(), 3);
        assert_eq!(sub.labels(), &[0, 1, 2]);
        assert_eq!(ds.subset(100).unwrap().len(), 5);
    }
}
