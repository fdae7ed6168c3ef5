use crate::error::{Error, Result};
use crate::imagization::GrayImage;
use crate::nn::Tensor;

pub const LABEL_BENIGN: u8 = 0;
pub const LABEL_RANSOMWARE: u8 = 1;

/// One labeled image: 0 = normal, 1 = ransomware.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub image: GrayImage,
    pub label: u8,
}

impl Sample {
    pub fn new(image: GrayImage, label: u8) -> Result<Self> {
        check_label(label)?;
        Ok(Self { image, label })
    }
}

pub fn check_label(label: u8) -> Result<()> {
    if label > LABEL_RANSOMWARE {
        return Err(Error::InvalidLabel(label));
    }
    Ok(())
}

/// Stacks images into a `[N, 1, side, side]` batch.
pub fn stack_images<'a>(images: impl IntoIterator<Item = &'a GrayImage>) -> Result<Tensor> {
    let mut side = None;
    let mut n = 0;
    let mut values = Vec::new();
    for img in images {
        match side {
            None => side = Some(img.side()),
            Some(s) if s != img.side() => {
                return Err(Error::ShapeMismatch(format!(
                    "batch mixes image sides {s} and {}",
                    img.side()
                )))
            }
            _ => {}
        }
        values.extend_from_slice(img.pixels());
        n += 1;
    }
    let side = side.ok_or(Error::EmptyDataset)?;
    Tensor::new(vec![n, 1, side, side], values)
}

/// One-hot `[N, 2]` encoding of binary labels.
pub fn one_hot(labels: &[u8]) -> Result<Tensor> {
    if labels.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut values = vec![0.0f32; labels.len() * 2];
    for (i, &l) in labels.iter().enumerate() {
        check_label(l)?;
        values[i * 2 + l as usize] = 1.0;
    }
    Tensor::new(vec![labels.len(), 2], values)
}
