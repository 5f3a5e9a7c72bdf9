use candle_core::{Device, Tensor};

use crate::error::{Error, Result};
use crate::geodata::{LabelMask, UNLABELED};
use crate::model::log_softmax_channels;

/// Masked loss value and the number of pixels it averages over.
#[derive(Debug, Clone)]
pub struct MaskedLoss {
    /// Scalar tensor; exactly zero (with zero gradient) when `labeled == 0`.
    pub loss: Tensor,
    pub labeled: usize,
}

/// One-hot targets `(N, C, H, W)` with all-zero vectors at unlabeled pixels.
pub fn one_hot_targets(labels: &[&LabelMask], classes: usize, device: &Device) -> Result<(Tensor, usize)> {
    let Some(first) = labels.first() else {
        return Err(Error::InvalidArgument("empty label batch".into()));
    };
    let (w, h) = (first.width(), first.height());
    let mut data = vec![0f32; labels.len() * classes * w * h];
    let mut labeled = 0;
    for (b, mask) in labels.iter().enumerate() {
        if (mask.width(), mask.height()) != (w, h) {
            return Err(Error::ShapeMismatch("label masks in a batch differ in size".into()));
        }
        for (i, &code) in mask.as_slice().iter().enumerate() {
            if code == UNLABELED {
                continue;
            }
            if code as usize >= classes {
                return Err(Error::LabelOutOfRange { code, classes });
            }
            data[(b * classes + code as usize) * w * h + i] = 1.0;
            labeled += 1;
        }
    }
    Ok((Tensor::from_vec(data, (labels.len(), classes, h, w), device)?, labeled))
}

/// Mean negative log-likelihood over labeled pixels of `(N, C, H, W)`
/// logits. Unlabeled pixels contribute neither value nor gradient.
pub fn masked_cross_entropy(logits: &Tensor, labels: &[&LabelMask]) -> Result<MaskedLoss> {
    let (n, c, h, w) = logits.dims4()?;
    if labels.len() != n || labels.iter().any(|m| (m.width(), m.height()) != (w, h)) {
        return Err(Error::ShapeMismatch(format!(
            "logits {:?} do not match {} label masks",
            logits.dims(),
            labels.len()
        )));
    }
    let (targets, labeled) = one_hot_targets(labels, c, logits.device())?;
    let targets = targets.to_dtype(logits.dtype())?;
    let loss = if labeled == 0 {
        (logits.sum_all()? * 0.0)?
    } else {
        let nll = (log_softmax_channels(logits)? * targets)?.sum_all()?.neg()?;
        (nll / labeled as f64)?
    };
    Ok(MaskedLoss { loss, labeled })
}
