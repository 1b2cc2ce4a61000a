//! Batch losses over pooled video scores.

use crate::error::{Error, Result};

/// Added to each centred norm so near-constant batches stay finite.
pub const PLCC_EPS: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LossKind {
    Plcc,
    Mse,
    Mae,
}

impl LossKind {
    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "plcc" => LossKind::Plcc,
            "mse" => LossKind::Mse,
            "mae" => LossKind::Mae,
            other => return Err(Error::Config(format!("unknown loss {other:?}"))),
        })
    }

    pub fn as_str(self) -> &'static str {
        match self {
            LossKind::Plcc => "plcc",
            LossKind::Mse => "mse",
            LossKind::Mae => "mae",
        }
    }

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(c: u8) -> Result<Self> {
        Ok(match c {
            0 => LossKind::Plcc,
            1 => LossKind::Mse,
            2 => LossKind::Mae,
            other => return Err(Error::InvalidInput(format!("unknown loss code {other}"))),
        })
    }

    pub fn value(self, pred: &[f64], target: &[f64]) -> Result<f64> {
        match self {
            LossKind::Plcc => plcc_loss(pred, target),
            LossKind::Mse => {
                check(pred, target, 1)?;
                Ok(pred.iter().zip(target).map(|(p, t)| (p - t).powi(2)).sum::<f64>() / pred.len() as f64)
            }
            LossKind::Mae => {
                check(pred, target, 1)?;
                Ok(pred.iter().zip(target).map(|(p, t)| (p - t).abs()).sum::<f64>() / pred.len() as f64)
            }
        }
    }

    pub fn gradient(self, pred: &[f64], target: &[f64]) -> Result<Vec<f64>> {
        match self {
            LossKind::Plcc => plcc_loss_grad(pred, target),
            LossKind::Mse => {
                check(pred, target, 1)?;
                let n = pred.len() as f64;
                Ok(pred.iter().zip(target).map(|(p, t)| 2.0 * (p - t) / n).collect())
            }
            LossKind::Mae => {
                check(pred, target, 1)?;
                let n = pred.len() as f64;
                Ok(pred
                    .iter()
                    .zip(target)
                    .map(|(p, t)| {
                        let d = p - t;
                        if d > 0.0 {
                            1.0 / n
                        } else if d < 0.0 {
                            -1.0 / n
                        } else {
                            0.0
                        }
                    })
                    .collect())
            }
        }
    }
}

fn check(pred: &[f64], target: &[f64], min_len: usize) -> Result<()> {
    if pred.len() != target.len() {
        return Err(Error::Shape(format!(
            "prediction length {} != target length {}",
            pred.len(),
            target.len()
        )));
    }
    if pred.len() < min_len {
        return Err(Error::InvalidInput(format!(
            "loss needs at least {min_len} samples, got {}",
            pred.len()
        )));
    }
    if let Some(v) = pred.iter().chain(target).find(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("loss input {v}")));
    }
    Ok(())
}

fn centred(v: &[f64]) -> (Vec<f64>, f64) {
    let m = v.iter().sum::<f64>() / v.len() as f64;
    let c: Vec<f64> = v.iter().map(|x| x - m).collect();
    let norm = c.iter().map(|x| x * x).sum::<f64>().sqrt();
    (c, norm)
}

/// Stabilised Pearson correlation used by the loss.
fn stabilised_rho(pred: &[f64], target: &[f64]) -> (f64, Vec<f64>, f64, Vec<f64>, f64) {
    let (a, na) = centred(pred);
    let (b, nb) = centred(target);
    let s: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
    let rho = s / ((na + PLCC_EPS) * (nb + PLCC_EPS));
    (rho, a, na, b, nb)
}

/// `(1 - rho) / 2` where rho is the Pearson correlation of the batch.
pub fn plcc_loss(pred: &[f64], target: &[f64]) -> Result<f64> {
    check(pred, target, 2)?;
    let (rho, ..) = stabilised_rho(pred, target);
    Ok((1.0 - rho) / 2.0)
}

pub fn plcc_loss_grad(pred: &[f64], target: &[f64]) -> Result<Vec<f64>> {
    check(pred, target, 2)?;
    let (_, a, na, b, nb) = stabilised_rho(pred, target);
    let s: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
    let da = na + PLCC_EPS;
    let db = nb + PLCC_EPS;
    // Both a and b are centred, so the centring projection is a no-op here.
    let radial = if na > 0.0 { s / (da * da * db * na) } else { 0.0 };
    Ok(a.iter()
        .zip(&b)
        .map(|(&ai, &bi)| -0.5 * (bi / (da * db) - radial * ai))
        .collect())
}
