//! Correlation criteria, monotonic logistic mapping, and the challenge score.

use nalgebra::{Matrix4, Vector4};

use crate::error::{Error, Result};

/// Parameters of `f(x) = (b1 - b2) / (1 + exp(-(x - b3) / |b4|)) + b2`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FourPLParams {
    pub beta1: f64,
    pub beta2: f64,
    pub beta3: f64,
    pub beta4: f64,
}

impl FourPLParams {
    pub fn apply(&self, x: f64) -> f64 {
        let z = -(x - self.beta3) / self.beta4.abs();
        (self.beta1 - self.beta2) / (1.0 + z.exp()) + self.beta2
    }

    fn as_vector(&self) -> Vector4<f64> {
        Vector4::new(self.beta1, self.beta2, self.beta3, self.beta4)
    }

    fn from_vector(v: &Vector4<f64>) -> Self {
        Self {
            beta1: v[0],
            beta2: v[1],
            beta3: v[2],
            beta4: v[3],
        }
    }
}

pub fn apply_4pl(params: &FourPLParams, pred: &[f64]) -> Vec<f64> {
    pred.iter().map(|&x| params.apply(x)).collect()
}

fn check_pair(x: &[f64], y: &[f64]) -> Result<()> {
    if x.len() != y.len() {
        return Err(Error::Shape(format!("lengths differ: {} vs {}", x.len(), y.len())));
    }
    if x.len() < 2 {
        return Err(Error::InvalidInput(format!("need at least 2 samples, got {}", x.len())));
    }
    if let Some(v) = x.iter().chain(y).find(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("correlation input {v}")));
    }
    Ok(())
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    check_pair(x, y)?;
    let (mx, my) = (mean(x), mean(y));
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (&a, &b) in x.iter().zip(y) {
        let (da, db) = (a - mx, b - my);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    if sxx == 0.0 {
        return Err(Error::ZeroVariance("first argument is constant".into()));
    }
    if syy == 0.0 {
        return Err(Error::ZeroVariance("second argument is constant".into()));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// 1-based fractional ranks; tied values share the mean of their positions.
pub fn fractional_ranks(v: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..v.len()).collect();
    order.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut ranks = vec![0.0; v.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && v[order[j + 1]] == v[order[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    check_pair(x, y)?;
    pearson(&fractional_ranks(x), &fractional_ranks(y))
}

const FIT_MAX_ITERATIONS: usize = 200;
const FIT_REL_TOLERANCE: f64 = 1e-10;

fn sse(params: &FourPLParams, pred: &[f64], mos: &[f64]) -> f64 {
    pred.iter()
        .zip(mos)
        .map(|(&x, &y)| {
            let r = params.apply(x) - y;
            r * r
        })
        .sum()
}

/// Least-squares fit of the monotonic logistic by Levenberg-damped
/// Gauss-Newton. Returns the best parameters seen, also when the iteration
/// cap is reached.
pub fn fit_4pl(pred: &[f64], mos: &[f64]) -> Result<FourPLParams> {
    check_pair(pred, mos)?;
    if pred.len() < 5 {
        return Err(Error::InvalidInput(format!(
            "logistic fit needs at least 5 samples, got {}",
            pred.len()
        )));
    }
    let n = pred.len() as f64;
    let mp = mean(pred);
    let sd = (pred.iter().map(|v| (v - mp) * (v - mp)).sum::<f64>() / n).sqrt();
    if sd == 0.0 {
        return Err(Error::ZeroVariance("predictions are constant".into()));
    }
    let mut p = FourPLParams {
        beta1: mos.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        beta2: mos.iter().copied().fold(f64::INFINITY, f64::min),
        beta3: mp,
        beta4: sd / 4.0,
    };
    let mut cost = sse(&p, pred, mos);
    let mut lambda = 1e-3;
    for _ in 0..FIT_MAX_ITERATIONS {
        if cost == 0.0 {
            break;
        }
        let s = p.beta4.abs();
        let sign = if p.beta4 >= 0.0 { 1.0 } else { -1.0 };
        let mut jtj = Matrix4::<f64>::zeros();
        let mut jtr = Vector4::<f64>::zeros();
        for (&x, &y) in pred.iter().zip(mos) {
            let u = (x - p.beta3) / s;
            let g = 1.0 / (1.0 + (-u).exp());
            let dg = g * (1.0 - g);
            let a = p.beta1 - p.beta2;
            let j = Vector4::new(g, 1.0 - g, -a * dg / s, -a * dg * u / s * sign);
            let r = a * g + p.beta2 - y;
            jtj += j * j.transpose();
            jtr += j * r;
        }
        if !jtj.iter().chain(jtr.iter()).all(|v| v.is_finite()) {
            return Err(Error::Fit(format!("non-finite normal equations at {p:?}")));
        }
        let mut accepted = false;
        while lambda < 1e16 {
            let mut damped = jtj;
            for k in 0..4 {
                damped[(k, k)] += lambda * jtj[(k, k)].max(1e-12);
            }
            let step = match damped.lu().solve(&(-jtr)) {
                Some(s) if s.iter().all(|v| v.is_finite()) => s,
                _ => {
                    lambda *= 10.0;
                    continue;
                }
            };
            let candidate = FourPLParams::from_vector(&(p.as_vector() + step));
            let c = sse(&candidate, pred, mos);
            if candidate.beta4 != 0.0 && c.is_finite() && c <= cost {
                let rel = (cost - c) / cost.max(f64::MIN_POSITIVE);
                p = candidate;
                cost = c;
                lambda = (lambda / 10.0).max(1e-12);
                accepted = true;
                if rel < FIT_REL_TOLERANCE {
                    return Ok(p);
                }
                break;
            }
            lambda *= 10.0;
        }
        if !accepted {
            break;
        }
    }
    if !cost.is_finite() {
        return Err(Error::Fit(format!("non-finite residual at {p:?}")));
    }
    Ok(p)
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub n: usize,
    pub srcc: f64,
    pub plcc_raw: f64,
    /// Equals `plcc_raw` when the logistic fit failed.
    pub plcc_4pl: f64,
    pub fit: Option<FourPLParams>,
}

impl EvalReport {
    pub fn fit_failed(&self) -> bool {
        self.fit.is_none()
    }

    /// `key=value` lines as written by the `eval` command.
    pub fn to_key_values(&self) -> String {
        let mut s = format!(
            "srcc={:.6}\nplcc_raw={:.6}\nplcc_4pl={:.6}\n",
            self.srcc, self.plcc_raw, self.plcc_4pl
        );
        match &self.fit {
            Some(f) => {
                s += &format!(
                    "beta1={:.6}\nbeta2={:.6}\nbeta3={:.6}\nbeta4={:.6}\n",
                    f.beta1, f.beta2, f.beta3, f.beta4
                );
            }
            None => s += "fit_failed=1\n",
        }
        s += &format!("n={}\n", self.n);
        s
    }
}

pub fn evaluate(pred: &[f64], mos: &[f64]) -> Result<EvalReport> {
    let srcc = spearman(pred, mos)?;
    let plcc_raw = pearson(pred, mos)?;
    let (plcc_4pl, fit) = match fit_4pl(pred, mos) {
        Ok(f) => match pearson(&apply_4pl(&f, pred), mos) {
            Ok(r) => (r, Some(f)),
            Err(e) => {
                log::warn!("logistic mapping collapsed ({e}); reporting raw PLCC");
                (plcc_raw, None)
            }
        },
        Err(e) => {
            log::warn!("logistic fit failed ({e}); reporting raw PLCC");
            (plcc_raw, None)
        }
    };
    Ok(EvalReport {
        n: pred.len(),
        srcc,
        plcc_raw,
        plcc_4pl,
        fit,
    })
}

/// `0.45 srcc + 0.45 plcc + 0.05 rank1 + 0.05 rank2`. The rank terms are
/// opaque inputs in `[0, 1]`.
pub fn challenge_score(srcc: f64, plcc: f64, rank1: f64, rank2: f64) -> Result<f64> {
    for (name, v, lo) in [("srcc", srcc, -1.0), ("plcc", plcc, -1.0), ("rank1", rank1, 0.0), ("rank2", rank2, 0.0)] {
        if !(lo..=1.0).contains(&v) {
            return Err(Error::InvalidInput(format!("{name}={v} outside [{lo}, 1]")));
        }
    }
    Ok(0.45 * srcc + 0.45 * plcc + 0.05 * rank1 + 0.05 * rank2)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pearson_basics() {
        let x = [1.0, 2.0, 3.0, 4.0];
        let y2: Vec<f64> = x.iter().map(|v| 2.0 * v + 1.0).collect();
        assert!((pearson(&x, &y2).unwrap() - 1.0).abs() < 1e-15);
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        assert!((pearson(&x, &neg).unwrap() + 1.0).abs() < 1e-15);
        let r = pearson(&x, &[1.0, -1.0, 1.0, -1.0]).unwrap();
        // -2 / (sqrt(5) * 2)
        assert!((r - (-1.0 / 5f64.sqrt())).abs() < 1e-15);
        assert!((r + 0.4472).abs() < 1e-4);
        assert!(matches!(pearson(&x, &[2.0; 4]), Err(Error::ZeroVariance(_))));
        assert!(pearson(&x, &x[..3]).is_err());
    }

    #[test]
    fn spearman_with_ties() {
        let r = spearman(&[1.0, 2.0, 2.0, 3.0], &[1.0, 3.0, 2.0, 4.0]).unwrap();
        // ranks (1, 2.5, 2.5, 4) vs (1, 3, 2, 4): 4.5 / sqrt(4.5 * 5)
        assert!((r - 4.5 / (4.5f64 * 5.0).sqrt()).abs() < 1e-15);
        assert!((r - 0.9487).abs() < 1e-4);
        assert_eq!(fractional_ranks(&[3.0, 1.0, 3.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
        let x: Vec<f64> = (0..10).map(|v| v as f64).collect();
        let y: Vec<f64> = x.iter().map(|v| v.powi(3)).collect();
        assert_eq!(spearman(&x, &y).unwrap(), 1.0);
        let rev: Vec<f64> = x.iter().rev().copied().collect();
        assert_eq!(spearman(&x, &rev).unwrap(), -1.0);
    }

    #[test]
    fn logistic_exact_recovery() {
        let truth = FourPLParams {
            beta1: 4.6,
            beta2: 1.2,
            beta3: 0.3,
            beta4: 0.7,
        };
        let pred: Vec<f64> = (0..50).map(|i| -2.0 + 4.5 * i as f64 / 49.0).collect();
        let mos = apply_4pl(&truth, &pred);
        let fit = fit_4pl(&pred, &mos).unwrap();
        let mapped = apply_4pl(&fit, &pred);
        let rmse = (mapped.iter().zip(&mos).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / 50.0).sqrt();
        assert!(rmse < 1e-6, "rmse {rmse}");
    }

    #[test]
    fn logistic_nearly_identity() {
        let mos: Vec<f64> = (0..40).map(|i| 1.0 + 4.0 * i as f64 / 39.0).collect();
        let fit = fit_4pl(&mos, &mos).unwrap();
        let mapped = apply_4pl(&fit, &mos);
        let rmse = (mapped.iter().zip(&mos).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / 40.0).sqrt();
        assert!(rmse < 1e-3, "rmse {rmse} fit {fit:?}");
        assert!(pearson(&mapped, &mos).unwrap() >= 0.9999);
    }

    #[test]
    fn constant_prediction_cannot_be_fit() {
        assert!(fit_4pl(&[2.0; 6], &[1.0, 2.0, 3.0, 4.0, 5.0, 1.0]).is_err());
        assert!(fit_4pl(&[1.0, 2.0, 3.0, 4.0], &[1.0, 2.0, 3.0, 4.0]).is_err());
    }

    #[test]
    fn evaluate_identity_and_exp() {
        let mos: Vec<f64> = (0..30).map(|i| 1.0 + (i * 7 % 30) as f64 * 4.0 / 29.0).collect();
        let r = evaluate(&mos, &mos).unwrap();
        assert_eq!(r.srcc, 1.0);
        assert!((r.plcc_raw - 1.0).abs() < 1e-15);
        assert!((r.plcc_4pl - 1.0).abs() < 1e-6);

        let pred: Vec<f64> = mos.iter().map(|m| m.exp()).collect();
        let r = evaluate(&pred, &mos).unwrap();
        assert_eq!(r.srcc, 1.0);
        assert!(r.plcc_4pl > r.plcc_raw);
        let mapped = apply_4pl(r.fit.as_ref().unwrap(), &pred);
        assert_eq!(spearman(&mapped, &mos).unwrap(), r.srcc);
    }

    #[test]
    fn challenge_score_values() {
        assert_eq!(challenge_score(1.0, 1.0, 1.0, 1.0).unwrap(), 1.0);
        assert_eq!(challenge_score(0.9, 0.9, 0.0, 0.0).unwrap(), 0.81);
        assert!((challenge_score(0.926, 0.924, 1.0, 1.0).unwrap() - 0.9325).abs() < 1e-12);
        assert!(challenge_score(1.1, 0.9, 0.0, 0.0).is_err());
        assert!(challenge_score(0.9, 0.9, -0.1, 0.0).is_err());
    }

    #[test]
    fn report_key_values() {
        let mos: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let kv = evaluate(&mos, &mos).unwrap().to_key_values();
        for key in ["srcc=", "plcc_raw=", "plcc_4pl=", "beta1=", "beta4=", "n=10"] {
            assert!(kv.contains(key), "{kv}");
        }
    }
}
