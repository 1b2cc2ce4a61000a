use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::layout::{fill_fixed, ConcatLayout};
use super::loss::LossKind;
use super::mhsa::{MhsaCache, MhsaGrads, MhsaPool};
use super::mlp::{Activation, MlpCache, MlpGrads, MlpHead};
use crate::error::{Error, Result};
use crate::features::FeatureBundle;

/// Per-video model input in f64: fixed fused rows (token segment zeroed)
/// and, when the layout has a token source, one `T x d` grid per index.
#[derive(Clone, Debug, PartialEq)]
pub struct VideoInput {
    pub rows: Vec<Vec<f64>>,
    pub tokens: Option<Vec<DMatrix<f64>>>,
}

impl VideoInput {
    pub fn from_bundle(bundle: &FeatureBundle, layout: &ConcatLayout) -> Result<Self> {
        let nz = bundle.keyframe_count;
        if nz == 0 {
            return Err(Error::InvalidInput(format!("video {} has no key frames", bundle.video_id)));
        }
        let mut rows = Vec::with_capacity(nz);
        for i in 0..nz {
            let mut row = vec![0.0; layout.total_dim()];
            fill_fixed(bundle, layout, i, &mut row)?;
            rows.push(row);
        }
        let tokens = match layout.token_entry() {
            None => None,
            Some((entry, _)) => {
                let m = bundle
                    .get(&entry.name)
                    .ok_or_else(|| Error::MissingSources(vec![entry.name.clone()]))?;
                let t = entry.token_count;
                if m.cols != entry.dim || m.rows != nz * t {
                    return Err(Error::Shape(format!(
                        "token source {} is {}x{}, expected {}x{}",
                        entry.name,
                        m.rows,
                        m.cols,
                        nz * t,
                        entry.dim
                    )));
                }
                Some(
                    (0..nz)
                        .map(|i| {
                            let block = m.rows_slice(i * t, t);
                            DMatrix::from_row_iterator(t, entry.dim, block.iter().map(|&v| v as f64))
                        })
                        .collect(),
                )
            }
        };
        Ok(Self { rows, tokens })
    }

    pub fn keyframe_count(&self) -> usize {
        self.rows.len()
    }
}

/// Fixed affine standardisation applied to fused vectors before the MLP.
#[derive(Clone, Debug, PartialEq)]
pub struct InputNorm {
    pub shift: Vec<f64>,
    pub scale: Vec<f64>,
}

impl InputNorm {
    pub fn identity(dim: usize) -> Self {
        Self {
            shift: vec![0.0; dim],
            scale: vec![1.0; dim],
        }
    }

    /// Per-column mean and inverse standard deviation over every index of
    /// every input. Constant columns and the pooled token segment keep unit
    /// scale.
    pub fn fit<'a>(inputs: impl IntoIterator<Item = &'a VideoInput>, layout: &ConcatLayout) -> Self {
        let d = layout.total_dim();
        let mut sum = vec![0.0; d];
        let mut sq = vec![0.0; d];
        let mut n = 0usize;
        for input in inputs {
            for row in &input.rows {
                for (k, &v) in row.iter().enumerate() {
                    sum[k] += v;
                    sq[k] += v * v;
                }
                n += 1;
            }
        }
        let mut norm = Self::identity(d);
        if n == 0 {
            return norm;
        }
        let token_segment = layout.token_entry().map(|(_, r)| r);
        for k in 0..d {
            if token_segment.as_ref().is_some_and(|r| r.contains(&k)) {
                continue;
            }
            let mean = sum[k] / n as f64;
            let var = (sq[k] / n as f64 - mean * mean).max(0.0);
            let sd = var.sqrt();
            norm.shift[k] = mean;
            if sd > 1e-12 {
                norm.scale[k] = 1.0 / sd;
            }
        }
        norm
    }
}

/// Learnable head plus the fixed input standardisation.
#[derive(Clone, Debug, PartialEq)]
pub struct FusionModel {
    pub layout: ConcatLayout,
    pub norm: InputNorm,
    pub head: MlpHead,
    pub mhsa: Option<MhsaPool>,
}

struct IndexCache {
    x: Vec<f64>,
    mlp: MlpCache,
    mhsa: Option<MhsaCache>,
}

impl FusionModel {
    /// Seeded initialisation; attention parameters (if any) are drawn first.
    pub fn init(
        layout: ConcatLayout,
        hidden: usize,
        activation: Activation,
        mhsa_heads: Option<usize>,
        seed: u64,
    ) -> Result<Self> {
        if hidden == 0 {
            return Err(Error::Config("hidden width must be at least 1".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mhsa = match (layout.token_entry(), mhsa_heads) {
            (Some((e, _)), Some(h)) => Some(MhsaPool::init(e.dim, h, &mut rng)?),
            (Some((e, _)), None) => {
                return Err(Error::Config(format!(
                    "token source {} requires attention pooling (set mhsa_heads)",
                    e.name
                )))
            }
            (None, _) => None,
        };
        let head = MlpHead::init(layout.total_dim(), hidden, activation, &mut rng);
        let norm = InputNorm::identity(layout.total_dim());
        Ok(Self {
            layout,
            norm,
            head,
            mhsa,
        })
    }

    pub fn parameter_count(&self) -> usize {
        self.head.parameter_count() + self.mhsa.as_ref().map_or(0, |m| m.parameter_count())
    }

    /// Learnable parameters in a fixed order: W1, b1, W2, b2, then Wq, Wk,
    /// Wv, Wo when attention pooling is enabled.
    pub fn parameters(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.parameter_count());
        self.head.write_params(&mut out);
        if let Some(m) = &self.mhsa {
            m.write_params(&mut out);
        }
        out
    }

    pub fn set_parameters(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.parameter_count() {
            return Err(Error::Shape(format!(
                "{} parameters supplied, model has {}",
                flat.len(),
                self.parameter_count()
            )));
        }
        let k = self.head.read_params(flat);
        if let Some(m) = &mut self.mhsa {
            m.read_params(&flat[k..]);
        }
        Ok(())
    }

    fn check_input(&self, input: &VideoInput) -> Result<()> {
        if input.rows.is_empty() {
            return Err(Error::InvalidInput("video input has no key frames".into()));
        }
        if let Some(r) = input.rows.iter().find(|r| r.len() != self.layout.total_dim()) {
            return Err(Error::LayoutMismatch {
                expected: format!("{} fused dims", self.layout.total_dim()),
                found: format!("{} fused dims", r.len()),
            });
        }
        match (&self.mhsa, &input.tokens) {
            (Some(_), Some(t)) if t.len() == input.rows.len() => Ok(()),
            (None, None) => Ok(()),
            _ => Err(Error::Shape("token grids do not match the model's attention pooling".into())),
        }
    }

    fn index_forward(&self, input: &VideoInput, i: usize) -> Result<(f64, IndexCache)> {
        let mut x = input.rows[i].clone();
        let mut mhsa_cache = None;
        if let (Some(pool), Some(tokens)) = (&self.mhsa, &input.tokens) {
            let (pooled, cache) = pool.forward_cached(&tokens[i])?;
            let (_, seg) = self.layout.token_entry().expect("attention implies token segment");
            x[seg].copy_from_slice(pooled.as_slice());
            mhsa_cache = Some(cache);
        }
        for ((v, s), c) in x.iter_mut().zip(&self.norm.scale).zip(&self.norm.shift) {
            *v = (*v - c) * s;
        }
        let (q, mlp) = self.head.forward_cached(&x)?;
        Ok((
            q,
            IndexCache {
                x,
                mlp,
                mhsa: mhsa_cache,
            },
        ))
    }

    /// Per-index scores for one video.
    pub fn index_scores(&self, input: &VideoInput) -> Result<Vec<f64>> {
        self.check_input(input)?;
        (0..input.rows.len())
            .map(|i| self.index_forward(input, i).map(|(q, _)| q))
            .collect()
    }

    /// Video score: mean of the per-index scores.
    pub fn video_score(&self, input: &VideoInput) -> Result<f64> {
        pool_scores(&self.index_scores(input)?)
    }

    pub fn batch_loss(&self, batch: &[(&VideoInput, f64)], loss: LossKind) -> Result<f64> {
        let pred = batch
            .iter()
            .map(|(x, _)| self.video_score(x))
            .collect::<Result<Vec<_>>>()?;
        let target: Vec<f64> = batch.iter().map(|(_, y)| *y).collect();
        loss.value(&pred, &target)
    }

    /// Batch loss and its exact gradient with respect to [`Self::parameters`].
    pub fn backprop(&self, batch: &[(&VideoInput, f64)], loss: LossKind) -> Result<(f64, Vec<f64>)> {
        let mut pred = Vec::with_capacity(batch.len());
        let mut caches = Vec::with_capacity(batch.len());
        for (input, _) in batch {
            self.check_input(input)?;
            let mut scores = Vec::with_capacity(input.rows.len());
            let mut video_caches = Vec::with_capacity(input.rows.len());
            for i in 0..input.rows.len() {
                let (q, c) = self.index_forward(input, i)?;
                scores.push(q);
                video_caches.push(c);
            }
            pred.push(pool_scores(&scores)?);
            caches.push(video_caches);
        }
        let target: Vec<f64> = batch.iter().map(|(_, y)| *y).collect();
        let value = loss.value(&pred, &target)?;
        let dpred = loss.gradient(&pred, &target)?;

        let mut head_grads = MlpGrads::zeros(&self.head);
        let mut mhsa_grads = self.mhsa.as_ref().map(MhsaGrads::zeros);
        let token_seg = self.layout.token_entry().map(|(_, r)| r);
        for (video_caches, &dv) in caches.iter().zip(&dpred) {
            let dq = dv / video_caches.len() as f64;
            for c in video_caches {
                let dx = self.head.backward(&c.x, &c.mlp, dq, &mut head_grads);
                if let (Some(pool), Some(cache), Some(g), Some(seg)) =
                    (&self.mhsa, &c.mhsa, mhsa_grads.as_mut(), token_seg.clone())
                {
                    let scale = &self.norm.scale[seg.clone()];
                    let dpooled = DVector::from_iterator(
                        seg.len(),
                        dx.as_slice()[seg].iter().zip(scale).map(|(d, s)| d * s),
                    );
                    pool.backward(cache, &dpooled, g);
                }
            }
        }
        let mut flat = Vec::with_capacity(self.parameter_count());
        head_grads.write(&mut flat);
        if let Some(g) = &mhsa_grads {
            g.write(&mut flat);
        }
        Ok((value, flat))
    }
}

/// Arithmetic mean of per-index scores.
pub fn pool_scores(scores: &[f64]) -> Result<f64> {
    if scores.is_empty() {
        return Err(Error::InvalidInput("no scores to pool".into()));
    }
    if let Some(v) = scores.iter().find(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("score {v}")));
    }
    Ok(scores.iter().sum::<f64>() / scores.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pooling_is_mean() {
        assert_eq!(pool_scores(&[3.0]).unwrap(), 3.0);
        assert_eq!(pool_scores(&[1.0, 2.0, 3.0, 4.0]).unwrap(), 2.5);
        assert!(pool_scores(&[]).is_err());
        let a = [0.3, -1.5, 2.25, 7.0, 0.125];
        let b = [7.0, 0.125, 0.3, 2.25, -1.5];
        assert!((pool_scores(&a).unwrap() - pool_scores(&b).unwrap()).abs() < 1e-15);
    }
}
