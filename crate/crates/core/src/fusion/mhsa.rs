//! Multi-head self-attention over a token grid followed by global average
//! pooling across tokens.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use super::mlp::uniform_matrix;
use crate::error::{Error, Result};

/// Projections are `d x d`; head `h` owns columns `h*d_h..(h+1)*d_h` of the
/// query, key and value projections.
#[derive(Clone, Debug, PartialEq)]
pub struct MhsaPool {
    pub heads: usize,
    pub wq: DMatrix<f64>,
    pub wk: DMatrix<f64>,
    pub wv: DMatrix<f64>,
    pub wo: DMatrix<f64>,
}

pub struct MhsaCache {
    x: DMatrix<f64>,
    q: DMatrix<f64>,
    k: DMatrix<f64>,
    v: DMatrix<f64>,
    /// Attention weights per head, `T x T`.
    attn: Vec<DMatrix<f64>>,
    o: DMatrix<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MhsaGrads {
    pub wq: DMatrix<f64>,
    pub wk: DMatrix<f64>,
    pub wv: DMatrix<f64>,
    pub wo: DMatrix<f64>,
}

impl MhsaGrads {
    pub fn zeros(p: &MhsaPool) -> Self {
        let d = p.dim();
        Self {
            wq: DMatrix::zeros(d, d),
            wk: DMatrix::zeros(d, d),
            wv: DMatrix::zeros(d, d),
            wo: DMatrix::zeros(d, d),
        }
    }

    pub(crate) fn write(&self, out: &mut Vec<f64>) {
        for m in [&self.wq, &self.wk, &self.wv, &self.wo] {
            out.extend_from_slice(m.as_slice());
        }
    }
}

fn softmax_rows(s: &mut DMatrix<f64>) {
    for mut row in s.row_iter_mut() {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        row.iter_mut().for_each(|v| *v = (*v - max).exp());
        let sum: f64 = row.iter().sum();
        row.iter_mut().for_each(|v| *v /= sum);
    }
}

impl MhsaPool {
    pub fn new(heads: usize, wq: DMatrix<f64>, wk: DMatrix<f64>, wv: DMatrix<f64>, wo: DMatrix<f64>) -> Result<Self> {
        let d = wq.nrows();
        if heads == 0 || !d.is_multiple_of(heads) {
            return Err(Error::Shape(format!("{heads} heads do not divide dim {d}")));
        }
        for m in [&wq, &wk, &wv, &wo] {
            if m.shape() != (d, d) {
                return Err(Error::Shape(format!("projection is {:?}, expected {d}x{d}", m.shape())));
            }
            if m.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("attention projection".into()));
            }
        }
        Ok(Self { heads, wq, wk, wv, wo })
    }

    pub fn init<R: Rng>(dim: usize, heads: usize, rng: &mut R) -> Result<Self> {
        let k = 1.0 / (dim as f64).sqrt();
        let wq = uniform_matrix(rng, dim, dim, k);
        let wk = uniform_matrix(rng, dim, dim, k);
        let wv = uniform_matrix(rng, dim, dim, k);
        let wo = uniform_matrix(rng, dim, dim, k);
        Self::new(heads, wq, wk, wv, wo)
    }

    pub fn dim(&self) -> usize {
        self.wq.nrows()
    }

    pub fn head_dim(&self) -> usize {
        self.dim() / self.heads
    }

    pub fn parameter_count(&self) -> usize {
        4 * self.dim() * self.dim()
    }

    pub fn forward(&self, tokens: &DMatrix<f64>) -> Result<DVector<f64>> {
        self.forward_cached(tokens).map(|(y, _)| y)
    }

    pub fn forward_cached(&self, tokens: &DMatrix<f64>) -> Result<(DVector<f64>, MhsaCache)> {
        let d = self.dim();
        if tokens.ncols() != d || tokens.nrows() == 0 {
            return Err(Error::Shape(format!(
                "token grid is {}x{}, expected Tx{d}",
                tokens.nrows(),
                tokens.ncols()
            )));
        }
        if tokens.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("token grid".into()));
        }
        let t = tokens.nrows();
        let dh = self.head_dim();
        let scale = 1.0 / (dh as f64).sqrt();
        let q = tokens * &self.wq;
        let k = tokens * &self.wk;
        let v = tokens * &self.wv;
        let mut o = DMatrix::zeros(t, d);
        let mut attn = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let cols = h * dh;
            let qh = q.columns(cols, dh);
            let kh = k.columns(cols, dh);
            let vh = v.columns(cols, dh);
            let mut s = qh * kh.transpose() * scale;
            softmax_rows(&mut s);
            o.columns_mut(cols, dh).copy_from(&(&s * vh));
            attn.push(s);
        }
        let y = &o * &self.wo;
        let pooled = y.row_mean().transpose();
        Ok((
            pooled,
            MhsaCache {
                x: tokens.clone(),
                q,
                k,
                v,
                attn,
                o,
            },
        ))
    }

    /// Accumulates parameter gradients for upstream gradient `g` on the
    /// pooled output.
    pub fn backward(&self, cache: &MhsaCache, g: &DVector<f64>, grads: &mut MhsaGrads) {
        let t = cache.x.nrows();
        let d = self.dim();
        let dh = self.head_dim();
        let scale = 1.0 / (dh as f64).sqrt();
        // dY: every row equals g / T.
        let dy_row = g.transpose() / t as f64;
        let dy = DMatrix::from_fn(t, d, |_, c| dy_row[c]);
        grads.wo += cache.o.transpose() * &dy;
        let d_o = &dy * self.wo.transpose();
        let mut dq = DMatrix::zeros(t, d);
        let mut dk = DMatrix::zeros(t, d);
        let mut dv = DMatrix::zeros(t, d);
        for (h, a) in cache.attn.iter().enumerate() {
            let cols = h * dh;
            let doh = d_o.columns(cols, dh);
            let vh = cache.v.columns(cols, dh);
            let da = doh * vh.transpose();
            dv.columns_mut(cols, dh).copy_from(&(a.transpose() * doh));
            let mut ds = a.component_mul(&da);
            for r in 0..t {
                let row_dot: f64 = ds.row(r).sum();
                for c in 0..t {
                    ds[(r, c)] -= a[(r, c)] * row_dot;
                }
            }
            ds *= scale;
            dq.columns_mut(cols, dh)
                .copy_from(&(&ds * cache.k.columns(cols, dh)));
            dk.columns_mut(cols, dh)
                .copy_from(&(ds.transpose() * cache.q.columns(cols, dh)));
        }
        let xt = cache.x.transpose();
        grads.wq += &xt * dq;
        grads.wk += &xt * dk;
        grads.wv += &xt * dv;
    }

    pub(crate) fn write_params(&self, out: &mut Vec<f64>) {
        for m in [&self.wq, &self.wk, &self.wv, &self.wo] {
            out.extend_from_slice(m.as_slice());
        }
    }

    pub(crate) fn read_params(&mut self, src: &[f64]) -> usize {
        let mut k = 0;
        for m in [&mut self.wq, &mut self.wk, &mut self.wv, &mut self.wo] {
            let n = m.len();
            m.as_mut_slice().copy_from_slice(&src[k..k + n]);
            k += n;
        }
        k
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_tokens(t: usize, d: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DMatrix::from_fn(t, d, |_, _| rng.random_range(-1.0..1.0))
    }

    /// Step-by-step attention with plain loops over Vec<Vec<f64>>.
    fn dense_oracle(p: &MhsaPool, x: &DMatrix<f64>) -> Vec<f64> {
        let (t, d) = x.shape();
        let dh = d / p.heads;
        let proj = |w: &DMatrix<f64>| -> Vec<Vec<f64>> {
            (0..t)
                .map(|i| (0..d).map(|j| (0..d).map(|k| x[(i, k)] * w[(k, j)]).sum()).collect())
                .collect()
        };
        let (q, k, v) = (proj(&p.wq), proj(&p.wk), proj(&p.wv));
        let mut o = vec![vec![0.0; d]; t];
        for h in 0..p.heads {
            for i in 0..t {
                let scores: Vec<f64> = (0..t)
                    .map(|j| (0..dh).map(|c| q[i][h * dh + c] * k[j][h * dh + c]).sum::<f64>() / (dh as f64).sqrt())
                    .collect();
                let m = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let e: Vec<f64> = scores.iter().map(|s| (s - m).exp()).collect();
                let z: f64 = e.iter().sum();
                for c in 0..dh {
                    o[i][h * dh + c] = (0..t).map(|j| e[j] / z * v[j][h * dh + c]).sum();
                }
            }
        }
        (0..d)
            .map(|j| (0..t).map(|i| (0..d).map(|k| o[i][k] * p.wo[(k, j)]).sum::<f64>()).sum::<f64>() / t as f64)
            .collect()
    }

    #[test]
    fn matches_dense_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = MhsaPool::init(8, 2, &mut rng).unwrap();
        let x = random_tokens(4, 8, 9);
        let y = p.forward(&x).unwrap();
        let o = dense_oracle(&p, &x);
        for (a, b) in y.iter().zip(&o) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn single_token_is_value_projection() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let p = MhsaPool::init(6, 3, &mut rng).unwrap();
        let x = random_tokens(1, 6, 1);
        let expected = (&x * &p.wv * &p.wo).transpose();
        let y = p.forward(&x).unwrap();
        assert!((y - &expected).amax() < 1e-12);

        let repeated = DMatrix::from_fn(5, 6, |_, c| x[(0, c)]);
        assert!((p.forward(&repeated).unwrap() - expected).amax() < 1e-12);
    }

    #[test]
    fn token_permutation_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = MhsaPool::init(8, 4, &mut rng).unwrap();
        let x = random_tokens(6, 8, 2);
        let perm = [3, 0, 5, 1, 4, 2];
        let xp = DMatrix::from_fn(6, 8, |r, c| x[(perm[r], c)]);
        assert!((p.forward(&x).unwrap() - p.forward(&xp).unwrap()).amax() < 1e-12);
    }

    #[test]
    fn shape_errors() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        assert!(MhsaPool::init(6, 4, &mut rng).is_err());
        let p = MhsaPool::init(6, 2, &mut rng).unwrap();
        assert!(p.forward(&random_tokens(3, 5, 0)).is_err());
    }
}
