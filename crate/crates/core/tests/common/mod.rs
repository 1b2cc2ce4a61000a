#![allow(dead_code)]

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rqvqa::features::Granularity;
use rqvqa::fusion::{Activation, ConcatLayout, FusionModel, InputNorm, LayoutEntry, LossKind, VideoInput};
use rqvqa::features::Role;

/// Pearson via pairwise differences: sum_ij (xi-xj)(yi-yj) / sqrt(...).
pub fn pairwise_pearson(x: &[f64], y: &[f64]) -> f64 {
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for i in 0..x.len() {
        for j in 0..x.len() {
            let dx = x[i] - x[j];
            let dy = y[i] - y[j];
            sxy += dx * dy;
            sxx += dx * dx;
            syy += dy * dy;
        }
    }
    sxy / (sxx * syy).sqrt()
}

/// 1-based average ranks by counting.
pub fn counting_ranks(x: &[f64]) -> Vec<f64> {
    x.iter()
        .map(|&v| {
            let below = x.iter().filter(|&&u| u < v).count() as f64;
            let equal = x.iter().filter(|&&u| u == v).count() as f64;
            below + (equal + 1.0) / 2.0
        })
        .collect()
}

pub fn counting_spearman(x: &[f64], y: &[f64]) -> f64 {
    pairwise_pearson(&counting_ranks(x), &counting_ranks(y))
}

pub fn layout(dims: &[usize], tokens: Option<(usize, usize)>) -> ConcatLayout {
    let mut entries: Vec<LayoutEntry> = dims
        .iter()
        .enumerate()
        .map(|(k, &d)| LayoutEntry {
            name: format!("src{k}"),
            role: Role::Spatial,
            granularity: Granularity::KeyFrame,
            dim: d,
            token_count: 0,
        })
        .collect();
    if let Some((t, d)) = tokens {
        entries.push(LayoutEntry {
            name: "tok".into(),
            role: Role::Spatial,
            granularity: Granularity::Tokens,
            dim: d,
            token_count: t,
        });
    }
    ConcatLayout::new(entries).unwrap()
}

/// Random per-video input with `nz` key frames matching `layout`.
pub fn random_input(layout: &ConcatLayout, nz: usize, rng: &mut ChaCha8Rng) -> VideoInput {
    let d = layout.total_dim();
    let token = layout.token_entry().map(|(e, r)| (e.token_count, e.dim, r));
    let rows = (0..nz)
        .map(|_| {
            let mut row: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
            if let Some((_, _, r)) = &token {
                row[r.clone()].iter_mut().for_each(|v| *v = 0.0);
            }
            row
        })
        .collect();
    let tokens = token.map(|(t, dim, _)| {
        (0..nz)
            .map(|_| DMatrix::from_fn(t, dim, |_, _| rng.random_range(-1.0..1.0)))
            .collect()
    });
    VideoInput { rows, tokens }
}

/// Random model with a non-trivial input normalisation.
pub fn random_model(
    layout: &ConcatLayout,
    hidden: usize,
    activation: Activation,
    heads: Option<usize>,
    seed: u64,
) -> FusionModel {
    let mut m = FusionModel::init(layout.clone(), hidden, activation, heads, seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xABCD);
    let d = layout.total_dim();
    m.norm = InputNorm {
        shift: (0..d).map(|_| rng.random_range(-0.2..0.2)).collect(),
        scale: (0..d).map(|_| rng.random_range(0.5..2.0)).collect(),
    };
    m
}

/// Central finite differences of the batch loss over every parameter.
pub fn numeric_grad(model: &FusionModel, batch: &[(&VideoInput, f64)], loss: LossKind, h: f64) -> Vec<f64> {
    let base = model.parameters();
    let mut m = model.clone();
    let mut out = Vec::with_capacity(base.len());
    let mut p = base.clone();
    for k in 0..base.len() {
        p[k] = base[k] + h;
        m.set_parameters(&p).unwrap();
        let up = m.batch_loss(batch, loss).unwrap();
        p[k] = base[k] - h;
        m.set_parameters(&p).unwrap();
        let down = m.batch_loss(batch, loss).unwrap();
        p[k] = base[k];
        out.push((up - down) / (2.0 * h));
    }
    out
}

/// Gradient entries smaller than this are compared in absolute terms.
pub const GRAD_FLOOR: f64 = 1e-4;

/// max_k |a_k - n_k| / max(|a_k|, |n_k|, GRAD_FLOOR).
pub fn max_rel_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(GRAD_FLOOR))
        .fold(0.0, f64::max)
}

/// One seeded gradient-check instance; returns the max relative error.
pub fn gradient_instance(seed: u64, with_tokens: bool) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dims: Vec<usize> = (0..rng.random_range(1..4)).map(|_| rng.random_range(1..6)).collect();
    let tokens = with_tokens.then(|| (rng.random_range(1..5), 2 * rng.random_range(1..4)));
    let layout = layout(&dims, tokens);
    let activation = if seed.is_multiple_of(2) { Activation::Tanh } else { Activation::Relu };
    let heads = tokens.map(|(_, d)| if d % 4 == 0 { 2 } else { 1 });
    let model = random_model(&layout, rng.random_range(2..7), activation, heads, seed);
    let n = rng.random_range(2..7);
    let inputs: Vec<VideoInput> = (0..n)
        .map(|_| {
            let nz = rng.random_range(1..4);
            random_input(&layout, nz, &mut rng)
        })
        .collect();
    let batch: Vec<(&VideoInput, f64)> = inputs.iter().map(|x| (x, rng.random_range(1.0..5.0))).collect();
    let (_, analytic) = model.backprop(&batch, LossKind::Plcc).unwrap();
    let numeric = numeric_grad(&model, &batch, LossKind::Plcc, 1e-6);
    max_rel_error(&analytic, &numeric)
}
