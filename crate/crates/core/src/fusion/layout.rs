use std::ops::Range;

use crate::error::{Error, Result};
use crate::features::{FeatureBundle, Granularity, Registry, Role};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayoutEntry {
    pub name: String,
    pub role: Role,
    pub granularity: Granularity,
    /// Width of this segment in the fused vector.
    pub dim: usize,
    pub token_count: usize,
}

/// Ordered segments of the fused per-index feature vector: spatial,
/// temporal, LIQE, Q-Align, spatiotemporal; ties broken by source name.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConcatLayout {
    entries: Vec<LayoutEntry>,
    offsets: Vec<usize>,
    total_dim: usize,
}

impl ConcatLayout {
    pub fn new(mut entries: Vec<LayoutEntry>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::Config("layout has no entries".into()));
        }
        entries.sort_by(|a, b| (a.role, &a.name).cmp(&(b.role, &b.name)));
        if entries.iter().filter(|e| e.granularity == Granularity::Tokens).count() > 1 {
            return Err(Error::Config(
                "at most one token-grid source is supported".into(),
            ));
        }
        let mut offsets = Vec::with_capacity(entries.len());
        let mut total_dim = 0;
        for e in &entries {
            offsets.push(total_dim);
            total_dim += e.dim;
        }
        Ok(Self {
            entries,
            offsets,
            total_dim,
        })
    }

    pub fn from_registry(registry: &Registry) -> Result<Self> {
        Self::new(
            registry
                .iter()
                .map(|s| LayoutEntry {
                    name: s.name.clone(),
                    role: s.role,
                    granularity: s.granularity,
                    dim: s.dim,
                    token_count: s.token_count,
                })
                .collect(),
        )
    }

    pub fn entries(&self) -> &[LayoutEntry] {
        &self.entries
    }

    pub fn total_dim(&self) -> usize {
        self.total_dim
    }

    pub fn segment(&self, name: &str) -> Option<Range<usize>> {
        self.entries
            .iter()
            .zip(&self.offsets)
            .find(|(e, _)| e.name == name)
            .map(|(e, &o)| o..o + e.dim)
    }

    /// The token-grid entry and its segment, if any.
    pub fn token_entry(&self) -> Option<(&LayoutEntry, Range<usize>)> {
        self.entries
            .iter()
            .zip(&self.offsets)
            .find(|(e, _)| e.granularity == Granularity::Tokens)
            .map(|(e, &o)| (e, o..o + e.dim))
    }

    /// Human-readable descriptor used in mismatch errors.
    pub fn describe(&self) -> String {
        self.entries
            .iter()
            .map(|e| format!("{}:{}x{}", e.name, e.granularity.as_str(), e.dim))
            .collect::<Vec<_>>()
            .join(",")
    }
}

/// Fills every non-token segment of the fused vector for index `i`; token
/// segments are left zero.
pub(crate) fn fill_fixed(
    bundle: &FeatureBundle,
    layout: &ConcatLayout,
    i: usize,
    out: &mut [f64],
) -> Result<()> {
    if i >= bundle.keyframe_count {
        return Err(Error::InvalidInput(format!(
            "index {i} out of range for {} key frames",
            bundle.keyframe_count
        )));
    }
    for (entry, &offset) in layout.entries.iter().zip(&layout.offsets) {
        if entry.granularity == Granularity::Tokens {
            continue;
        }
        let m = bundle
            .get(&entry.name)
            .ok_or_else(|| Error::MissingSources(vec![entry.name.clone()]))?;
        if m.cols != entry.dim {
            return Err(Error::DimMismatch {
                source_name: entry.name.clone(),
                expected: entry.dim,
                found: m.cols,
            });
        }
        let row = match entry.granularity {
            Granularity::Video => 0,
            _ => i,
        };
        if row >= m.rows {
            return Err(Error::CountMismatch {
                source_name: entry.name.clone(),
                expected: row + 1,
                found: m.rows,
            });
        }
        for (o, &v) in out[offset..offset + entry.dim].iter_mut().zip(m.row(row)) {
            *o = v as f64;
        }
    }
    Ok(())
}

/// Fused feature vector for index `i`. Per-video sources are broadcast to
/// every index. Layouts with a token-grid source need attention pooling and
/// go through the fusion model instead.
pub fn concat_features(bundle: &FeatureBundle, layout: &ConcatLayout, i: usize) -> Result<Vec<f64>> {
    if let Some((e, _)) = layout.token_entry() {
        return Err(Error::InvalidInput(format!(
            "source {} is a token grid and needs attention pooling",
            e.name
        )));
    }
    let mut out = vec![0.0; layout.total_dim];
    fill_fixed(bundle, layout, i, &mut out)?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::{FeatureMatrix, FeatureSource};
    use std::collections::BTreeMap;

    fn bundle(nz: usize) -> FeatureBundle {
        let mut sources = BTreeMap::new();
        let fill = |rows: usize, cols: usize, base: f32| {
            FeatureMatrix::new(rows, cols, (0..rows * cols).map(|k| base + k as f32).collect()).unwrap()
        };
        sources.insert("pixelstats".to_string(), fill(nz, 16, 0.0));
        sources.insert("motionstats".to_string(), fill(nz, 8, 1000.0));
        sources.insert("fragmentstats".to_string(), fill(1, 16, 2000.0));
        FeatureBundle {
            video_id: "v".into(),
            keyframe_count: nz,
            sources,
        }
    }

    #[test]
    fn toy_layout_order_and_broadcast() {
        let layout = ConcatLayout::from_registry(&Registry::toy()).unwrap();
        assert_eq!(layout.total_dim(), 40);
        let names: Vec<_> = layout.entries().iter().map(|e| e.name.as_str()).collect();
        assert_eq!(names, ["pixelstats", "motionstats", "fragmentstats"]);
        let b = bundle(3);
        let rows: Vec<_> = (0..3).map(|i| concat_features(&b, &layout, i).unwrap()).collect();
        for r in &rows {
            assert_eq!(r[24..], rows[0][24..]);
        }
        for (i, r) in rows.iter().enumerate() {
            let motion: Vec<f64> = b.get("motionstats").unwrap().row(i).iter().map(|&v| v as f64).collect();
            assert_eq!(r[16..24], motion[..]);
            let pix: Vec<f64> = b.get("pixelstats").unwrap().row(i).iter().map(|&v| v as f64).collect();
            assert_eq!(r[..16], pix[..]);
        }
        assert!(concat_features(&b, &layout, 3).is_err());
        assert_eq!(concat_features(&bundle(1), &layout, 0).unwrap().len(), 40);
    }

    #[test]
    fn role_order_for_real_sources() {
        let reg = Registry::new([
            FeatureSource::fast_vqa(),
            FeatureSource::qalign(),
            FeatureSource::liqe(),
            FeatureSource::slowfast(),
            FeatureSource::swin_tokens(),
        ])
        .unwrap();
        let layout = ConcatLayout::from_registry(&reg).unwrap();
        let names: Vec<_> = layout.entries().iter().map(|e| e.name.as_str()).collect();
        assert_eq!(names, ["swin", "slowfast", "liqe", "qalign", "fastvqa"]);
        assert_eq!(layout.total_dim(), 1024 + 256 + 495 + 4096 + 768);
        assert_eq!(layout.segment("liqe").unwrap(), 1280..1775);
    }

    #[test]
    fn missing_source_errors() {
        let layout = ConcatLayout::from_registry(&Registry::toy()).unwrap();
        let mut b = bundle(2);
        b.sources.remove("motionstats");
        assert!(matches!(
            concat_features(&b, &layout, 0),
            Err(Error::MissingSources(_))
        ));
    }
}
