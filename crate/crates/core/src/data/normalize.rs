use serde::{Deserialize, Serialize};

use super::MultimodalDataset;
use crate::error::{Error, Result};
use crate::numerics::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelRange {
    pub min: f64,
    pub max: f64,
}

/// Per-sensor, per-channel ranges recorded by [`normalize_minmax`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub sensors: Vec<(String, Vec<ChannelRange>)>,
}

impl Normalization {
    /// Maps normalized values of sensor `id` back to the original units.
    /// Constant channels come back as their constant.
    pub fn invert(&self, id: &str, data: &Tensor) -> Result<Tensor> {
        let ranges = &self
            .sensors
            .iter()
            .find(|(s, _)| s == id)
            .ok_or_else(|| Error::config(format!("no normalization recorded for sensor {id:?}")))?
            .1;
        let (n, c) = data.dims2()?;
        if c != ranges.len() {
            return Err(Error::dim(format!(
                "{c} channels against {} recorded ranges",
                ranges.len()
            )));
        }
        let mut out = data.values().to_vec();
        for row in out.chunks_exact_mut(c) {
            for (v, r) in row.iter_mut().zip(ranges) {
                *v = r.min + *v * (r.max - r.min);
            }
        }
        Tensor::matrix(n, c, out)
    }
}

/// Scales every channel of every sensor to `[0, 1]`. Constant channels map
/// to 0. Results are rounded to single precision, the dataset storage width.
pub fn normalize_minmax(ds: &MultimodalDataset) -> Result<(MultimodalDataset, Normalization)> {
    let mut sensors = ds.sensors().to_vec();
    let mut record = Vec::with_capacity(sensors.len());
    for s in &mut sensors {
        let c = s.dim();
        let mut ranges = vec![
            ChannelRange {
                min: f64::INFINITY,
                max: f64::NEG_INFINITY,
            };
            c
        ];
        for row in s.data.iter_rows() {
            for (r, &v) in ranges.iter_mut().zip(row) {
                r.min = r.min.min(v);
                r.max = r.max.max(v);
            }
        }
        for row in s.data.values_mut().chunks_exact_mut(c) {
            for (v, r) in row.iter_mut().zip(&ranges) {
                let span = r.max - r.min;
                *v = if span > 0.0 {
                    (((*v - r.min) / span) as f32 as f64).clamp(0.0, 1.0)
                } else {
                    0.0
                };
            }
        }
        record.push((s.id.clone(), ranges));
    }
    let out = MultimodalDataset::new(sensors, ds.labels().to_vec(), ds.n_classes())?;
    Ok((out, Normalization { sensors: record }))
}
