//! Co-registered multi-sensor datasets, file formats, normalization,
//! stratified splits and the synthetic heterogeneous-sensor generator.

mod mmds;
mod normalize;
mod split;
mod synth;
mod tabular;

pub use mmds::{decode_dataset, encode_dataset, load_binary, save_binary, MAGIC};
pub use normalize::{normalize_minmax, ChannelRange, Normalization};
pub use split::{stratified_split, Split};
pub use synth::{generate_synthetic, SynthConfig, ViewConfig};
pub use tabular::{load_csv, load_labels};

use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// One sensor's sample matrix, `N × dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct SensorData {
    pub id: String,
    pub data: Tensor,
}

impl SensorData {
    pub fn dim(&self) -> usize {
        self.data.cols()
    }
}

/// Aligned per-sample records across sensors plus integer class labels.
/// Row `i` of every sensor describes the same ground location.
#[derive(Debug, Clone, PartialEq)]
pub struct MultimodalDataset {
    sensors: Vec<SensorData>,
    labels: Vec<usize>,
    n_classes: usize,
}

impl MultimodalDataset {
    pub fn new(sensors: Vec<SensorData>, labels: Vec<usize>, n_classes: usize) -> Result<Self> {
        if sensors.is_empty() {
            return Err(Error::Validation("dataset without sensors".into()));
        }
        let n = labels.len();
        for s in &sensors {
            let (rows, cols) = s.data.dims2()?;
            if rows != n {
                return Err(Error::Alignment(format!(
                    "sensor {} has {rows} samples, labels have {n}",
                    s.id
                )));
            }
            if cols == 0 {
                return Err(Error::Validation(format!("sensor {} has zero width", s.id)));
            }
            if !s.data.all_finite() {
                return Err(Error::Validation(format!("sensor {} has non-finite values", s.id)));
            }
        }
        for (i, a) in sensors.iter().enumerate() {
            if sensors[..i].iter().any(|b| b.id == a.id) {
                return Err(Error::Validation(format!("duplicate sensor id {}", a.id)));
            }
        }
        if let Some((i, &l)) = labels.iter().enumerate().find(|(_, &l)| l >= n_classes) {
            return Err(Error::Validation(format!(
                "label {l} of sample {i} outside [0, {n_classes})"
            )));
        }
        Ok(Self {
            sensors,
            labels,
            n_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn sensors(&self) -> &[SensorData] {
        &self.sensors
    }

    pub fn sensor_ids(&self) -> Vec<&str> {
        self.sensors.iter().map(|s| s.id.as_str()).collect()
    }

    pub fn sensor(&self, id: &str) -> Result<&SensorData> {
        self.sensors.iter().find(|s| s.id == id).ok_or_else(|| {
            Error::config(format!(
                "no sensor {id:?}; dataset has {:?}",
                self.sensor_ids()
            ))
        })
    }

    /// Rows `indices` of sensor `id`.
    pub fn rows(&self, id: &str, indices: &[usize]) -> Result<Tensor> {
        self.sensor(id)?.data.select_rows(indices)
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.n_classes];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    /// Fails unless every feature lies in `[0, 1]`.
    pub fn check_unit_range(&self) -> Result<()> {
        for s in &self.sensors {
            if let Some(pos) = s.data.values().iter().position(|v| !(0.0..=1.0).contains(v)) {
                let c = s.dim();
                return Err(Error::Validation(format!(
                    "sensor {} sample {} channel {} = {} outside [0, 1]",
                    s.id,
                    pos / c,
                    pos % c,
                    s.data.values()[pos]
                )));
            }
        }
        Ok(())
    }

    /// Appends a sensor aligned with the existing samples.
    pub fn with_sensor(mut self, id: impl Into<String>, data: Tensor) -> Result<Self> {
        self.sensors.push(SensorData {
            id: id.into(),
            data,
        });
        Self::new(self.sensors, self.labels, self.n_classes)
    }

    /// A dataset restricted to the listed sensors, in that order.
    pub fn select_sensors(&self, ids: &[&str]) -> Result<Self> {
        let sensors = ids
            .iter()
            .map(|id| self.sensor(id).cloned())
            .collect::<Result<Vec<_>>>()?;
        Self::new(sensors, self.labels.clone(), self.n_classes)
    }

    /// Feature values rounded to single precision, the storage width of the
    /// binary format. After this a save/load round trip is exact.
    pub fn quantized(mut self) -> Self {
        for s in &mut self.sensors {
            s.data.values_mut().iter_mut().for_each(|v| *v = *v as f32 as f64);
        }
        self
    }
}
