use std::path::Path;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Serialize};
use satstereo_tensor::{Scalar, Tensor};

use crate::data::{DomainDescriptor, NormalizationStats};
use crate::error::{Result, StereoError};
use crate::model::{ModelConfig, StereoModel};

use super::config::Manner;

const FORMAT: u32 = 1;

/// A parameter stored as base64 little-endian `f64` values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StoredTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Checkpoint {
    pub format: u32,
    pub model: ModelConfig,
    /// Statistics of the training split the inputs were normalized with.
    pub stats: Option<NormalizationStats>,
    pub train_domain: Option<DomainDescriptor>,
    pub manner: Option<Manner>,
    pub epoch: Option<usize>,
    pub parameters: Vec<StoredTensor>,
}

fn encode<T: Scalar>(t: &Tensor<T>) -> String {
    let bytes: Vec<u8> = t.data().iter().flat_map(|v| v.to_f64_lossy().to_le_bytes()).collect();
    STANDARD.encode(bytes)
}

fn decode<T: Scalar>(s: &StoredTensor) -> Result<Tensor<T>> {
    let bytes = STANDARD.decode(&s.data).map_err(|e| StereoError::Checkpoint(format!("parameter {}: {e}", s.name)))?;
    let n: usize = s.shape.iter().product();
    if bytes.len() != 8 * n {
        return Err(StereoError::Checkpoint(format!("parameter {} holds {} bytes for shape {:?}", s.name, bytes.len(), s.shape)));
    }
    let data = bytes.chunks_exact(8).map(|c| T::lit(f64::from_le_bytes(c.try_into().expect("chunk of 8")))).collect();
    Ok(Tensor::new(s.shape.clone(), data))
}

impl Checkpoint {
    pub fn from_model<T: Scalar>(model: &StereoModel<T>) -> Self {
        let parameters = model
            .params()
            .iter()
            .map(|(name, t)| StoredTensor { name: name.to_string(), shape: t.shape().to_vec(), data: encode(t) })
            .collect();
        Checkpoint { format: FORMAT, model: model.config().clone(), stats: None, train_domain: None, manner: None, epoch: None, parameters }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        std::fs::write(path, serde_json::to_vec(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| StereoError::Load { path: path.to_path_buf(), detail: e.to_string() })?;
        let c: Checkpoint = serde_json::from_slice(&bytes).map_err(|e| StereoError::Load { path: path.to_path_buf(), detail: e.to_string() })?;
        if c.format != FORMAT {
            return Err(StereoError::Load { path: path.to_path_buf(), detail: format!("unsupported checkpoint format {}", c.format) });
        }
        Ok(c)
    }

    /// Copies the stored values into `model`, which must share names and shapes.
    pub fn apply<T: Scalar>(&self, model: &mut StereoModel<T>) -> Result<()> {
        let names = model.params().names();
        if names.len() != self.parameters.len() || names.iter().zip(&self.parameters).any(|(a, b)| *a != b.name) {
            return Err(StereoError::Checkpoint("parameter names do not match the model".into()));
        }
        let values = self.parameters.iter().map(decode).collect::<Result<Vec<_>>>()?;
        model.params_mut().load_values(values).map_err(StereoError::Checkpoint)
    }

    /// A fresh model built from the stored configuration.
    pub fn restore<T: Scalar>(&self) -> Result<StereoModel<T>> {
        let mut model = StereoModel::new(self.model.clone(), 0)?;
        self.apply(&mut model)?;
        Ok(model)
    }
}

/// Starts `model` from a checkpoint of the same family and configuration.
/// Returns the id of the statistics the checkpoint was trained with; the
/// optimizer state is not part of a checkpoint and starts fresh.
pub fn pretrain_load<T: Scalar>(model: &mut StereoModel<T>, checkpoint: &Checkpoint) -> Result<Option<String>> {
    if checkpoint.model.family != model.family() {
        return Err(StereoError::Checkpoint(format!(
            "checkpoint holds a {} model, the configuration asks for {}",
            checkpoint.model.family,
            model.family()
        )));
    }
    if checkpoint.model != *model.config() {
        return Err(StereoError::Checkpoint("checkpoint model configuration differs from the run configuration".into()));
    }
    checkpoint.apply(model)?;
    Ok(checkpoint.stats.as_ref().map(|s| s.dataset_id.clone()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Family;

    #[test]
    fn round_trip_is_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        for fam in [Family::Cascade, Family::Pam] {
            let m = StereoModel::<f32>::new(ModelConfig::desk(fam), 4).unwrap();
            Checkpoint::from_model(&m).save(&path).unwrap();
            let back: StereoModel<f32> = Checkpoint::load(&path).unwrap().restore().unwrap();
            assert_eq!(m.params().values(), back.params().values());
            let m64 = StereoModel::<f64>::new(ModelConfig::desk(fam), 4).unwrap();
            let back: StereoModel<f64> = Checkpoint::from_model(&m64).restore().unwrap();
            assert_eq!(m64.params().values(), back.params().values());
        }
    }

    #[test]
    fn family_mismatch_is_rejected() {
        let cascade = StereoModel::<f32>::new(ModelConfig::desk(Family::Cascade), 1).unwrap();
        let mut pam = StereoModel::<f32>::new(ModelConfig::desk(Family::Pam), 1).unwrap();
        let err = pretrain_load(&mut pam, &Checkpoint::from_model(&cascade)).unwrap_err();
        assert!(err.to_string().contains("cascade"));
    }

    #[test]
    fn pretrain_load_reports_stats_id() {
        let a = StereoModel::<f32>::new(ModelConfig::desk(Family::Cascade), 1).unwrap();
        let mut b = StereoModel::<f32>::new(ModelConfig::desk(Family::Cascade), 2).unwrap();
        let mut c = Checkpoint::from_model(&a);
        c.stats = Some(NormalizationStats { dataset_id: "synthetic".into(), mean: vec![0.5], variance: vec![0.1], sample_count: 3 });
        assert_eq!(pretrain_load(&mut b, &c).unwrap().as_deref(), Some("synthetic"));
        assert_eq!(a.params().values(), b.params().values());
    }

    #[test]
    fn corrupt_payload_is_an_error() {
        let m = StereoModel::<f32>::new(ModelConfig::desk(Family::Cascade), 1).unwrap();
        let mut c = Checkpoint::from_model(&m);
        c.parameters[0].data = "AAAA".into();
        assert!(c.restore::<f32>().is_err());
    }
}
