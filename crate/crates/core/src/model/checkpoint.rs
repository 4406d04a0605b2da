use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{CctConfig, CctModel, ModelError};
use crate::nn::{read_archive, write_archive, Archive, ArchiveHeader, Tensor};
use crate::speaker::PcaModel;

const PARAM_PREFIX: &str = "param/";

/// JSON header of a checkpoint archive.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub config: CctConfig,
    pub class_names: Vec<String>,
    /// `best` or `final`.
    pub tag: String,
    pub epoch: usize,
    /// Free-form caller data, e.g. the serialised training config.
    #[serde(default)]
    pub extra: String,
}

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub seed: u64,
    pub model: CctModel,
    pub pca: Option<PcaModel>,
}

fn row(v: &[f64]) -> Result<Tensor, ModelError> {
    Ok(Tensor::new(vec![1, v.len()], v.to_vec())?)
}

pub fn save_checkpoint(path: impl AsRef<Path>, ckpt: &Checkpoint) -> Result<(), ModelError> {
    if ckpt.meta.config != ckpt.model.config {
        return Err(ModelError::Checkpoint("metadata config differs from the model's".into()));
    }
    let meta = serde_json::to_string(&ckpt.meta).map_err(|e| ModelError::Checkpoint(e.to_string()))?;
    let mut entries: Vec<(String, Tensor)> = ckpt
        .model
        .params
        .iter()
        .map(|(name, t)| {
            let mut t = t.clone();
            t.grad = None;
            (format!("{PARAM_PREFIX}{name}"), t)
        })
        .collect();
    if let Some(p) = &ckpt.pca {
        let k = p.components.len();
        entries.push(("pca/mean".into(), row(&p.mean)?));
        entries.push((
            "pca/components".into(),
            Tensor::new(vec![k, p.mean.len()], p.components.concat())?,
        ));
        entries.push(("pca/eigenvalues".into(), row(&p.eigenvalues)?));
    }
    let archive = Archive {
        header: ArchiveHeader::new(ckpt.seed, meta),
        entries,
    };
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    write_archive(&mut w, &archive)?;
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint, ModelError> {
    let archive = read_archive(BufReader::new(std::fs::File::open(path)?))?;
    let meta: CheckpointMeta = serde_json::from_str(&archive.header.metadata)
        .map_err(|e| ModelError::Checkpoint(format!("metadata: {e}")))?;
    let mut model = CctModel::new(meta.config.clone(), archive.header.seed)?;

    let mut loaded = 0;
    for (name, t) in &archive.entries {
        let Some(pname) = name.strip_prefix(PARAM_PREFIX) else { continue };
        let id = model
            .params
            .id(pname)
            .ok_or_else(|| ModelError::Checkpoint(format!("unexpected parameter `{pname}`")))?;
        if model.params.get(id).shape() != t.shape() {
            return Err(ModelError::Checkpoint(format!(
                "parameter `{pname}` has shape {:?}, config implies {:?}",
                t.shape(),
                model.params.get(id).shape()
            )));
        }
        *model.params.get_mut(id) = t.clone();
        loaded += 1;
    }
    if loaded != model.params.len() {
        return Err(ModelError::Checkpoint(format!(
            "{loaded} of {} parameters present",
            model.params.len()
        )));
    }

    let pca = match (archive.get("pca/mean"), archive.get("pca/components"), archive.get("pca/eigenvalues")) {
        (Some(m), Some(c), Some(e)) => {
            let d = m.len();
            if c.len() % d != 0 {
                return Err(ModelError::Checkpoint("pca component size".into()));
            }
            Some(PcaModel {
                mean: m.data().to_vec(),
                components: c.data().chunks(d).map(<[f64]>::to_vec).collect(),
                eigenvalues: e.data().to_vec(),
            })
        }
        (None, None, None) => None,
        _ => return Err(ModelError::Checkpoint("incomplete pca entries".into())),
    };
    Ok(Checkpoint {
        meta,
        seed: archive.header.seed,
        model,
        pca,
    })
}
