//! Checkpoint container: a ZIP holding `config.json`, `meta.json`, and one
//! FEAT1-encoded tensor per parameter tag under `tensors/`.

use std::fs::File;
use std::io::{Cursor, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use zip::write::SimpleFileOptions;
use zip::{CompressionMethod, DateTime, ZipArchive, ZipWriter};

use super::config::ModelConfig;
use super::net::SpeakerNet;
use super::params::ModelParams;
use crate::dataio::{decode_feat1, encode_feat1};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub params: ModelParams<f32>,
    pub iteration: u64,
    /// Free-form training metadata (vocabularies, task config, ...).
    pub extra: serde_json::Value,
}

#[derive(Serialize, Deserialize)]
struct Meta {
    iteration: u64,
    tensors: Vec<String>,
    #[serde(default)]
    extra: serde_json::Value,
}

fn tensor_entry(tag: &str) -> String {
    format!("tensors/{tag}.feat")
}

impl Checkpoint {
    pub fn from_net(net: &SpeakerNet<f32>, iteration: u64, extra: serde_json::Value) -> Self {
        Self {
            config: net.config().clone(),
            params: net.params().clone(),
            iteration,
            extra,
        }
    }

    pub fn to_net(&self) -> Result<SpeakerNet<f32>> {
        SpeakerNet::from_params(self.config.clone(), self.params.clone())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut zip = ZipWriter::new(Cursor::new(Vec::new()));
        let opts = SimpleFileOptions::default()
            .compression_method(CompressionMethod::Stored)
            .last_modified_time(DateTime::default());
        let write = |zip: &mut ZipWriter<Cursor<Vec<u8>>>, name: &str, data: &[u8]| -> Result<()> {
            zip.start_file(name, opts)?;
            zip.write_all(data).map_err(|e| Error::io(name, e))
        };
        write(&mut zip, "config.json", &serde_json::to_vec_pretty(&self.config)?)?;
        let meta = Meta {
            iteration: self.iteration,
            tensors: self.params.tags(),
            extra: self.extra.clone(),
        };
        write(&mut zip, "meta.json", &serde_json::to_vec_pretty(&meta)?)?;
        for p in self.params.iter() {
            write(&mut zip, &tensor_entry(&p.tag()), &encode_feat1(p.value.view()))?;
        }
        Ok(zip.finish()?.into_inner())
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut zip = ZipArchive::new(Cursor::new(bytes))?;
        let mut read = |name: &str| -> Result<Vec<u8>> {
            let mut f = zip.by_name(name)?;
            let mut buf = Vec::new();
            f.read_to_end(&mut buf).map_err(|e| Error::io(name, e))?;
            Ok(buf)
        };
        let config: ModelConfig = serde_json::from_slice(&read("config.json")?)?;
        let meta: Meta = serde_json::from_slice(&read("meta.json")?)?;
        let mut net = SpeakerNet::<f32>::new(config, 0)?;
        let expected = net.params().tags();
        if expected != meta.tensors {
            return Err(Error::data(
                "checkpoint tensor list does not match its model config",
            ));
        }
        for (i, tag) in expected.iter().enumerate() {
            let value = decode_feat1(&read(&tensor_entry(tag))?)?;
            let slot = &mut net.params_mut().get_mut(i).value;
            if slot.dim() != value.dim() {
                return Err(Error::data(format!(
                    "tensor {tag:?} has shape {:?}, expected {:?}",
                    value.dim(),
                    slot.dim()
                )));
            }
            *slot = value;
        }
        let config = net.config().clone();
        Ok(Self {
            config,
            params: net.into_params(),
            iteration: meta.iteration,
            extra: meta.extra,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let bytes = self.to_bytes()?;
        let mut f = File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&bytes).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}
