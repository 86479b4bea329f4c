//! Binary checkpoints: magic, version, a JSON header describing the
//! networks and training history, then every parameter as little-endian f64.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::TrainerConfig;
use super::history::TrainHistory;
use crate::error::{Error, Result};
use crate::models::{ModelParams, NetSpec, Network};
use crate::nn::{ParamStore, Tensor};

const MAGIC: &[u8; 8] = b"S4MTLCKP";
const VERSION: u32 = 1;
/// Refuse absurd header lengths before allocating.
const MAX_HEADER: u64 = 1 << 30;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ParamMeta {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct NetMeta {
    spec: NetSpec,
    params: Vec<ParamMeta>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    class_count: usize,
    config: TrainerConfig,
    theta: Option<NetMeta>,
    psi: Option<NetMeta>,
    history: TrainHistory,
}

/// Everything a checkpoint holds.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub class_count: usize,
    pub config: TrainerConfig,
    pub models: ModelParams,
    pub history: TrainHistory,
}

fn meta(net: &Network) -> NetMeta {
    NetMeta {
        spec: net.spec,
        params: net
            .params
            .iter()
            .map(|(name, t)| ParamMeta {
                name: name.to_string(),
                shape: t.shape().to_vec(),
            })
            .collect(),
    }
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    let header = Header {
        class_count: ckpt.class_count,
        config: ckpt.config.clone(),
        theta: ckpt.models.theta.as_ref().map(meta),
        psi: ckpt.models.psi.as_ref().map(meta),
        history: ckpt.history.clone(),
    };
    let json = serde_json::to_vec(&header)?;
    // Write next to the target and rename so a crash never leaves a torn file.
    let tmp = path.with_extension("tmp");
    {
        let mut w = BufWriter::new(File::create(&tmp)?);
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&(json.len() as u64).to_le_bytes())?;
        w.write_all(&json)?;
        for net in [&ckpt.models.theta, &ckpt.models.psi].into_iter().flatten() {
            for (_, t) in net.params.iter() {
                for v in t.data() {
                    w.write_all(&v.to_le_bytes())?;
                }
            }
        }
        w.flush()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

fn read_exact(r: &mut impl Read, buf: &mut [u8], what: &str) -> Result<()> {
    r.read_exact(buf)
        .map_err(|e| Error::Checkpoint(format!("truncated {what}: {e}")))
}

/// Rebuilds one network, checking the recorded layout against a freshly
/// initialized network of the same spec.
fn read_net(r: &mut impl Read, m: &NetMeta) -> Result<Network> {
    m.spec
        .validate()
        .map_err(|e| Error::Checkpoint(format!("bad network spec: {e}")))?;
    let template = Network::init(m.spec, 0)?;
    let expected: Vec<ParamMeta> = meta(&template).params;
    if expected != m.params {
        return Err(Error::Checkpoint("parameter layout does not match the network spec".into()));
    }
    let mut params = ParamStore::new();
    for p in &m.params {
        let len: usize = p.shape.iter().product();
        let mut bytes = vec![0u8; len * 8];
        read_exact(r, &mut bytes, "parameter data")?;
        let data = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        params.insert(p.name.clone(), Tensor::from_vec(&p.shape, data)?);
    }
    Ok(Network { spec: m.spec, params })
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 8];
    read_exact(&mut r, &mut magic, "magic")?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint(format!("{} is not a checkpoint", path.display())));
    }
    let mut word = [0u8; 4];
    read_exact(&mut r, &mut word, "version")?;
    let version = u32::from_le_bytes(word);
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let mut len = [0u8; 8];
    read_exact(&mut r, &mut len, "header length")?;
    let len = u64::from_le_bytes(len);
    if len > MAX_HEADER {
        return Err(Error::Checkpoint(format!("header length {len} is implausible")));
    }
    let mut json = vec![0u8; len as usize];
    read_exact(&mut r, &mut json, "header")?;
    let header: Header =
        serde_json::from_slice(&json).map_err(|e| Error::Checkpoint(format!("bad header: {e}")))?;
    let theta = header.theta.as_ref().map(|m| read_net(&mut r, m)).transpose()?;
    let psi = header.psi.as_ref().map(|m| read_net(&mut r, m)).transpose()?;
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(Error::Checkpoint("trailing bytes after parameter data".into()));
    }
    Ok(Checkpoint {
        class_count: header.class_count,
        config: header.config,
        models: ModelParams { theta, psi },
        history: header.history,
    })
}

/// Copies `source` into a network shaped like `template`, failing on any
/// mismatch in architecture or parameter layout.
pub fn restore_into(template: &Network, source: &Network) -> Result<Network> {
    if template.spec != source.spec || meta(template) != meta(source) {
        return Err(Error::Checkpoint("checkpoint does not match the requested architecture".into()));
    }
    Ok(source.clone())
}
