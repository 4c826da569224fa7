//! DCN1 checkpoints.
//!
//! Layout (little-endian):
//!
//! ```text
//! "DCN1"  version:u32  config_len:u32  config:UTF-8 "key=value\n" lines
//! repeated per parameter: name_len:u16  name:UTF-8  tensor:TNSR
//! ```
//!
//! The config block holds the `network.*` keys plus any caller metadata.
//! Velocity buffers are not stored; a loaded network starts with zero velocity.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use super::{Network, NetworkConfig};
use crate::error::{Error, Result};
use crate::tensor::{read_tensor, write_tensor, Tensor};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"DCN1";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub network: Network,
    /// Non-network keys from the config block.
    pub metadata: BTreeMap<String, String>,
}

pub fn write_checkpoint<W: Write>(
    w: &mut W,
    net: &Network,
    metadata: &BTreeMap<String, String>,
) -> std::io::Result<()> {
    let mut block = String::new();
    for (k, v) in net.config().to_kv() {
        block.push_str(&format!("{k}={v}\n"));
    }
    for (k, v) in metadata {
        assert!(
            !k.starts_with("network.") && !k.contains(['=', '\n']) && !v.contains('\n'),
            "invalid checkpoint metadata key {k:?}"
        );
        block.push_str(&format!("{k}={v}\n"));
    }
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    w.write_all(&(block.len() as u32).to_le_bytes())?;
    w.write_all(block.as_bytes())?;
    for (name, t) in net.param_names().iter().zip(net.params()) {
        w.write_all(&(name.len() as u16).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        write_tensor(w, t)?;
    }
    Ok(())
}

fn read_exact<R: Read>(r: &mut R, n: usize, field: &str) -> Result<Vec<u8>> {
    let mut buf = vec![0u8; n];
    r.read_exact(&mut buf)
        .map_err(|e| Error::format(field, format!("truncated ({e})")))?;
    Ok(buf)
}

pub fn read_checkpoint<R: Read>(r: &mut R) -> Result<Checkpoint> {
    let magic = read_exact(r, 4, "magic")?;
    if magic != CHECKPOINT_MAGIC {
        return Err(Error::format(
            "magic",
            format!("expected {:?}, found {:?}", CHECKPOINT_MAGIC, magic),
        ));
    }
    let version = u32::from_le_bytes(read_exact(r, 4, "version")?.try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(Error::format(
            "version",
            format!("unsupported version {version}, expected {CHECKPOINT_VERSION}"),
        ));
    }
    let len = u32::from_le_bytes(read_exact(r, 4, "config length")?.try_into().unwrap());
    let block = String::from_utf8(read_exact(r, len as usize, "config")?)
        .map_err(|_| Error::format("config", "not valid UTF-8"))?;

    let mut all = BTreeMap::new();
    for line in block.lines().filter(|l| !l.is_empty()) {
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::format("config", format!("line without '=': {line:?}")))?;
        all.insert(k.to_string(), v.to_string());
    }
    let config = NetworkConfig::from_kv(&all)
        .map_err(|e| Error::format("config", e.to_string()))?;
    config
        .shape_trace()
        .map_err(|e| Error::format("config", e.to_string()))?;
    let metadata = all
        .into_iter()
        .filter(|(k, _)| !k.starts_with("network."))
        .collect();

    let expected = expected_param_count(&config);
    let mut params = Vec::with_capacity(expected);
    for i in 0..expected {
        let field = format!("parameter record {i}");
        let n = u16::from_le_bytes(read_exact(r, 2, &field)?.try_into().unwrap());
        let name = String::from_utf8(read_exact(r, n as usize, &field)?)
            .map_err(|_| Error::format(&field, "name is not valid UTF-8"))?;
        let t: Tensor = read_tensor(r).map_err(|e| match e {
            Error::Format { field: f, message } => Error::format(format!("{name}.{f}"), message),
            other => other,
        })?;
        params.push((name, t));
    }
    let mut rest = Vec::new();
    r.read_to_end(&mut rest)
        .map_err(|e| Error::format("trailer", e.to_string()))?;
    if !rest.is_empty() {
        return Err(Error::format(
            "trailer",
            format!("{} unexpected bytes after the last parameter", rest.len()),
        ));
    }
    let network = Network::from_params(config, params).map_err(|e| match e {
        Error::Shape(m) => Error::format("parameters", m),
        other => other,
    })?;
    Ok(Checkpoint { network, metadata })
}

fn expected_param_count(config: &NetworkConfig) -> usize {
    2 * (config.convs.len() + config.fc_dims.len())
}

/// Writes to a sibling temp file and renames it into place.
pub fn save_checkpoint(
    net: &Network,
    metadata: &BTreeMap<String, String>,
    path: &Path,
) -> Result<()> {
    let file_name = path
        .file_name()
        .ok_or_else(|| Error::arg(format!("{} is not a file path", path.display())))?;
    let tmp = path.with_file_name(format!(".{}.tmp", file_name.to_string_lossy()));
    let mut buf = Vec::new();
    write_checkpoint(&mut buf, net, metadata).map_err(|e| Error::io(path, e))?;
    std::fs::write(&tmp, &buf).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(&mut bytes.as_slice())
}

/// Loads a checkpoint and requires its architecture to equal `expected`.
pub fn load_checkpoint_expecting(path: &Path, expected: &NetworkConfig) -> Result<Checkpoint> {
    let ckpt = load_checkpoint(path)?;
    let found = ckpt.network.config();
    if found != expected {
        let diffs: Vec<String> = expected
            .to_kv()
            .into_iter()
            .zip(found.to_kv())
            .filter(|(a, b)| a.1 != b.1)
            .map(|((k, want), (_, got))| format!("{k}: expected {want}, found {got}"))
            .collect();
        return Err(Error::Shape(format!(
            "checkpoint architecture mismatch: {}",
            diffs.join("; ")
        )));
    }
    Ok(ckpt)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Rng;

    fn sample() -> (Network, Vec<u8>) {
        let net = Network::build(NetworkConfig::tiny(), &mut Rng::new(3)).unwrap();
        let mut meta = BTreeMap::new();
        meta.insert("split.seed".to_string(), "42".to_string());
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &net, &meta).unwrap();
        (net, buf)
    }

    #[test]
    fn round_trip_is_bitwise_with_metadata() {
        let (net, buf) = sample();
        let ckpt = read_checkpoint(&mut buf.as_slice()).unwrap();
        assert!(ckpt.network.params_bitwise_eq(&net));
        assert_eq!(ckpt.metadata.get("split.seed").map(String::as_str), Some("42"));
        assert_eq!(ckpt.network.config(), net.config());
    }

    #[test]
    fn every_truncation_is_a_format_error() {
        let (_, buf) = sample();
        for cut in [0, 3, 7, 11, 20, buf.len() / 2, buf.len() - 1] {
            let err = read_checkpoint(&mut &buf[..cut]).unwrap_err();
            assert!(matches!(err, Error::Format { .. }), "cut {cut}: {err}");
        }
    }

    #[test]
    fn bad_magic_and_version_name_the_field() {
        let (_, mut buf) = sample();
        buf[4] = 9;
        let err = read_checkpoint(&mut buf.as_slice()).unwrap_err();
        assert!(matches!(err, Error::Format { ref field, .. } if field == "version"));
        buf[0] = b'Z';
        let err = read_checkpoint(&mut buf.as_slice()).unwrap_err();
        assert!(matches!(err, Error::Format { ref field, .. } if field == "magic"));
    }

    #[test]
    fn mismatched_architecture_lists_expected_and_found() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.ckpt");
        let net = Network::build(NetworkConfig::tiny(), &mut Rng::new(1)).unwrap();
        save_checkpoint(&net, &BTreeMap::new(), &path).unwrap();
        let mut other = NetworkConfig::tiny();
        other.fc_dims = vec![6, 2];
        let err = load_checkpoint_expecting(&path, &other).unwrap_err().to_string();
        assert!(err.contains("network.fc: expected 6,2, found 4,2"), "{err}");
        assert!(load_checkpoint_expecting(&path, &NetworkConfig::tiny()).is_ok());
    }
}
