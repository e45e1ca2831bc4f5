//! Weight files.
//!
//! Layout: 4-byte magic `GSNN`, little-endian `u32` header length, a UTF-8
//! JSON header, then the parameter blob as little-endian `f64`. The blob
//! stores each layer's weight matrix (column-major, `out × in`) followed
//! by its bias, layer by layer. The header carries the blob's SHA-256.

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

use super::critic::Critic;
use super::mlp::{Activation, Layer, MlpNet};
use super::policy::SquashedGaussianPolicy;

pub const WEIGHT_FORMAT_VERSION: u32 = 1;
const MAGIC: &[u8; 4] = b"GSNN";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NetKind {
    Mlp,
    Policy { low: Vec<f64>, high: Vec<f64> },
    Critic { state_dim: usize, control_dim: usize, disturbance_dim: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightHeader {
    pub format_version: u32,
    pub kind: NetKind,
    pub layer_sizes: Vec<usize>,
    pub hidden_activation: Activation,
    pub output_activation: Activation,
    pub dtype: String,
    pub input_shift: Vec<f64>,
    pub input_scale: Vec<f64>,
    pub param_count: usize,
    pub blob_sha256: String,
}

fn sha_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn save_net(net: &MlpNet, kind: NetKind, path: &Path) -> Result<()> {
    let mut blob = Vec::with_capacity(8 * net.param_count());
    for p in net.params() {
        blob.extend_from_slice(&p.to_le_bytes());
    }
    let header = WeightHeader {
        format_version: WEIGHT_FORMAT_VERSION,
        kind,
        layer_sizes: net.sizes(),
        hidden_activation: net.hidden,
        output_activation: Activation::Identity,
        dtype: "f64-le".into(),
        input_shift: net.input_shift.clone(),
        input_scale: net.input_scale.clone(),
        param_count: net.param_count(),
        blob_sha256: sha_hex(&blob),
    };
    let json = serde_json::to_vec(&header)?;
    let mut out = Vec::with_capacity(8 + json.len() + blob.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&blob);
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn load_net(path: &Path) -> Result<(MlpNet, WeightHeader)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 8 || &bytes[..4] != MAGIC {
        return Err(Error::format(path, "bad magic"));
    }
    let hlen = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    if 8 + hlen > bytes.len() {
        return Err(Error::format(path, "truncated header"));
    }
    let header: WeightHeader = serde_json::from_slice(&bytes[8..8 + hlen])
        .map_err(|e| Error::format(path, format!("header: {e}")))?;
    if header.format_version != WEIGHT_FORMAT_VERSION {
        return Err(Error::format(
            path,
            format!("unsupported format version {}", header.format_version),
        ));
    }
    if header.dtype != "f64-le" || header.output_activation != Activation::Identity {
        return Err(Error::format(path, "unsupported dtype or output activation"));
    }
    let sizes = &header.layer_sizes;
    if sizes.len() < 2 || sizes.contains(&0) {
        return Err(Error::format(path, "bad layer sizes"));
    }
    let expected: usize = sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum();
    if expected != header.param_count {
        return Err(Error::format(path, "parameter count does not match layer sizes"));
    }
    let blob = &bytes[8 + hlen..];
    if blob.len() != 8 * expected {
        return Err(Error::format(
            path,
            format!("blob holds {} bytes, expected {}", blob.len(), 8 * expected),
        ));
    }
    if sha_hex(blob) != header.blob_sha256 {
        return Err(Error::format(path, "blob checksum mismatch"));
    }
    if header.input_shift.len() != sizes[0] || header.input_scale.len() != sizes[0] {
        return Err(Error::format(path, "normalization length mismatch"));
    }
    let params: Vec<f64> = blob
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let layers = sizes
        .windows(2)
        .map(|w| Layer {
            weight: DMatrix::zeros(w[1], w[0]),
            bias: DVector::zeros(w[1]),
        })
        .collect();
    let mut net = MlpNet::from_layers(layers, header.hidden_activation)?;
    net.set_params(&params);
    net.input_shift = header.input_shift.clone();
    net.input_scale = header.input_scale.clone();
    Ok((net, header))
}

pub fn save_policy(p: &SquashedGaussianPolicy, path: &Path) -> Result<()> {
    save_net(
        &p.net,
        NetKind::Policy {
            low: p.low.clone(),
            high: p.high.clone(),
        },
        path,
    )
}

pub fn load_policy(path: &Path) -> Result<SquashedGaussianPolicy> {
    let (net, header) = load_net(path)?;
    match header.kind {
        NetKind::Policy { low, high } => {
            if net.output_dim() != 2 * low.len() || low.len() != high.len() {
                return Err(Error::format(path, "policy bounds do not match the output layer"));
            }
            Ok(SquashedGaussianPolicy { net, low, high })
        }
        other => Err(Error::format(path, format!("expected a policy, found {other:?}"))),
    }
}

pub fn save_critic(c: &Critic, path: &Path) -> Result<()> {
    save_net(
        &c.net,
        NetKind::Critic {
            state_dim: c.state_dim,
            control_dim: c.control_dim,
            disturbance_dim: c.disturbance_dim,
        },
        path,
    )
}

pub fn load_critic(path: &Path) -> Result<Critic> {
    let (net, header) = load_net(path)?;
    match header.kind {
        NetKind::Critic {
            state_dim,
            control_dim,
            disturbance_dim,
        } => Critic::from_net(net, state_dim, control_dim, disturbance_dim)
            .map_err(|e| Error::format(path, e.to_string())),
        other => Err(Error::format(path, format!("expected a critic, found {other:?}"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::system::BoxSet;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn policy_round_trip_is_bit_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let p = SquashedGaussianPolicy::new(
            &BoxSet::symmetric(3, 2.0),
            &[16, 16],
            &BoxSet::symmetric(1, 0.7),
            &mut rng,
        );
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pi.bin");
        save_policy(&p, &path).unwrap();
        let q = load_policy(&path).unwrap();
        assert_eq!(p, q);
        let x = [0.3, -1.2, 0.4];
        assert_eq!(p.mode(&x).unwrap(), q.mode(&x).unwrap());
        assert!(matches!(load_critic(&path), Err(Error::Format { .. })));
    }

    #[test]
    fn corrupted_files_are_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let net = MlpNet::new(&[2, 4, 1], Activation::Softplus, 1.0, &mut rng);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("n.bin");
        save_net(&net, NetKind::Mlp, &path).unwrap();
        let good = fs::read(&path).unwrap();

        let mut bad = good.clone();
        bad[10] = b'#';
        fs::write(&path, &bad).unwrap();
        assert!(matches!(load_net(&path), Err(Error::Format { .. })));

        let mut bad = good.clone();
        let last = bad.len() - 1;
        bad[last] ^= 0x01;
        fs::write(&path, &bad).unwrap();
        assert!(matches!(load_net(&path), Err(Error::Format { .. })));

        let text = String::from_utf8_lossy(&good[8..]).to_string();
        assert!(text.contains("\"format_version\":1"));
        let bad = String::from_utf8_lossy(&good).replacen("\"format_version\":1", "\"format_version\":7", 1);
        fs::write(&path, bad.as_bytes()).unwrap();
        assert!(load_net(&path).is_err());
    }
}
