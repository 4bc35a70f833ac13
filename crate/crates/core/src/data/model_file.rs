//! `<name>.manifest` (JSON) plus `<name>.blob` (little-endian f64).

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::{PadSpec, TensorShape};
use crate::linalg::{AffineMap, DenseMatrix, Vector};
use crate::net::{Activation, LayerKind, LayerNode, Network, SkipWeights};

pub const FORMAT_VERSION: u32 = 1;

const NETWORK_ORDER: &str =
    "layers ascending; conv weights [out_c][in_c][kh][kw] then bias[out_c]; fully_connected weights row-major [classes][inputs] then bias[classes]";
const AFFINE_ORDER: &str = "weight row-major [rows][cols] then bias[rows]";

#[derive(Debug, Clone, PartialEq)]
pub enum Model {
    Network(Network),
    Affine(AffineMap),
}

impl Model {
    pub fn kind(&self) -> &'static str {
        match self {
            Model::Network(_) => "network",
            Model::Affine(_) => "affine",
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    format_version: u32,
    kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    input_shape: Option<TensorShape>,
    num_classes: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    layers: Vec<LayerDesc>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    skips: Vec<SkipDesc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    affine: Option<AffineDesc>,
    weight_blob: BlobDesc,
}

#[derive(Debug, Serialize, Deserialize)]
struct LayerDesc {
    kind: String,
    in_shape: TensorShape,
    out_shape: TensorShape,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    kernel: Option<[usize; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    stride: Option<[usize; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pad: Option<PadSpec>,
    activation: Activation,
    weight_count: usize,
    bias_count: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct SkipDesc {
    from: usize,
    to: usize,
    t: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct AffineDesc {
    rows: usize,
    cols: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct BlobDesc {
    file: String,
    dtype: String,
    count: usize,
    order: String,
}

/// `dir/name` → (`dir/name.manifest`, `dir/name.blob`); a trailing
/// `.manifest` or `.blob` on the input is ignored.
fn paths(stem: &Path) -> (PathBuf, PathBuf) {
    let base = match stem.extension().and_then(|e| e.to_str()) {
        Some("manifest") | Some("blob") => stem.with_extension(""),
        _ => stem.to_path_buf(),
    };
    let with = |ext: &str| {
        let mut s = base.clone().into_os_string();
        s.push(ext);
        PathBuf::from(s)
    };
    (with(".manifest"), with(".blob"))
}

fn blob_name(blob: &Path) -> String {
    blob.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default()
}

fn write_pair(stem: &Path, mut manifest: Manifest, values: &[f64]) -> Result<(PathBuf, PathBuf)> {
    let (mpath, bpath) = paths(stem);
    manifest.weight_blob.file = blob_name(&bpath);
    let mut bytes = Vec::with_capacity(values.len() * 8);
    for v in values {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(&bpath, bytes)?;
    let mut text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Format(e.to_string()))?;
    text.push('\n');
    fs::write(&mpath, text)?;
    Ok((mpath, bpath))
}

pub fn save_network(stem: &Path, net: &Network) -> Result<(PathBuf, PathBuf)> {
    let layers = net
        .layers
        .iter()
        .map(|l| {
            let (kind, kernel, stride, pad) = match l.kind {
                LayerKind::Conv { kernel, stride, pad } => {
                    ("conv", Some([kernel.0, kernel.1]), Some([stride.0, stride.1]), Some(pad))
                }
                LayerKind::FullyConnected => ("fully_connected", None, None, None),
            };
            LayerDesc {
                kind: kind.into(),
                in_shape: l.in_shape,
                out_shape: l.out_shape,
                kernel,
                stride,
                pad,
                activation: l.activation,
                weight_count: l.weights().len(),
                bias_count: l.bias().len(),
            }
        })
        .collect();
    let skips = net
        .skips
        .entries()
        .map(|(from, to, t)| SkipDesc { from, to, t })
        .collect();
    let values = net.params();
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        kind: "network".into(),
        input_shape: Some(net.input_shape),
        num_classes: net.num_classes,
        layers,
        skips,
        affine: None,
        weight_blob: BlobDesc {
            file: String::new(),
            dtype: "f64-le".into(),
            count: values.len(),
            order: NETWORK_ORDER.into(),
        },
    };
    write_pair(stem, manifest, &values)
}

pub fn save_affine(stem: &Path, map: &AffineMap) -> Result<(PathBuf, PathBuf)> {
    let mut values = map.weight().data().to_vec();
    values.extend_from_slice(map.bias());
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        kind: "affine".into(),
        input_shape: None,
        num_classes: map.output_len(),
        layers: Vec::new(),
        skips: Vec::new(),
        affine: Some(AffineDesc {
            rows: map.output_len(),
            cols: map.input_len(),
        }),
        weight_blob: BlobDesc {
            file: String::new(),
            dtype: "f64-le".into(),
            count: values.len(),
            order: AFFINE_ORDER.into(),
        },
    };
    write_pair(stem, manifest, &values)
}

fn checked_shape(s: TensorShape) -> Result<TensorShape> {
    TensorShape::new(s.channels, s.height, s.width)
}

fn build_network(m: &Manifest, blob: &[f64]) -> Result<Network> {
    let input_shape = checked_shape(
        m.input_shape
            .ok_or_else(|| Error::Format("network manifest without input_shape".into()))?,
    )?;
    let mut layers = Vec::with_capacity(m.layers.len());
    let mut off = 0;
    for (n, d) in m.layers.iter().enumerate() {
        let nw = d.weight_count;
        let end = off + nw + d.bias_count;
        let w = blob[off..off + nw].to_vec();
        let b = blob[off + nw..end].to_vec();
        off = end;
        let in_shape = checked_shape(d.in_shape)?;
        let layer = match d.kind.as_str() {
            "conv" => {
                let (Some(k), Some(s)) = (d.kernel, d.stride) else {
                    return Err(Error::Format(format!("conv layer {} lacks kernel or stride", n + 1)));
                };
                LayerNode::conv(
                    n + 1,
                    in_shape,
                    d.out_shape.channels,
                    (k[0], k[1]),
                    (s[0], s[1]),
                    d.pad.unwrap_or_default(),
                    d.activation,
                    w,
                    b,
                )?
            }
            "fully_connected" => LayerNode::fully_connected(n + 1, in_shape, d.out_shape.channels, w, b)?,
            other => {
                return Err(Error::Version(format!("unknown layer kind '{other}'")));
            }
        };
        if layer.out_shape != d.out_shape {
            return Err(Error::Format(format!(
                "layer {} declares output {} but its geometry gives {}",
                n + 1,
                d.out_shape,
                layer.out_shape
            )));
        }
        layers.push(layer);
    }
    let mut skips = SkipWeights::default();
    for s in &m.skips {
        if s.to == 0 {
            return Err(Error::Format("skip into layer 0".into()));
        }
        skips.set(s.from, s.to, s.t);
    }
    let net = Network::new(input_shape, m.num_classes, layers, skips)?;
    net.ensure_valid()?;
    Ok(net)
}

/// Load either kind of model; bit-exact inverse of the savers.
pub fn load_model(stem: &Path) -> Result<Model> {
    let (mpath, default_blob) = paths(stem);
    let text = fs::read_to_string(&mpath)
        .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", mpath.display()))))?;
    let value: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| Error::Format(format!("manifest: {e}")))?;
    let version = value.get("format_version").and_then(serde_json::Value::as_u64);
    if version != Some(u64::from(FORMAT_VERSION)) {
        return Err(Error::Version(format!(
            "format_version {version:?}, this build reads {FORMAT_VERSION}"
        )));
    }
    match value.get("kind").and_then(serde_json::Value::as_str) {
        Some("network") | Some("affine") => {}
        other => return Err(Error::Version(format!("unknown model kind {other:?}"))),
    }
    let m: Manifest = serde_json::from_value(value).map_err(|e| Error::Format(format!("manifest: {e}")))?;
    if m.weight_blob.dtype != "f64-le" {
        return Err(Error::Version(format!("blob dtype '{}'", m.weight_blob.dtype)));
    }

    let bpath = if m.weight_blob.file.is_empty() {
        default_blob
    } else {
        mpath.with_file_name(&m.weight_blob.file)
    };
    let bytes = fs::read(&bpath)?;
    if bytes.len() % 8 != 0 {
        return Err(Error::Format(format!("blob is {} bytes, not whole f64 values", bytes.len())));
    }
    let blob: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();

    let declared = match m.kind.as_str() {
        "network" => m.layers.iter().map(|l| l.weight_count + l.bias_count).sum(),
        _ => {
            let a = m
                .affine
                .as_ref()
                .ok_or_else(|| Error::Format("affine manifest without dimensions".into()))?;
            a.rows * a.cols + a.rows
        }
    };
    if m.weight_blob.count != declared || blob.len() != declared {
        return Err(Error::Format(format!(
            "blob holds {} values, manifest declares {} (layers sum to {declared})",
            blob.len(),
            m.weight_blob.count
        )));
    }

    match m.kind.as_str() {
        "network" => Ok(Model::Network(build_network(&m, &blob)?)),
        _ => {
            let a = m.affine.as_ref().expect("checked above");
            let (w, b) = blob.split_at(a.rows * a.cols);
            let map = AffineMap::new(DenseMatrix::new(a.rows, a.cols, w.to_vec())?, Vector::new(b.to_vec()))?;
            Ok(Model::Affine(map))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::collapse::collapse_network;
    use crate::forward::forward_layered;
    use crate::net::{preset, Preset};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn stem_handling() {
        let (m, b) = paths(Path::new("out/model"));
        assert_eq!((m, b), (PathBuf::from("out/model.manifest"), PathBuf::from("out/model.blob")));
        let (m, _) = paths(Path::new("out/model.manifest"));
        assert_eq!(m, PathBuf::from("out/model.manifest"));
        let (m, _) = paths(Path::new("out/v1.2"));
        assert_eq!(m, PathBuf::from("out/v1.2.manifest"));
    }

    #[test]
    fn basic3_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let net = preset(Preset::Basic3, 12).unwrap().set_uniform_skip(0.3).unwrap();
        let stem = dir.path().join("b3");
        save_network(&stem, &net).unwrap();
        let Model::Network(back) = load_model(&stem).unwrap() else {
            panic!("wrong kind")
        };
        assert_eq!(back, net);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..10 {
            let x: Vec<f64> = (0..784).map(|_| rng.gen()).collect();
            let a = forward_layered(&net, &x, false).unwrap().0;
            let b = forward_layered(&back, &x, false).unwrap().0;
            assert!(a.iter().zip(b.iter()).all(|(p, q)| p.to_bits() == q.to_bits()));
        }
    }

    #[test]
    fn affine_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let map = collapse_network(&preset(Preset::Basic3, 2).unwrap()).unwrap().map;
        let stem = dir.path().join("collapsed");
        save_affine(&stem, &map).unwrap();
        assert_eq!(load_model(&stem).unwrap(), Model::Affine(map));
    }

    #[test]
    fn rejects_bad_files() {
        let dir = tempfile::tempdir().unwrap();
        let stem = dir.path().join("m");
        let (mpath, bpath) = save_network(&stem, &preset(Preset::Basic3, 0).unwrap()).unwrap();
        let text = fs::read_to_string(&mpath).unwrap();

        fs::write(&mpath, text.replace("\"kind\": \"network\"", "\"kind\": \"graph\"")).unwrap();
        assert!(matches!(load_model(&stem), Err(Error::Version(_))));

        fs::write(&mpath, text.replace("\"format_version\": 1", "\"format_version\": 2")).unwrap();
        assert!(matches!(load_model(&stem), Err(Error::Version(_))));

        fs::write(&mpath, &text).unwrap();
        let blob = fs::read(&bpath).unwrap();
        fs::write(&bpath, &blob[..blob.len() - 8]).unwrap();
        assert!(matches!(load_model(&stem), Err(Error::Format(_))));
        fs::write(&bpath, &blob[..blob.len() - 3]).unwrap();
        assert!(matches!(load_model(&stem), Err(Error::Format(_))));

        fs::write(&bpath, &blob).unwrap();
        assert!(load_model(&stem).is_ok());
        fs::write(&mpath, "{ not json").unwrap();
        assert!(load_model(&stem).is_err());
    }

    #[test]
    fn rejects_invalid_skip_rows() {
        let dir = tempfile::tempdir().unwrap();
        let stem = dir.path().join("m");
        let (mpath, _) = save_network(&stem, &preset(Preset::Basic3, 0).unwrap()).unwrap();
        let mut v: serde_json::Value = serde_json::from_str(&fs::read_to_string(&mpath).unwrap()).unwrap();
        v["skips"][2]["t"] = serde_json::json!(0.25);
        fs::write(&mpath, v.to_string()).unwrap();
        assert!(matches!(load_model(&stem), Err(Error::Validation(_))));
    }
}
