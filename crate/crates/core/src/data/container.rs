//! Binary containers for datasets and model checkpoints.
//!
//! Both share one layout: a magic line, then ASCII `key: value` header lines
//! terminated by `end`, then little-endian raw arrays in the order the header
//! lists them. Every array is followed by its 64-bit FNV-1a checksum
//! (little-endian).

use std::fs;
use std::io::Write as _;
use std::path::Path;

use super::{fold_lists, DataError, Dataset, DatasetManifest, SequenceSample};
use crate::cells::CellKind;
use crate::data::hierarchy_file::load_hierarchy;
use crate::network::{MsConvRnn, NetworkConfig};
use crate::tensor::Tensor;

const DATASET_MAGIC: &str = "HIERCROP-DATASET";
const CHECKPOINT_MAGIC: &str = "HIERCROP-CHECKPOINT";
const VERSION: &str = "1";

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

fn push_array(out: &mut Vec<u8>, bytes: &[u8]) {
    out.extend_from_slice(bytes);
    out.extend_from_slice(&fnv1a(bytes).to_le_bytes());
}

struct Header {
    entries: Vec<(String, String, usize)>,
}

impl Header {
    fn get(&self, key: &str) -> Result<&str, DataError> {
        self.entries
            .iter()
            .find(|(k, _, _)| k == key)
            .map(|(_, v, _)| v.as_str())
            .ok_or_else(|| DataError::Header {
                line: 0,
                msg: format!("missing key `{key}`"),
            })
    }

    fn line_of(&self, key: &str) -> usize {
        self.entries.iter().find(|(k, _, _)| k == key).map_or(0, |e| e.2)
    }

    fn parse<T: std::str::FromStr>(&self, key: &str) -> Result<T, DataError> {
        let v = self.get(key)?;
        v.parse().map_err(|_| DataError::Header {
            line: self.line_of(key),
            msg: format!("invalid value `{v}` for `{key}`"),
        })
    }

    fn list<T: std::str::FromStr>(&self, key: &str) -> Result<Vec<T>, DataError> {
        let v = self.get(key)?;
        if v.is_empty() {
            return Ok(Vec::new());
        }
        v.split(',')
            .map(|x| {
                x.trim().parse().map_err(|_| DataError::Header {
                    line: self.line_of(key),
                    msg: format!("invalid list entry `{x}` for `{key}`"),
                })
            })
            .collect()
    }
}

/// Splits `bytes` into header and payload.
fn read_header<'a>(bytes: &'a [u8], magic: &'static str) -> Result<(Header, &'a [u8]), DataError> {
    let mut pos = 0;
    let mut line_no = 0;
    let next_line = |pos: &mut usize| -> Option<&'a str> {
        let rest = &bytes[*pos..];
        let end = rest.iter().position(|&b| b == b'\n')?;
        let line = std::str::from_utf8(&rest[..end]).ok()?;
        *pos += end + 1;
        Some(line)
    };
    let first = next_line(&mut pos).unwrap_or("");
    if first != magic {
        return Err(DataError::Magic {
            expected: magic,
            found: first.chars().take(32).collect(),
        });
    }
    line_no += 1;
    let mut entries = Vec::new();
    loop {
        line_no += 1;
        let Some(line) = next_line(&mut pos) else {
            return Err(DataError::Truncated("header".into()));
        };
        if line == "end" {
            break;
        }
        let Some((k, v)) = line.split_once(':') else {
            return Err(DataError::Header {
                line: line_no,
                msg: format!("expected `key: value`, found `{line}`"),
            });
        };
        entries.push((k.trim().to_string(), v.trim().to_string(), line_no));
    }
    let header = Header { entries };
    let version = header.get("version")?;
    if version != VERSION {
        return Err(DataError::Version(version.to_string()));
    }
    Ok((header, &bytes[pos..]))
}

struct Payload<'a> {
    rest: &'a [u8],
}

impl<'a> Payload<'a> {
    fn take(&mut self, name: &str, len: usize) -> Result<&'a [u8], DataError> {
        if self.rest.len() < len + 8 {
            return Err(DataError::Truncated(name.to_string()));
        }
        let (data, rest) = self.rest.split_at(len);
        let (sum, rest) = rest.split_at(8);
        self.rest = rest;
        let stored = u64::from_le_bytes(sum.try_into().expect("8 bytes"));
        if stored != fnv1a(data) {
            return Err(DataError::Checksum(name.to_string()));
        }
        Ok(data)
    }

    fn finish(self) -> Result<(), DataError> {
        if self.rest.is_empty() {
            Ok(())
        } else {
            Err(DataError::Invalid(format!("{} trailing bytes after payload", self.rest.len())))
        }
    }
}

fn header_text(magic: &str, entries: &[(String, String)]) -> String {
    let mut s = format!("{magic}\nversion: {VERSION}\n");
    for (k, v) in entries {
        debug_assert!(!v.contains('\n'));
        s.push_str(&format!("{k}: {v}\n"));
    }
    s.push_str("end\n");
    s
}

fn join<T: ToString>(xs: &[T]) -> String {
    xs.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

fn write_atomically(path: &Path, bytes: &[u8]) -> Result<(), DataError> {
    let tmp = path.with_extension("partial");
    {
        let mut f = fs::File::create(&tmp).map_err(DataError::io(&tmp))?;
        f.write_all(bytes).map_err(DataError::io(&tmp))?;
    }
    fs::rename(&tmp, path).map_err(DataError::io(path))
}

pub fn write_dataset(path: &Path, dataset: &Dataset) -> Result<(), DataError> {
    let m = &dataset.manifest;
    let (s, t, b, h, w) = (m.samples, m.time_steps, m.bands, m.height, m.width);
    if dataset.samples.len() != s {
        return Err(DataError::Invalid(format!("manifest says {s} samples, found {}", dataset.samples.len())));
    }
    let mut entries = vec![
        ("samples".to_string(), s.to_string()),
        ("time_steps".into(), t.to_string()),
        ("bands".into(), b.to_string()),
        ("height".into(), h.to_string()),
        ("width".into(), w.to_string()),
        ("fine_classes".into(), m.fine_classes.to_string()),
        ("folds".into(), m.folds.len().to_string()),
        ("hierarchy".into(), m.hierarchy.clone()),
        ("class_counts".into(), join(&m.class_counts)),
        ("byte_order".into(), "little".into()),
        (
            "arrays".into(),
            format!(
                "inputs f32 [{s},{t},{b},{h},{w}]; fine_labels u16 [{s},{h},{w}]; field_ids u32 [{s},{h},{w}]; fold_ids u8 [{s}]; occluded_frames u8 [{s},{t}]; origins u32 [{s},2]"
            ),
        ),
    ];
    entries.extend(m.echo.iter().map(|(k, v)| (format!("config.{k}"), v.clone())));
    let mut out = header_text(DATASET_MAGIC, &entries).into_bytes();

    let mut buf = Vec::with_capacity(s * t * b * h * w * 4);
    for smp in &dataset.samples {
        if smp.inputs.len() != t * b * h * w || smp.fine_labels.len() != h * w || smp.field_ids.len() != h * w {
            return Err(DataError::Invalid("sample dims disagree with manifest".into()));
        }
        for v in &smp.inputs {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    push_array(&mut out, &buf);
    buf.clear();
    for smp in &dataset.samples {
        for v in &smp.fine_labels {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    push_array(&mut out, &buf);
    buf.clear();
    for smp in &dataset.samples {
        for v in &smp.field_ids {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    push_array(&mut out, &buf);
    let folds: Vec<u8> = dataset.samples.iter().map(|s| s.fold_id).collect();
    push_array(&mut out, &folds);
    let occ: Vec<u8> = dataset
        .samples
        .iter()
        .flat_map(|s| s.occluded_frames.iter().map(|&o| o as u8))
        .collect();
    push_array(&mut out, &occ);
    buf.clear();
    for smp in &dataset.samples {
        for v in smp.origin {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    push_array(&mut out, &buf);
    write_atomically(path, &out)
}

/// Reads a dataset and the hierarchy file it references.
pub fn read_dataset(path: &Path) -> Result<Dataset, DataError> {
    let bytes = fs::read(path).map_err(DataError::io(path))?;
    let (header, payload) = read_header(&bytes, DATASET_MAGIC)?;
    let s: usize = header.parse("samples")?;
    let t: usize = header.parse("time_steps")?;
    let b: usize = header.parse("bands")?;
    let h: usize = header.parse("height")?;
    let w: usize = header.parse("width")?;
    let fine_classes: usize = header.parse("fine_classes")?;
    let nfolds: usize = header.parse("folds")?;
    let hierarchy_name = header.get("hierarchy")?.to_string();
    let class_counts: Vec<u64> = header.list("class_counts")?;
    if header.get("byte_order")? != "little" {
        return Err(DataError::Header {
            line: header.line_of("byte_order"),
            msg: "only little-endian payloads are supported".into(),
        });
    }
    let echo = header
        .entries
        .iter()
        .filter_map(|(k, v, _)| k.strip_prefix("config.").map(|k| (k.to_string(), v.clone())))
        .collect();

    let plane = h * w;
    let frame = t * b * plane;
    let mut p = Payload { rest: payload };
    let inputs = p.take("inputs", s * frame * 4)?;
    let labels = p.take("fine_labels", s * plane * 2)?;
    let fields = p.take("field_ids", s * plane * 4)?;
    let folds = p.take("fold_ids", s)?;
    let occ = p.take("occluded_frames", s * t)?;
    let origins = p.take("origins", s * 8)?;
    p.finish()?;

    let samples: Vec<SequenceSample> = (0..s)
        .map(|i| SequenceSample {
            time_steps: t,
            bands: b,
            height: h,
            width: w,
            inputs: inputs[i * frame * 4..(i + 1) * frame * 4]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect(),
            fine_labels: labels[i * plane * 2..(i + 1) * plane * 2]
                .chunks_exact(2)
                .map(|c| u16::from_le_bytes(c.try_into().expect("2 bytes")))
                .collect(),
            field_ids: fields[i * plane * 4..(i + 1) * plane * 4]
                .chunks_exact(4)
                .map(|c| u32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect(),
            fold_id: folds[i],
            occluded_frames: occ[i * t..(i + 1) * t].iter().map(|&o| o != 0).collect(),
            origin: [0, 1].map(|k| u32::from_le_bytes(origins[i * 8 + k * 4..i * 8 + k * 4 + 4].try_into().expect("4 bytes"))),
        })
        .collect();
    if samples.iter().any(|smp| smp.fold_id as usize >= nfolds) {
        return Err(DataError::Invalid(format!("fold id outside [0, {nfolds})")));
    }
    let hierarchy_path = path.parent().unwrap_or(Path::new(".")).join(&hierarchy_name);
    let hierarchy = load_hierarchy(&hierarchy_path)?;
    if hierarchy.finest_classes() != fine_classes {
        return Err(DataError::Invalid(format!(
            "hierarchy has {} finest classes, dataset declares {fine_classes}",
            hierarchy.finest_classes()
        )));
    }
    let folds = fold_lists(&samples, nfolds);
    Ok(Dataset {
        manifest: DatasetManifest {
            samples: s,
            time_steps: t,
            bands: b,
            height: h,
            width: w,
            fine_classes,
            hierarchy: hierarchy_name,
            folds,
            class_counts,
            echo,
        },
        hierarchy,
        samples,
    })
}

/// A model plus whatever run settings were recorded with it.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: MsConvRnn,
    pub echo: Vec<(String, String)>,
}

fn network_entries(c: &NetworkConfig) -> Vec<(String, String)> {
    vec![
        ("net.input_dim".into(), c.input_dim.to_string()),
        ("net.stages".into(), c.stages.to_string()),
        ("net.layers_per_stage".into(), c.layers_per_stage.to_string()),
        ("net.hidden_dim".into(), c.hidden_dim.to_string()),
        ("net.kernel".into(), c.kernel.to_string()),
        ("net.cell".into(), c.cell.to_string()),
        ("net.classes".into(), join(&c.classes)),
        ("net.lambdas".into(), join(&c.lambdas)),
        ("net.gamma".into(), c.gamma.to_string()),
        ("net.refinement".into(), c.refinement.to_string()),
        ("net.refine_hidden".into(), c.refine_hidden.to_string()),
    ]
}

pub fn write_checkpoint(path: &Path, model: &MsConvRnn, echo: &[(String, String)]) -> Result<(), DataError> {
    let params = model.named_params();
    let mut entries = network_entries(model.config());
    entries.push(("tensors".into(), params.len().to_string()));
    for (name, t) in &params {
        entries.push(("tensor".into(), format!("{name} [{}]", join(t.shape()))));
    }
    entries.extend(echo.iter().map(|(k, v)| (format!("config.{k}"), v.clone())));
    let mut out = header_text(CHECKPOINT_MAGIC, &entries).into_bytes();
    for (_, t) in &params {
        let bytes: Vec<u8> = t.data().iter().flat_map(|v| v.to_le_bytes()).collect();
        push_array(&mut out, &bytes);
    }
    write_atomically(path, &out)
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint, DataError> {
    let bytes = fs::read(path).map_err(DataError::io(path))?;
    let (header, payload) = read_header(&bytes, CHECKPOINT_MAGIC)?;
    let cell: CellKind = header.get("net.cell")?.parse().map_err(|m: String| DataError::Header {
        line: header.line_of("net.cell"),
        msg: m,
    })?;
    let config = NetworkConfig {
        input_dim: header.parse("net.input_dim")?,
        stages: header.parse("net.stages")?,
        layers_per_stage: header.parse("net.layers_per_stage")?,
        hidden_dim: header.parse("net.hidden_dim")?,
        kernel: header.parse("net.kernel")?,
        cell,
        classes: header.list("net.classes")?,
        lambdas: header.list("net.lambdas")?,
        gamma: header.parse("net.gamma")?,
        refinement: header.parse("net.refinement")?,
        refine_hidden: header.parse("net.refine_hidden")?,
    };
    let mut model = MsConvRnn::seeded(config, 0).map_err(|e| DataError::Invalid(e.to_string()))?;
    let specs: Vec<(&str, usize)> =
        header.entries.iter().filter(|(k, _, _)| k == "tensor").map(|(_, v, l)| (v.as_str(), *l)).collect();
    let declared: usize = header.parse("tensors")?;
    if specs.len() != declared {
        return Err(DataError::Invalid(format!("{declared} tensors declared, {} listed", specs.len())));
    }
    let mut p = Payload { rest: payload };
    let mut tensors = Vec::with_capacity(specs.len());
    for (spec, line) in specs {
        let bad = |msg: &str| DataError::Header {
            line,
            msg: format!("{msg}: `{spec}`"),
        };
        let (name, shape) = spec.split_once(' ').ok_or_else(|| bad("expected `name [dims]`"))?;
        let dims = shape
            .trim()
            .strip_prefix('[')
            .and_then(|s| s.strip_suffix(']'))
            .ok_or_else(|| bad("expected bracketed dims"))?;
        let shape: Vec<usize> = dims
            .split(',')
            .map(|d| d.trim().parse().map_err(|_| bad("invalid dim")))
            .collect::<Result<_, _>>()?;
        let n: usize = shape.iter().product();
        let raw = p.take(name, n * 8)?;
        let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
        let t = Tensor::new(shape, data).map_err(|e| DataError::Invalid(e.to_string()))?;
        tensors.push((name.to_string(), t));
    }
    p.finish()?;
    model.load_named(tensors).map_err(|e| DataError::Invalid(e.to_string()))?;
    let echo = header
        .entries
        .iter()
        .filter_map(|(k, v, _)| k.strip_prefix("config.").map(|k| (k.to_string(), v.clone())))
        .collect();
    Ok(Checkpoint { model, echo })
}
