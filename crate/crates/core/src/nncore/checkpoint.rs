//! Versioned checkpoint container.
//!
//! A UTF-8 header followed by raw little-endian `f32` arrays:
//!
//! ```text
//! OODHCN-CHECKPOINT
//! format_version = 1
//! <key> = <value>            (any number of metadata lines)
//! section <name> <n>         (followed by n verbatim lines)
//! tensor <name> <d1>x<d2>.. <trainable|frozen>
//! end_header
//! <tensor data in declaration order>
//! ```

use std::fmt::Write as _;

use super::{Parameter, Tensor};
use crate::error::{Error, Result};

pub const MAGIC: &str = "OODHCN-CHECKPOINT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct TensorRecord {
    pub name: String,
    pub shape: Vec<usize>,
    pub trainable: bool,
    pub data: Vec<f32>,
}

impl TensorRecord {
    pub fn from_parameter(p: &Parameter) -> Self {
        TensorRecord {
            name: p.name.clone(),
            shape: p.value.shape().to_vec(),
            trainable: p.trainable,
            data: p.value.data().iter().map(|&v| v as f32).collect(),
        }
    }

    pub fn to_parameter(&self) -> Result<Parameter> {
        let values = self.data.iter().map(|&v| f64::from(v)).collect();
        Ok(Parameter::new(self.name.clone(), Tensor::new(self.shape.clone(), values)?, self.trainable))
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct CheckpointFile {
    pub meta: Vec<(String, String)>,
    pub sections: Vec<(String, Vec<String>)>,
    pub tensors: Vec<TensorRecord>,
}

fn header_err(line: usize, message: impl Into<String>) -> Error {
    Error::Parse { line, message: message.into() }
}

impl CheckpointFile {
    pub fn meta(&self, key: &str) -> Option<&str> {
        self.meta.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn require(&self, key: &str) -> Result<&str> {
        self.meta(key).ok_or_else(|| Error::InvalidValue(format!("checkpoint header lacks `{key}`")))
    }

    pub fn section(&self, name: &str) -> Option<&[String]> {
        self.sections.iter().find(|(n, _)| n == name).map(|(_, l)| l.as_slice())
    }

    pub fn tensor(&self, name: &str) -> Option<&TensorRecord> {
        self.tensors.iter().find(|t| t.name == name)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut header = String::new();
        let _ = writeln!(header, "{MAGIC}");
        let _ = writeln!(header, "format_version = {FORMAT_VERSION}");
        for (k, v) in &self.meta {
            let _ = writeln!(header, "{k} = {v}");
        }
        for (name, lines) in &self.sections {
            let _ = writeln!(header, "section {name} {}", lines.len());
            for l in lines {
                let _ = writeln!(header, "{l}");
            }
        }
        for t in &self.tensors {
            let dims: Vec<String> = t.shape.iter().map(usize::to_string).collect();
            let kind = if t.trainable { "trainable" } else { "frozen" };
            let _ = writeln!(header, "tensor {} {} {kind}", t.name, dims.join("x"));
        }
        let _ = writeln!(header, "end_header");
        let mut bytes = header.into_bytes();
        for t in &self.tensors {
            for v in &t.data {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
        }
        bytes
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut pos = 0usize;
        let mut line_no = 0usize;
        let mut next_line = |pos: &mut usize| -> Result<String> {
            line_no += 1;
            let rest = &bytes[*pos..];
            let end = rest.iter().position(|&b| b == b'\n').ok_or_else(|| header_err(line_no, "truncated header"))?;
            let line = std::str::from_utf8(&rest[..end]).map_err(|_| header_err(line_no, "header is not UTF-8"))?;
            *pos += end + 1;
            Ok(line.to_owned())
        };
        if next_line(&mut pos)? != MAGIC {
            return Err(header_err(1, "not a checkpoint file"));
        }
        let mut file = CheckpointFile::default();
        let mut version_seen = false;
        let mut n = 1;
        loop {
            let line = next_line(&mut pos)?;
            n += 1;
            if line == "end_header" {
                break;
            }
            if let Some(rest) = line.strip_prefix("section ") {
                let (name, count) = rest
                    .rsplit_once(' ')
                    .and_then(|(name, c)| Some((name.to_owned(), c.parse::<usize>().ok()?)))
                    .ok_or_else(|| header_err(n, "bad section line"))?;
                let mut lines = Vec::with_capacity(count);
                for _ in 0..count {
                    lines.push(next_line(&mut pos)?);
                    n += 1;
                }
                file.sections.push((name, lines));
            } else if let Some(rest) = line.strip_prefix("tensor ") {
                let parts: Vec<&str> = rest.split(' ').collect();
                if parts.len() != 3 {
                    return Err(header_err(n, "bad tensor line"));
                }
                let shape = parts[1]
                    .split('x')
                    .map(|d| d.parse::<usize>())
                    .collect::<std::result::Result<Vec<_>, _>>()
                    .map_err(|_| header_err(n, "bad tensor shape"))?;
                let trainable = match parts[2] {
                    "trainable" => true,
                    "frozen" => false,
                    _ => return Err(header_err(n, "tensor kind must be trainable or frozen")),
                };
                file.tensors.push(TensorRecord { name: parts[0].to_owned(), shape, trainable, data: Vec::new() });
            } else if let Some((k, v)) = line.split_once(" = ") {
                if k == "format_version" {
                    let version: u32 = v.parse().map_err(|_| header_err(n, "bad format_version"))?;
                    if version != FORMAT_VERSION {
                        return Err(Error::Mismatch(format!(
                            "checkpoint format {version}, this build reads {FORMAT_VERSION}"
                        )));
                    }
                    version_seen = true;
                } else {
                    file.meta.push((k.to_owned(), v.to_owned()));
                }
            } else {
                return Err(header_err(n, format!("unrecognised header line `{line}`")));
            }
        }
        if !version_seen {
            return Err(header_err(2, "missing format_version"));
        }
        for t in &mut file.tensors {
            let count: usize = t.shape.iter().product();
            let end = pos + 4 * count;
            if end > bytes.len() {
                return Err(Error::Shape(format!("tensor {} truncated", t.name)));
            }
            t.data = bytes[pos..end].chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
            pos = end;
        }
        if pos != bytes.len() {
            return Err(Error::Shape(format!("{} trailing bytes after tensors", bytes.len() - pos)));
        }
        Ok(file)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> CheckpointFile {
        CheckpointFile {
            meta: vec![("variant".into(), "hcn".into())],
            sections: vec![("vocab".into(), vec!["<unk>".into(), "a b".into()])],
            tensors: vec![
                TensorRecord {
                    name: "w".into(),
                    shape: vec![2, 3],
                    trainable: true,
                    data: vec![1.0, -2.5, 3.0, 0.0, 1e-3, 7.0],
                },
                TensorRecord { name: "e".into(), shape: vec![1], trainable: false, data: vec![0.5] },
            ],
        }
    }

    #[test]
    fn round_trip() {
        let f = sample();
        let bytes = f.to_bytes();
        assert_eq!(CheckpointFile::from_bytes(&bytes).unwrap(), f);
        // Little-endian payload sits right after the header.
        let tail = &bytes[bytes.len() - 4..];
        assert_eq!(tail, 0.5f32.to_le_bytes());
    }

    #[test]
    fn corrupt_files() {
        let bytes = sample().to_bytes();
        assert!(CheckpointFile::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        assert!(CheckpointFile::from_bytes(b"hello\n").is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(CheckpointFile::from_bytes(&extra).is_err());
        let text = String::from_utf8_lossy(&bytes).replace("format_version = 1", "format_version = 9");
        assert!(matches!(CheckpointFile::from_bytes(text.as_bytes()), Err(Error::Mismatch(_))));
    }
}
