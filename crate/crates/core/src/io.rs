//! JSON and CSV persistence.
//!
//! JSON floats are written with 17 significant digits so that every `f64`
//! survives a save/load cycle bit for bit. Saved files carry a trailing
//! `"version"` field that is checked on load.

use std::fs;
use std::io::{self, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::ser::{Formatter, PrettyFormatter};
use serde_json::Value;
use thiserror::Error;

use crate::geometry::SphereConfig;
use crate::multigraph::InclusionGraph;

pub const FORMAT_VERSION: u64 = 1;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("malformed JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("unsupported format version {found:?}, expected {FORMAT_VERSION}")]
    Version { found: Option<u64> },
    #[error("invalid content: {0}")]
    Invalid(String),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

/// Pretty JSON formatter writing floats as `d.ddddddddddddddddde±x`.
struct Precise<'a>(PrettyFormatter<'a>);

impl Formatter for Precise<'_> {
    fn write_f64<W: ?Sized + Write>(&mut self, w: &mut W, value: f64) -> io::Result<()> {
        write!(w, "{value:.16e}")
    }
    fn write_f32<W: ?Sized + Write>(&mut self, w: &mut W, value: f32) -> io::Result<()> {
        write!(w, "{:.16e}", f64::from(value))
    }
    fn begin_array<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_array(w)
    }
    fn end_array<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_array(w)
    }
    fn begin_array_value<W: ?Sized + Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.0.begin_array_value(w, first)
    }
    fn end_array_value<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_array_value(w)
    }
    fn begin_object<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_object(w)
    }
    fn end_object<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_object(w)
    }
    fn begin_object_key<W: ?Sized + Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.0.begin_object_key(w, first)
    }
    fn begin_object_value<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_object_value(w)
    }
    fn end_object_value<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_object_value(w)
    }
}

/// Serialize with 17-significant-digit floats.
pub fn to_json_string<T: Serialize + ?Sized>(value: &T) -> Result<String, IoError> {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, Precise(PrettyFormatter::with_indent(b"  ")));
    value.serialize(&mut ser)?;
    buf.push(b'\n');
    String::from_utf8(buf).map_err(|e| IoError::Invalid(e.to_string()))
}

#[derive(Serialize)]
struct Envelope<'a, T: Serialize> {
    #[serde(flatten)]
    inner: &'a T,
    version: u64,
}

/// JSON text of `value` with the format version appended.
pub fn to_versioned_json<T: Serialize>(value: &T) -> Result<String, IoError> {
    to_json_string(&Envelope {
        inner: value,
        version: FORMAT_VERSION,
    })
}

/// Parse versioned JSON text; fails without a partial result on any mismatch.
pub fn from_versioned_json<T: DeserializeOwned>(text: &str) -> Result<T, IoError> {
    let mut v: Value = serde_json::from_str(text)?;
    let obj = v
        .as_object_mut()
        .ok_or_else(|| IoError::Invalid("top-level value is not an object".into()))?;
    let found = obj.remove("version").and_then(|x| x.as_u64());
    if found != Some(FORMAT_VERSION) {
        return Err(IoError::Version { found });
    }
    Ok(serde_json::from_value(v)?)
}

pub fn save_json<T: Serialize>(path: &Path, value: &T) -> Result<(), IoError> {
    fs::write(path, to_versioned_json(value)?)?;
    Ok(())
}

pub fn load_json<T: DeserializeOwned>(path: &Path) -> Result<T, IoError> {
    from_versioned_json(&fs::read_to_string(path)?)
}

pub fn save_config(path: &Path, config: &SphereConfig) -> Result<(), IoError> {
    save_json(path, config)
}

pub fn load_config(path: &Path) -> Result<SphereConfig, IoError> {
    let c: SphereConfig = load_json(path)?;
    c.validate().map_err(|e| IoError::Invalid(e.to_string()))?;
    Ok(c)
}

pub fn save_graph(path: &Path, graph: &InclusionGraph) -> Result<(), IoError> {
    save_json(path, graph)
}

pub fn load_graph(path: &Path) -> Result<InclusionGraph, IoError> {
    let g: InclusionGraph = load_json(path)?;
    g.validate().map_err(|e| IoError::Invalid(e.to_string()))?;
    Ok(g)
}

/// Shortest decimal that parses back to the same `f64`.
pub fn fmt_float(v: f64) -> String {
    format!("{v}")
}

/// CSV with a header row and `\n` line endings.
pub fn csv_string(header: &[&str], rows: &[Vec<String>]) -> Result<String, IoError> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    let bytes = w.into_inner().map_err(|e| IoError::Invalid(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| IoError::Invalid(e.to_string()))
}

pub fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<(), IoError> {
    fs::write(path, csv_string(header, rows)?)?;
    Ok(())
}
