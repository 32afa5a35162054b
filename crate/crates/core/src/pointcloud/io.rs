//! Point-cloud file formats.
//!
//! Text: optional `#` header lines, then one point per line,
//! `x y z [intensity] [label]`, whitespace separated. The header
//! `# fields x y z intensity label` names the columns present and
//! `# classes K` records the class count. Without a fields header a fourth
//! column is read as a label and a fifth column is not allowed unless the
//! fourth is intensity.
//!
//! Binary (little-endian), fixed 16-byte header:
//!
//! ```text
//! offset size field
//! 0      4    magic  b"TKPC"
//! 4      2    version (1)
//! 6      2    field mask: bit 0 intensity, bit 1 labels
//! 8      4    N (u32)
//! 12     4    class count K (u32, 0 when unlabelled)
//! 16     ..   N records: x y z as f64, [intensity f64], [label u32]
//! ```

use std::fmt::Write as _;
use std::io::{Read, Write};
use std::path::Path;

use super::PointCloud;
use crate::{Error, Result};

pub const MAGIC: [u8; 4] = *b"TKPC";
pub const VERSION: u16 = 1;
const HAS_INTENSITY: u16 = 1;
const HAS_LABELS: u16 = 2;

pub fn to_text(cloud: &PointCloud) -> String {
    let mut out = String::from("# fields x y z");
    if cloud.intensity().is_some() {
        out.push_str(" intensity");
    }
    if cloud.labels().is_some() {
        out.push_str(" label");
        let _ = write!(out, "\n# classes {}", cloud.num_classes());
    }
    out.push('\n');
    for i in 0..cloud.len() {
        let [x, y, z] = cloud.coords()[i];
        let _ = write!(out, "{x:?} {y:?} {z:?}");
        if let Some(v) = cloud.intensity() {
            let _ = write!(out, " {:?}", v[i]);
        }
        if let Some(v) = cloud.labels() {
            let _ = write!(out, " {}", v[i]);
        }
        out.push('\n');
    }
    out
}

pub fn from_text(text: &str) -> Result<PointCloud> {
    let mut fields: Option<(bool, bool)> = None;
    let mut classes: Option<usize> = None;
    let mut coords = Vec::new();
    let mut intensity = Vec::new();
    let mut labels = Vec::new();
    let mut layout: Option<(bool, bool)> = None;

    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(comment) = line.strip_prefix('#') {
            let mut words = comment.split_whitespace();
            match words.next() {
                Some("fields") => {
                    let rest: Vec<&str> = words.collect();
                    if rest.len() < 3 || rest[..3] != ["x", "y", "z"] {
                        return Err(Error::Format(format!("line {}: bad fields header", lineno + 1)));
                    }
                    fields = Some((rest.contains(&"intensity"), rest.contains(&"label")));
                }
                Some("classes") => {
                    classes = Some(parse(words.next().unwrap_or(""), lineno)?);
                }
                _ => {}
            }
            continue;
        }
        let cols: Vec<&str> = line.split_whitespace().collect();
        let this = match (fields, cols.len()) {
            (Some(f), n) if n == 3 + f.0 as usize + f.1 as usize => f,
            (None, 3) => (false, false),
            (None, 4) => (false, true),
            (None, 5) => (true, true),
            _ => return Err(Error::Format(format!("line {}: unexpected column count {}", lineno + 1, cols.len()))),
        };
        if *layout.get_or_insert(this) != this {
            return Err(Error::Format(format!("line {}: inconsistent column count", lineno + 1)));
        }
        coords.push([parse(cols[0], lineno)?, parse(cols[1], lineno)?, parse(cols[2], lineno)?]);
        let mut c = 3;
        if this.0 {
            intensity.push(parse(cols[c], lineno)?);
            c += 1;
        }
        if this.1 {
            labels.push(parse::<u32>(cols[c], lineno)?);
        }
    }
    let (has_i, has_l) = layout.unwrap_or((false, false));
    let k = match (classes, has_l) {
        (Some(k), _) => k,
        (None, true) => labels.iter().max().map_or(0, |&m| m as usize + 1),
        (None, false) => 0,
    };
    PointCloud::new(coords, has_i.then_some(intensity), has_l.then_some(labels), k)
}

fn parse<T: std::str::FromStr>(s: &str, lineno: usize) -> Result<T> {
    s.parse().map_err(|_| Error::Format(format!("line {}: cannot parse {s:?}", lineno + 1)))
}

pub fn to_binary(cloud: &PointCloud) -> Vec<u8> {
    let mask = if cloud.intensity().is_some() { HAS_INTENSITY } else { 0 }
        | if cloud.labels().is_some() { HAS_LABELS } else { 0 };
    let mut out = Vec::with_capacity(16 + cloud.len() * 36);
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&mask.to_le_bytes());
    out.extend_from_slice(&(cloud.len() as u32).to_le_bytes());
    out.extend_from_slice(&(cloud.num_classes() as u32).to_le_bytes());
    for i in 0..cloud.len() {
        for v in cloud.coords()[i] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        if let Some(v) = cloud.intensity() {
            out.extend_from_slice(&v[i].to_le_bytes());
        }
        if let Some(v) = cloud.labels() {
            out.extend_from_slice(&v[i].to_le_bytes());
        }
    }
    out
}

pub fn from_binary(mut bytes: &[u8]) -> Result<PointCloud> {
    let mut header = [0u8; 16];
    bytes.read_exact(&mut header).map_err(|_| Error::Format("truncated header".into()))?;
    if header[..4] != MAGIC {
        return Err(Error::Format("bad magic".into()));
    }
    let version = u16::from_le_bytes([header[4], header[5]]);
    if version != VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    let mask = u16::from_le_bytes([header[6], header[7]]);
    let n = u32::from_le_bytes(header[8..12].try_into().unwrap()) as usize;
    let k = u32::from_le_bytes(header[12..16].try_into().unwrap()) as usize;
    let (has_i, has_l) = (mask & HAS_INTENSITY != 0, mask & HAS_LABELS != 0);
    let record = 24 + if has_i { 8 } else { 0 } + if has_l { 4 } else { 0 };
    if bytes.len() != n * record {
        return Err(Error::Format(format!("expected {} payload bytes, found {}", n * record, bytes.len())));
    }
    let f64_at = |b: &[u8], o: usize| f64::from_le_bytes(b[o..o + 8].try_into().unwrap());
    let mut coords = Vec::with_capacity(n);
    let mut intensity = Vec::new();
    let mut labels = Vec::new();
    for rec in bytes.chunks_exact(record) {
        coords.push([f64_at(rec, 0), f64_at(rec, 8), f64_at(rec, 16)]);
        let mut o = 24;
        if has_i {
            intensity.push(f64_at(rec, o));
            o += 8;
        }
        if has_l {
            labels.push(u32::from_le_bytes(rec[o..o + 4].try_into().unwrap()));
        }
    }
    PointCloud::new(coords, has_i.then_some(intensity), has_l.then_some(labels), k)
}

/// Writes binary for `.bin`/`.tkpc` extensions and text otherwise.
pub fn write_file(cloud: &PointCloud, path: &Path) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    if is_binary(path) {
        f.write_all(&to_binary(cloud))?;
    } else {
        f.write_all(to_text(cloud).as_bytes())?;
    }
    Ok(())
}

pub fn read_file(path: &Path) -> Result<PointCloud> {
    let bytes = std::fs::read(path)?;
    if bytes.starts_with(&MAGIC) {
        from_binary(&bytes)
    } else {
        let text = String::from_utf8(bytes).map_err(|_| Error::Format("text cloud is not UTF-8".into()))?;
        from_text(&text)
    }
}

fn is_binary(path: &Path) -> bool {
    matches!(path.extension().and_then(|e| e.to_str()), Some("bin" | "tkpc"))
}
