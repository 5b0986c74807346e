//! CSV and binary (`FVE1`) embedding files.
//!
//! CSV: header `sample_id,subject_id,gender,ethnicity,f0,...,f{d-1}`, floats
//! written with 9 significant digits.
//!
//! Binary, all integers little-endian:
//!
//! ```text
//! b"FVE1" | u32 d | u32 count |
//!   count × ( u32 id_len | id_len bytes UTF-8 sample_id | u32 subject_id
//!             | u8 gender | u8 ethnicity | d × f32 )
//! ```

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{EmbeddingSet, Ethnicity, Gender, Provenance, RawEmbedding, SubgroupLabel};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const BINARY_MAGIC: &[u8; 4] = b"FVE1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmbeddingFormat {
    Csv,
    Binary,
}

impl EmbeddingFormat {
    /// `.csv` means CSV, anything else binary.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("csv") => EmbeddingFormat::Csv,
            _ => EmbeddingFormat::Binary,
        }
    }
}

impl std::str::FromStr for EmbeddingFormat {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(Self::Csv),
            "binary" => Ok(Self::Binary),
            other => Err(Error::InvalidArgument(format!(
                "format must be csv or binary, got {other:?}"
            ))),
        }
    }
}

pub fn load_embeddings<S: Scalar>(path: &Path, format: EmbeddingFormat) -> Result<EmbeddingSet<S>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = BufReader::new(file);
    let rows = match format {
        EmbeddingFormat::Csv => read_csv(&mut reader, path)?,
        EmbeddingFormat::Binary => read_binary(&mut reader, path)?,
    };
    EmbeddingSet::from_raw(rows, None, Provenance::Loaded)
}

pub fn save_embeddings<S: Scalar>(
    set: &EmbeddingSet<S>,
    path: &Path,
    format: EmbeddingFormat,
) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    match format {
        EmbeddingFormat::Csv => write_csv(set, &mut w),
        EmbeddingFormat::Binary => write_binary(set, &mut w),
    }
    .and_then(|_| w.flush())
    .map_err(|e| Error::io(path, e))
}

fn write_csv<S: Scalar, W: Write>(set: &EmbeddingSet<S>, w: &mut W) -> std::io::Result<()> {
    write!(w, "sample_id,subject_id,gender,ethnicity")?;
    for k in 0..set.dim() {
        write!(w, ",f{k}")?;
    }
    writeln!(w)?;
    for e in set.embeddings() {
        write!(
            w,
            "{},{},{},{}",
            e.sample_id,
            e.subject_key,
            e.subgroup.gender.letter(),
            e.subgroup.ethnicity.letter()
        )?;
        for x in &e.vector {
            write!(w, ",{:.8e}", x.as_f64())?;
        }
        writeln!(w)?;
    }
    Ok(())
}

fn read_csv<S: Scalar, R: BufRead>(reader: &mut R, path: &Path) -> Result<Vec<RawEmbedding<S>>> {
    let ctx = |line: usize| format!("{}:{}", path.display(), line);
    let mut lines = reader.lines();
    let header = match lines.next() {
        Some(h) => h.map_err(|e| Error::io(path, e))?,
        None => return Err(Error::format(ctx(1), "empty file, missing header")),
    };
    let fields: Vec<&str> = header.trim_end().split(',').collect();
    if fields.len() < 5 || fields[..4] != ["sample_id", "subject_id", "gender", "ethnicity"] {
        return Err(Error::format(
            ctx(1),
            "header must start with sample_id,subject_id,gender,ethnicity followed by f0..",
        ));
    }
    let dim = fields.len() - 4;
    for (k, name) in fields[4..].iter().enumerate() {
        if *name != format!("f{k}") {
            return Err(Error::format(ctx(1), format!("expected column f{k}, found {name}")));
        }
    }
    let mut rows = Vec::new();
    for (n, line) in lines.enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let line = line.trim_end();
        if line.is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() < 4 {
            return Err(Error::format(ctx(n + 2), "too few columns"));
        }
        let sample_id = cols[0].to_string();
        if cols.len() - 4 != dim {
            return Err(Error::DimensionMismatch {
                sample_id,
                expected: dim,
                found: cols.len() - 4,
            });
        }
        let gender: Gender = cols[2].parse()?;
        let ethnicity: Ethnicity = cols[3].parse()?;
        let vector = cols[4..]
            .iter()
            .map(|c| {
                // values are stored at f32 precision in both formats
                c.parse::<f32>()
                    .map(|v| S::of(v as f64))
                    .map_err(|_| Error::format(ctx(n + 2), format!("bad float {c:?}")))
            })
            .collect::<Result<Vec<S>>>()?;
        rows.push(RawEmbedding {
            sample_id,
            subject_key: cols[1].to_string(),
            subgroup: SubgroupLabel::new(ethnicity, gender),
            vector,
        });
    }
    Ok(rows)
}

fn write_binary<S: Scalar, W: Write>(set: &EmbeddingSet<S>, w: &mut W) -> std::io::Result<()> {
    w.write_all(BINARY_MAGIC)?;
    w.write_all(&(set.dim() as u32).to_le_bytes())?;
    w.write_all(&(set.len() as u32).to_le_bytes())?;
    for e in set.embeddings() {
        let id = e.sample_id.as_bytes();
        w.write_all(&(id.len() as u32).to_le_bytes())?;
        w.write_all(id)?;
        // numeric source keys survive; anything else falls back to the dense index
        let subject = e.subject_key.parse::<u32>().unwrap_or(e.subject_id as u32);
        w.write_all(&subject.to_le_bytes())?;
        w.write_all(&[e.subgroup.gender.code(), e.subgroup.ethnicity.code()])?;
        for x in &e.vector {
            w.write_all(&x.as_f32().to_le_bytes())?;
        }
    }
    Ok(())
}

fn read_u32<R: Read>(r: &mut R, path: &Path, what: &str) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)
        .map_err(|_| Error::format(path.display().to_string(), format!("truncated reading {what}")))?;
    Ok(u32::from_le_bytes(buf))
}

fn read_binary<S: Scalar, R: Read>(reader: &mut R, path: &Path) -> Result<Vec<RawEmbedding<S>>> {
    let ctx = || path.display().to_string();
    let mut magic = [0u8; 4];
    reader
        .read_exact(&mut magic)
        .map_err(|_| Error::format(ctx(), "file too short for magic"))?;
    if &magic != BINARY_MAGIC {
        return Err(Error::format(ctx(), "bad magic, expected FVE1"));
    }
    let dim = read_u32(reader, path, "dimension")? as usize;
    let count = read_u32(reader, path, "count")? as usize;
    let mut rows = Vec::with_capacity(count.min(1 << 20));
    let mut floats = vec![0u8; dim * 4];
    for r in 0..count {
        let id_len = read_u32(reader, path, "sample id length")? as usize;
        let mut id = vec![0u8; id_len];
        reader
            .read_exact(&mut id)
            .map_err(|_| Error::format(ctx(), format!("truncated sample id in record {r}")))?;
        let sample_id = String::from_utf8(id)
            .map_err(|_| Error::format(ctx(), format!("sample id in record {r} is not UTF-8")))?;
        let subject = read_u32(reader, path, "subject id")?;
        let mut codes = [0u8; 2];
        reader
            .read_exact(&mut codes)
            .map_err(|_| Error::format(ctx(), format!("truncated labels in record {r}")))?;
        let gender = Gender::from_code(codes[0])
            .ok_or_else(|| Error::format(ctx(), format!("bad gender code {}", codes[0])))?;
        let ethnicity = Ethnicity::from_code(codes[1])
            .ok_or_else(|| Error::format(ctx(), format!("bad ethnicity code {}", codes[1])))?;
        reader
            .read_exact(&mut floats)
            .map_err(|_| Error::format(ctx(), format!("truncated vector in record {r}")))?;
        let vector = floats
            .chunks_exact(4)
            .map(|b| S::of_f32(f32::from_le_bytes([b[0], b[1], b[2], b[3]])))
            .collect();
        rows.push(RawEmbedding {
            sample_id,
            subject_key: subject.to_string(),
            subgroup: SubgroupLabel::new(ethnicity, gender),
            vector,
        });
    }
    let mut trailing = [0u8; 1];
    if reader.read(&mut trailing).map_err(|e| Error::io(path, e))? != 0 {
        return Err(Error::format(ctx(), "trailing bytes after last record"));
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Cursor;

    fn write_file(dir: &Path, name: &str, body: &str) -> std::path::PathBuf {
        let p = dir.join(name);
        std::fs::write(&p, body).unwrap();
        p
    }

    #[test]
    fn minimal_csv_loads() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_file(
            dir.path(),
            "e.csv",
            "sample_id,subject_id,gender,ethnicity,f0,f1,f2,f3\n\
             s0,10,F,A,1,0,0,0\n\
             s1,10,F,A,0,1,0,0\n\
             s2,11,M,W,0,0,1,0.5\n",
        );
        let set: EmbeddingSet<f64> = load_embeddings(&p, EmbeddingFormat::Csv).unwrap();
        assert_eq!(set.len(), 3);
        assert_eq!(set.dim(), 4);
        assert_eq!(set.num_identities(), 2);
        assert_eq!(set.embeddings()[2].vector[3], 0.5);
    }

    #[test]
    fn short_row_is_a_dimension_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let mut body = String::from("sample_id,subject_id,gender,ethnicity");
        for k in 0..512 {
            body.push_str(&format!(",f{k}"));
        }
        body.push('\n');
        body.push_str("s0,1,F,A");
        for _ in 0..511 {
            body.push_str(",0.1");
        }
        body.push('\n');
        let p = write_file(dir.path(), "e.csv", &body);
        let err = load_embeddings::<f64>(&p, EmbeddingFormat::Csv).unwrap_err();
        assert!(matches!(
            err,
            Error::DimensionMismatch { expected: 512, found: 511, .. }
        ));
    }

    #[test]
    fn malformed_header_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_file(dir.path(), "e.csv", "id,subject,f0\ns0,1,0.5\n");
        assert!(matches!(
            load_embeddings::<f64>(&p, EmbeddingFormat::Csv),
            Err(Error::Format { .. })
        ));
    }

    #[test]
    fn bad_magic_is_rejected() {
        let mut cur = Cursor::new(b"FVE2\0\0\0\0\0\0\0\0".to_vec());
        assert!(read_binary::<f64, _>(&mut cur, Path::new("x")).is_err());
    }

    #[test]
    fn binary_layout_is_exact() {
        let set = EmbeddingSet::from_raw(
            vec![RawEmbedding {
                sample_id: "ab".into(),
                subject_key: "7".into(),
                subgroup: "WM".parse().unwrap(),
                vector: vec![1.0f32, -2.0],
            }],
            None,
            Provenance::Loaded,
        )
        .unwrap();
        let mut buf = Vec::new();
        write_binary(&set, &mut buf).unwrap();
        let mut expect = b"FVE1".to_vec();
        expect.extend(2u32.to_le_bytes());
        expect.extend(1u32.to_le_bytes());
        expect.extend(2u32.to_le_bytes());
        expect.extend(b"ab");
        expect.extend(7u32.to_le_bytes());
        expect.extend([1u8, 3u8]);
        expect.extend(1.0f32.to_le_bytes());
        expect.extend((-2.0f32).to_le_bytes());
        assert_eq!(buf, expect);
    }

    #[test]
    fn save_into_unwritable_location_fails() {
        let dir = tempfile::tempdir().unwrap();
        let blocker = write_file(dir.path(), "plain-file", "x");
        let set = EmbeddingSet::<f64>::from_raw(vec![], None, Provenance::Loaded).unwrap();
        let err = save_embeddings(&set, &blocker.join("out.fve"), EmbeddingFormat::Binary);
        assert!(matches!(err, Err(Error::Io { .. })));
    }
}
