use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// One observation sequence, optionally with its latent ground truth.
#[derive(Clone, Debug, PartialEq)]
pub struct Sequence {
    pub x: Vec<Vec<f64>>,
    pub z: Option<Vec<Vec<f64>>>,
}

impl Sequence {
    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }
}

/// A collection of sequences. CSV layout:
/// `sequence_id,t,x_0..x_{Dx-1}[,z_0..z_{Dz-1}]`, `t` starting at 1.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Dataset {
    pub sequences: Vec<Sequence>,
}

fn parse_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Parse(msg.into()))
}

impl Dataset {
    pub fn new(sequences: Vec<Sequence>) -> Result<Self> {
        for (i, s) in sequences.iter().enumerate() {
            if let Some(z) = &s.z {
                if z.len() != s.x.len() {
                    return Err(Error::InvalidArgument(format!(
                        "sequence {i}: {} latent states for {} observations",
                        z.len(),
                        s.x.len()
                    )));
                }
            }
        }
        Ok(Self { sequences })
    }

    pub fn total_steps(&self) -> usize {
        self.sequences.iter().map(|s| s.len()).sum()
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let first = self.sequences.first();
        let dx = first.and_then(|s| s.x.first()).map_or(0, |x| x.len());
        let dz = first.and_then(|s| s.z.as_ref()).and_then(|z| z.first()).map_or(0, |z| z.len());
        let mut header = vec!["sequence_id".to_string(), "t".to_string()];
        header.extend((0..dx).map(|i| format!("x_{i}")));
        header.extend((0..dz).map(|i| format!("z_{i}")));
        out.write_record(&header)?;
        for (j, s) in self.sequences.iter().enumerate() {
            for t in 0..s.len() {
                let mut row = vec![j.to_string(), (t + 1).to_string()];
                row.extend(s.x[t].iter().map(|v| v.to_string()));
                if let Some(z) = &s.z {
                    row.extend(z[t].iter().map(|v| v.to_string()));
                }
                out.write_record(&row)?;
            }
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(r);
        let headers = rdr.headers()?.clone();
        if headers.get(0) != Some("sequence_id") || headers.get(1) != Some("t") {
            return parse_err("dataset header must start with sequence_id,t");
        }
        let x_cols: Vec<usize> = (2..headers.len()).filter(|&i| headers[i].starts_with('x')).collect();
        let z_cols: Vec<usize> = (2..headers.len()).filter(|&i| headers[i].starts_with('z')).collect();
        if x_cols.is_empty() {
            return parse_err("dataset has no x columns");
        }
        if x_cols.len() + z_cols.len() + 2 != headers.len() {
            return parse_err("dataset columns must be named x_* or z_*");
        }
        let mut sequences: Vec<Sequence> = Vec::new();
        let mut current: Option<String> = None;
        for (row_no, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let line = row_no + 2;
            let id = rec[0].to_string();
            let t: usize = rec[1]
                .trim()
                .parse()
                .map_err(|_| Error::Parse(format!("line {line}: bad t '{}'", &rec[1])))?;
            let parse = |cols: &[usize]| -> Result<Vec<f64>> {
                cols.iter()
                    .map(|&c| {
                        rec[c]
                            .trim()
                            .parse::<f64>()
                            .map_err(|_| Error::Parse(format!("line {line}: bad value '{}'", &rec[c])))
                    })
                    .collect()
            };
            let x = parse(&x_cols)?;
            let z = if z_cols.is_empty() { None } else { Some(parse(&z_cols)?) };
            if current.as_deref() != Some(id.as_str()) {
                current = Some(id.clone());
                sequences.push(Sequence {
                    x: Vec::new(),
                    z: z.as_ref().map(|_| Vec::new()),
                });
            }
            let seq = sequences.last_mut().expect("pushed above");
            if t != seq.x.len() + 1 {
                return parse_err(format!(
                    "line {line}: sequence '{id}' has t = {t}, expected {} (t must increase by one from 1)",
                    seq.x.len() + 1
                ));
            }
            seq.x.push(x);
            if let (Some(zs), Some(z)) = (seq.z.as_mut(), z) {
                zs.push(z);
            }
        }
        Dataset::new(sequences)
    }

    pub fn write_csv_file(&self, path: &Path) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }

    pub fn read_csv_file(path: &Path) -> Result<Self> {
        Self::read_csv(std::fs::File::open(path)?)
    }
}
