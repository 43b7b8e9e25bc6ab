//! CSV forms of samples, curves and comparison records. Floats use six
//! decimals so reruns are byte-identical.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use thiserror::Error;

use super::curves::Curve;
use super::{AdaptationSample, ComparisonRecord};
use crate::instructions::{parse, Instruction};

/// Base column value for from-scratch rows.
pub const SCRATCH_LABEL: &str = "scratch";

const SAMPLES_HEADER: [&str; 5] = ["base_instruction", "transfer_instruction", "n_steps", "success_rate", "seed"];
const CURVES_HEADER: [&str; 4] = ["base_instruction", "transfer_instruction", "step", "rolling_success"];
const DATASET_HEADER: [&str; 4] = ["z_x", "z_i", "z_j", "label"];

#[derive(Debug, Error)]
pub enum CsvError {
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("row {row}: {msg}")]
    Parse { row: usize, msg: String },
    #[error("expected header {expected:?}, found {found:?}")]
    Header { expected: Vec<String>, found: Vec<String> },
}

fn base_text(base: &Option<Instruction>) -> String {
    base.map_or_else(|| SCRATCH_LABEL.to_string(), |b| b.render())
}

pub fn write_samples<W: Write>(out: W, samples: &[AdaptationSample]) -> Result<(), CsvError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(SAMPLES_HEADER)?;
    for s in samples {
        w.write_record([
            base_text(&s.base),
            s.transfer.render(),
            s.n_steps.to_string(),
            format!("{:.6}", s.success_rate),
            s.seed.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_curves<W: Write>(out: W, samples: &[AdaptationSample]) -> Result<(), CsvError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CURVES_HEADER)?;
    for s in samples {
        let base = base_text(&s.base);
        let transfer = s.transfer.render();
        for &(step, v) in &s.curve {
            w.write_record([base.as_str(), transfer.as_str(), &step.to_string(), &format!("{v:.6}")])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_dataset<W: Write>(out: W, records: &[ComparisonRecord]) -> Result<(), CsvError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(DATASET_HEADER)?;
    for r in records {
        w.write_record([r.z_x.render(), r.z_i.render(), r.z_j.render(), r.label.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

struct Rows<R: Read> {
    reader: csv::Reader<R>,
}

impl<R: Read> Rows<R> {
    fn open(input: R, header: &[&str]) -> Result<Self, CsvError> {
        let mut reader = csv::Reader::from_reader(input);
        let found: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
        if found != header {
            return Err(CsvError::Header {
                expected: header.iter().map(|s| s.to_string()).collect(),
                found,
            });
        }
        Ok(Rows { reader })
    }

    fn for_each(mut self, mut f: impl FnMut(usize, &Fields) -> Result<(), String>) -> Result<(), CsvError> {
        for (i, rec) in self.reader.records().enumerate() {
            let rec = rec?;
            let row = i + 2;
            f(row, &Fields(rec)).map_err(|msg| CsvError::Parse { row, msg })?;
        }
        Ok(())
    }
}

struct Fields(csv::StringRecord);

impl Fields {
    fn get(&self, i: usize) -> Result<&str, String> {
        self.0.get(i).ok_or_else(|| format!("missing column {i}"))
    }

    fn instr(&self, i: usize) -> Result<Instruction, String> {
        parse(self.get(i)?).map_err(|e| e.to_string())
    }

    fn base(&self, i: usize) -> Result<Option<Instruction>, String> {
        if self.get(i)? == SCRATCH_LABEL {
            Ok(None)
        } else {
            self.instr(i).map(Some)
        }
    }

    fn num<N: std::str::FromStr>(&self, i: usize) -> Result<N, String> {
        let s = self.get(i)?;
        s.parse().map_err(|_| format!("bad number {s:?}"))
    }
}

/// Samples without curves; see [`read_curves`].
pub fn read_samples<R: Read>(input: R) -> Result<Vec<AdaptationSample>, CsvError> {
    let mut out = Vec::new();
    Rows::open(input, &SAMPLES_HEADER)?.for_each(|_, f| {
        let success_rate: f64 = f.num(3)?;
        if !(0.0..=1.0).contains(&success_rate) {
            return Err(format!("success_rate {success_rate} outside [0, 1]"));
        }
        out.push(AdaptationSample {
            base: f.base(0)?,
            transfer: f.instr(1)?,
            n_steps: f.num(2)?,
            success_rate,
            curve: Vec::new(),
            seed: f.num(4)?,
        });
        Ok(())
    })?;
    Ok(out)
}

pub type CurveKey = (Option<Instruction>, Instruction);

pub fn read_curves<R: Read>(input: R) -> Result<BTreeMap<CurveKey, Curve>, CsvError> {
    let mut out: BTreeMap<CurveKey, Curve> = BTreeMap::new();
    Rows::open(input, &CURVES_HEADER)?.for_each(|_, f| {
        out.entry((f.base(0)?, f.instr(1)?))
            .or_default()
            .push((f.num(2)?, f.num(3)?));
        Ok(())
    })?;
    Ok(out)
}

pub fn read_dataset<R: Read>(input: R) -> Result<Vec<ComparisonRecord>, CsvError> {
    let mut out = Vec::new();
    Rows::open(input, &DATASET_HEADER)?.for_each(|_, f| {
        let label: u8 = f.num(3)?;
        if label > 1 {
            return Err(format!("label must be 0 or 1, got {label}"));
        }
        out.push(ComparisonRecord {
            z_x: f.instr(0)?,
            z_i: f.instr(1)?,
            z_j: f.instr(2)?,
            label,
        });
        Ok(())
    })?;
    Ok(out)
}
