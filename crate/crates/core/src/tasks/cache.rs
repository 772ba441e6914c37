//! Flat binary sample cache.
//!
//! Each record: `u32 steps`, `u32 input_dim`, `u32 output_dim`, then
//! little-endian `f64` inputs, targets, and mask (0 or 1), all row-major.

use std::fs::File;
use std::io::{BufReader, BufWriter, ErrorKind, Read, Write};
use std::path::Path;

use super::TaskSample;
use crate::error::{Error, Result};

pub fn write_samples<W: Write>(mut out: W, samples: &[TaskSample]) -> Result<()> {
    for s in samples {
        for n in [s.len(), s.input_dim(), s.output_dim()] {
            let n = u32::try_from(n).map_err(|_| Error::Config("sample too large to cache".into()))?;
            out.write_all(&n.to_le_bytes())?;
        }
        for x in s.inputs.iter().chain(&s.targets).flatten() {
            out.write_all(&x.to_le_bytes())?;
        }
        for &m in &s.mask {
            out.write_all(&f64::from(u8::from(m)).to_le_bytes())?;
        }
    }
    Ok(())
}

fn read_u32<R: Read>(input: &mut R) -> Result<Option<u32>> {
    let mut b = [0u8; 4];
    match input.read_exact(&mut b) {
        Ok(()) => Ok(Some(u32::from_le_bytes(b))),
        Err(e) if e.kind() == ErrorKind::UnexpectedEof => Ok(None),
        Err(e) => Err(e.into()),
    }
}

fn read_rows<R: Read>(input: &mut R, rows: usize, cols: usize) -> Result<Vec<Vec<f64>>> {
    let mut b = [0u8; 8];
    (0..rows)
        .map(|_| {
            (0..cols)
                .map(|_| {
                    input.read_exact(&mut b)?;
                    Ok(f64::from_le_bytes(b))
                })
                .collect()
        })
        .collect()
}

pub fn read_samples<R: Read>(mut input: R) -> Result<Vec<TaskSample>> {
    let mut out = Vec::new();
    while let Some(steps) = read_u32(&mut input)? {
        let truncated = || Error::Config("truncated sample cache record".into());
        let in_dim = read_u32(&mut input)?.ok_or_else(truncated)? as usize;
        let out_dim = read_u32(&mut input)?.ok_or_else(truncated)? as usize;
        let steps = steps as usize;
        let inputs = read_rows(&mut input, steps, in_dim)?;
        let targets = read_rows(&mut input, steps, out_dim)?;
        let mask = read_rows(&mut input, 1, steps)?
            .pop()
            .unwrap_or_default()
            .into_iter()
            .map(|m| m != 0.0)
            .collect();
        out.push(TaskSample {
            inputs,
            targets,
            mask,
        });
    }
    Ok(out)
}

pub fn save(path: &Path, samples: &[TaskSample]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_samples(&mut w, samples)?;
    w.flush()?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Vec<TaskSample>> {
    read_samples(BufReader::new(File::open(path)?))
}
