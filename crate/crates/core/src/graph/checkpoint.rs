//! Binary checkpoint format.
//!
//! ```text
//! "MANNCKPT1"
//! repeated until EOF:
//!   name_len: u32 LE, name: [u8; name_len] (UTF-8)
//!   rows: u32 LE, cols: u32 LE
//!   data: [f64 LE; rows * cols] (row-major)
//! ```
//!
//! Parameter values come first, followed by the three optimizer slots of each
//! parameter under `<name>#rms_n`, `<name>#rms_m`, `<name>#rms_delta`.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, ErrorKind, Read, Write};
use std::path::Path;

use super::param::ParamSet;
use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 9] = b"MANNCKPT1";

const SLOT_SUFFIXES: [&str; 3] = ["#rms_n", "#rms_m", "#rms_delta"];

fn write_entry<W: Write>(w: &mut W, name: &str, t: &Tensor) -> Result<()> {
    w.write_all(&(name.len() as u32).to_le_bytes())?;
    w.write_all(name.as_bytes())?;
    w.write_all(&(t.rows() as u32).to_le_bytes())?;
    w.write_all(&(t.cols() as u32).to_le_bytes())?;
    for v in t.data() {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn write_checkpoint<W: Write>(params: &ParamSet, mut w: W) -> Result<()> {
    w.write_all(MAGIC)?;
    for p in params.iter() {
        write_entry(&mut w, p.name(), p.value())?;
    }
    for p in params.iter() {
        for (suffix, slot) in SLOT_SUFFIXES.iter().zip([&p.mean_square, &p.mean, &p.delta]) {
            write_entry(&mut w, &format!("{}{suffix}", p.name()), slot)?;
        }
    }
    w.flush()?;
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

/// Reads every `(name, tensor)` entry in file order.
pub fn read_checkpoint<R: Read>(mut r: R) -> Result<Vec<(String, Tensor)>> {
    let mut magic = [0u8; 9];
    r.read_exact(&mut magic)
        .map_err(|_| Error::Checkpoint("file too short for header".into()))?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let mut entries = Vec::new();
    loop {
        let mut len = [0u8; 4];
        match r.read_exact(&mut len) {
            Ok(()) => {}
            Err(e) if e.kind() == ErrorKind::UnexpectedEof => break,
            Err(e) => return Err(e.into()),
        }
        let mut name = vec![0u8; u32::from_le_bytes(len) as usize];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name)
            .map_err(|_| Error::Checkpoint("parameter name is not UTF-8".into()))?;
        let rows = read_u32(&mut r)? as usize;
        let cols = read_u32(&mut r)? as usize;
        let mut data = vec![0.0; rows * cols];
        let mut buf = [0u8; 8];
        for v in &mut data {
            r.read_exact(&mut buf)
                .map_err(|_| Error::Checkpoint(format!("truncated data for `{name}`")))?;
            *v = f64::from_le_bytes(buf);
        }
        entries.push((name, Tensor::new(rows, cols, data)));
    }
    Ok(entries)
}

/// Overwrites values (and slots, when present) of `params` from checkpoint entries.
///
/// Every parameter must be present with a matching shape.
pub fn restore(params: &mut ParamSet, entries: Vec<(String, Tensor)>) -> Result<()> {
    let mut by_name: HashMap<String, Tensor> = entries.into_iter().collect();
    let mut take = |name: &str, shape: (usize, usize), required: bool| -> Result<Option<Tensor>> {
        match by_name.remove(name) {
            Some(t) if t.shape() == shape => Ok(Some(t)),
            Some(t) => Err(Error::Checkpoint(format!(
                "`{name}` has shape {}x{}, model expects {}x{}",
                t.rows(),
                t.cols(),
                shape.0,
                shape.1
            ))),
            None if required => Err(Error::Checkpoint(format!("missing parameter `{name}`"))),
            None => Ok(None),
        }
    };
    for p in params.iter_mut() {
        let shape = p.value().shape();
        let name = p.name().to_string();
        if let Some(v) = take(&name, shape, true)? {
            *p.value_mut() = v;
        }
        let slots = [&mut p.mean_square, &mut p.mean, &mut p.delta];
        for (suffix, slot) in SLOT_SUFFIXES.iter().zip(slots) {
            if let Some(v) = take(&format!("{name}{suffix}"), shape, false)? {
                *slot = v;
            }
        }
    }
    Ok(())
}

pub fn save(params: &ParamSet, path: impl AsRef<Path>) -> Result<()> {
    write_checkpoint(params, BufWriter::new(File::create(path)?))
}

pub fn load_into(params: &mut ParamSet, path: impl AsRef<Path>) -> Result<()> {
    let entries = read_checkpoint(BufReader::new(File::open(path)?))?;
    restore(params, entries)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> ParamSet {
        let mut ps = ParamSet::new();
        ps.add("controller.W_x", Tensor::new(2, 2, vec![1.5, -2.0, 0.25, 1e-300]));
        let b = ps.add("controller.b", Tensor::column(vec![0.1, 0.2]));
        ps.get_mut(b).delta.data_mut()[1] = -7.0;
        ps
    }

    #[test]
    fn header_and_first_entry_layout() {
        let mut buf = Vec::new();
        write_checkpoint(&sample(), &mut buf).unwrap();
        assert_eq!(&buf[..9], b"MANNCKPT1");
        assert_eq!(&buf[9..13], &14u32.to_le_bytes());
        assert_eq!(&buf[13..27], b"controller.W_x");
        assert_eq!(&buf[27..31], &2u32.to_le_bytes());
        assert_eq!(&buf[31..35], &2u32.to_le_bytes());
        assert_eq!(&buf[35..43], &1.5f64.to_le_bytes());
    }

    #[test]
    fn round_trip_restores_values_and_slots() {
        let src = sample();
        let mut buf = Vec::new();
        write_checkpoint(&src, &mut buf).unwrap();
        let mut dst = sample();
        for p in dst.iter_mut() {
            p.value_mut().fill(0.0);
            p.delta.fill(0.0);
        }
        restore(&mut dst, read_checkpoint(&buf[..]).unwrap()).unwrap();
        assert_eq!(src, dst);
    }

    #[test]
    fn rejects_bad_magic_and_shape() {
        assert!(read_checkpoint(&b"NOTACKPT1"[..]).is_err());
        let mut buf = Vec::new();
        write_checkpoint(&sample(), &mut buf).unwrap();
        let mut other = ParamSet::new();
        other.add("controller.W_x", Tensor::zeros(3, 2));
        let err = restore(&mut other, read_checkpoint(&buf[..]).unwrap()).unwrap_err();
        assert!(err.to_string().contains("3x2"), "{err}");
    }
}
