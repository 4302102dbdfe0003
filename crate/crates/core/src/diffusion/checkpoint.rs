//! Checkpoint format: one ASCII header line
//!
//! ```text
//! lmd-checkpoint v1 channels=1 height=16 width=16 widths=16,32,32,16 time_dim=32 steps=200 beta_start=0.0005 beta_end=0.1 seed=42
//! ```
//!
//! followed by every parameter tensor, in [`Architecture::parameter_layout`]
//! order, as raw little-endian `f32`.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::model::{Architecture, EpsilonModel};
use super::schedule::ScheduleSpec;
use crate::Error;

const MAGIC: &str = "lmd-checkpoint";
const VERSION: &str = "v1";

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: EpsilonModel,
    pub schedule: ScheduleSpec,
}

pub fn write_checkpoint<W: Write>(mut out: W, model: &EpsilonModel, schedule: &ScheduleSpec) -> std::io::Result<()> {
    let a = model.architecture();
    let widths: Vec<String> = a.widths.iter().map(usize::to_string).collect();
    writeln!(
        out,
        "{MAGIC} {VERSION} channels={} height={} width={} widths={} time_dim={} steps={} beta_start={:?} beta_end={:?} seed={}",
        a.channels,
        a.height,
        a.width,
        widths.join(","),
        a.time_dim,
        schedule.steps,
        schedule.beta_start,
        schedule.beta_end,
        model.seed()
    )?;
    for (_, t) in model.params().iter() {
        for v in t.data() {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    out.flush()
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

fn field<T: std::str::FromStr>(fields: &HashMap<&str, &str>, key: &str) -> Result<T, Error> {
    let raw = fields.get(key).ok_or_else(|| bad(format!("header lacks `{key}`")))?;
    raw.parse().map_err(|_| bad(format!("cannot parse `{key}={raw}`")))
}

pub fn read_checkpoint<R: Read>(input: R) -> Result<Checkpoint, Error> {
    let mut reader = BufReader::new(input);
    let mut header = String::new();
    reader
        .read_line(&mut header)
        .map_err(|e| bad(format!("reading header: {e}")))?;
    let mut tokens = header.trim_end().split(' ');
    if tokens.next() != Some(MAGIC) {
        return Err(bad("missing lmd-checkpoint magic"));
    }
    match tokens.next() {
        Some(VERSION) => {}
        other => return Err(bad(format!("unsupported version {other:?}"))),
    }
    let fields: HashMap<&str, &str> = tokens.filter_map(|t| t.split_once('=')).collect();
    let widths: Vec<usize> = field::<String>(&fields, "widths")?
        .split(',')
        .map(|w| w.parse().map_err(|_| bad(format!("bad width `{w}`"))))
        .collect::<Result<_, _>>()?;
    let widths: [usize; 4] = widths
        .try_into()
        .map_err(|_| bad("widths must list four block widths"))?;
    let arch = Architecture {
        channels: field(&fields, "channels")?,
        height: field(&fields, "height")?,
        width: field(&fields, "width")?,
        widths,
        time_dim: field(&fields, "time_dim")?,
    };
    let schedule = ScheduleSpec {
        steps: field(&fields, "steps")?,
        beta_start: field(&fields, "beta_start")?,
        beta_end: field(&fields, "beta_end")?,
    };
    schedule.build()?;
    let seed: u64 = field(&fields, "seed")?;

    let layout = arch.parameter_layout();
    let expected: usize = layout.iter().map(|(_, s)| s.iter().product::<usize>()).sum::<usize>() * 4;
    let mut payload = Vec::with_capacity(expected);
    reader
        .read_to_end(&mut payload)
        .map_err(|e| bad(format!("reading parameters: {e}")))?;
    if payload.len() != expected {
        return Err(bad(format!(
            "parameter payload is {} bytes, architecture needs {expected}",
            payload.len()
        )));
    }
    let mut floats = payload
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]));
    let values = layout
        .iter()
        .map(|(_, s)| floats.by_ref().take(s.iter().product()).collect())
        .collect();
    let model = EpsilonModel::from_parameters(arch, seed, values)?;
    Ok(Checkpoint { model, schedule })
}

pub fn save_checkpoint(path: &Path, model: &EpsilonModel, schedule: &ScheduleSpec) -> Result<(), Error> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_checkpoint(BufWriter::new(file), model, schedule).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, Error> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(file)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_preserves_everything() {
        let arch = Architecture::for_shape((1, 8, 8));
        let model = EpsilonModel::new(arch, 77).unwrap();
        let spec = ScheduleSpec {
            steps: 50,
            beta_start: 1e-4,
            beta_end: 0.02,
        };
        let mut bytes = Vec::new();
        write_checkpoint(&mut bytes, &model, &spec).unwrap();
        let header_end = bytes.iter().position(|&b| b == b'\n').unwrap();
        let header = std::str::from_utf8(&bytes[..header_end]).unwrap();
        assert!(header.starts_with("lmd-checkpoint v1 channels=1 height=8 width=8 widths=16,32,32,16"));
        assert_eq!(bytes.len() - header_end - 1, model.params().num_scalars() * 4);

        let back = read_checkpoint(bytes.as_slice()).unwrap();
        assert_eq!(back.model, model);
        assert_eq!(back.schedule, spec);
    }

    #[test]
    fn truncated_payload_rejected() {
        let model = EpsilonModel::new(Architecture::for_shape((1, 4, 4)), 1).unwrap();
        let mut bytes = Vec::new();
        write_checkpoint(&mut bytes, &model, &ScheduleSpec::default()).unwrap();
        bytes.truncate(bytes.len() - 3);
        assert!(read_checkpoint(bytes.as_slice()).is_err());
        assert!(read_checkpoint(&b"garbage\n"[..]).is_err());
    }
}
