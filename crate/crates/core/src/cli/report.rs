//! JSON and CSV writers. Floats are written with 17 significant digits so
//! that identical runs give identical bytes.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::Path;

use serde::Serialize;
use serde_json::ser::{Formatter, Serializer};

use crate::replicator::ReplicationRun;
use crate::sde::fmt_f64;

pub const SCHEMA: u32 = 1;

/// Writes every `f64` as `d.dddddddddddddddde±x`.
#[derive(Debug, Clone, Copy, Default)]
pub struct Sig17;

impl Formatter for Sig17 {
    fn write_f64<W: ?Sized + Write>(&mut self, writer: &mut W, value: f64) -> io::Result<()> {
        writer.write_all(fmt_f64(value).as_bytes())
    }
    fn write_f32<W: ?Sized + Write>(&mut self, writer: &mut W, value: f32) -> io::Result<()> {
        self.write_f64(writer, f64::from(value))
    }
}

pub fn to_json<T: Serialize>(value: &T) -> Result<Vec<u8>, serde_json::Error> {
    let mut out = Vec::new();
    let mut ser = Serializer::with_formatter(&mut out, Sig17);
    value.serialize(&mut ser)?;
    out.push(b'\n');
    Ok(out)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), super::CliError> {
    std::fs::write(path, to_json(value)?)?;
    Ok(())
}

fn component_header(prefix: &str, n: usize) -> impl Iterator<Item = String> + '_ {
    (0..n).map(move |k| format!("{prefix}_{k}"))
}

/// One row per path: `path_id,cost,residual,constraint,g_cost,l1,x_T_0,...`.
pub fn write_paths_csv(path: &Path, run: &ReplicationRun) -> Result<(), super::CliError> {
    let mut w = csv::Writer::from_writer(BufWriter::new(File::create(path)?));
    let mut header: Vec<String> =
        ["path_id", "cost", "residual", "constraint", "g_cost", "l1"].iter().map(|s| s.to_string()).collect();
    header.extend(component_header("x_T", run.n));
    w.write_record(&header)?;
    for (p, r) in run.records.iter().enumerate() {
        let mut row = vec![
            p.to_string(),
            fmt_f64(r.cost),
            fmt_f64(r.residual),
            fmt_f64(r.constraint),
            fmt_f64(r.g_cost),
            fmt_f64(r.l1),
        ];
        row.extend(run.terminal_at(p).iter().map(|v| fmt_f64(*v)));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// One row per retained path and node: `path_id,i,t_i,mu_k...,u_k...,x_k...`.
/// The control is left empty at the final node.
pub fn write_trajectories_csv(path: &Path, run: &ReplicationRun) -> Result<(), super::CliError> {
    let mut w = csv::Writer::from_writer(BufWriter::new(File::create(path)?));
    let n = run.n;
    let mut header: Vec<String> = vec!["path_id".into(), "i".into(), "t_i".into()];
    header.extend(component_header("mu", n));
    header.extend(component_header("u", n));
    header.extend(component_header("x", n));
    w.write_record(&header)?;
    let steps = run.grid.steps();
    for (p, trace) in &run.trajectories {
        for i in 0..=steps {
            let mut row = vec![p.to_string(), i.to_string(), fmt_f64(run.grid.t(i))];
            row.extend(trace.mu_at(i).iter().map(|v| fmt_f64(*v)));
            if i < steps {
                row.extend(trace.u_at(i).iter().map(|v| fmt_f64(*v)));
            } else {
                row.extend((0..n).map(|_| String::new()));
            }
            row.extend(trace.x_at(i).iter().map(|v| fmt_f64(*v)));
            w.write_record(&row)?;
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(Serialize)]
    struct Probe {
        a: f64,
        b: Vec<f64>,
        c: f64,
    }

    #[test]
    fn seventeen_digits_round_trip() {
        let x = 0.1 + 0.2;
        let bytes = to_json(&Probe { a: x, b: vec![1.0, -2.5e-300], c: f64::NAN }).unwrap();
        let text = String::from_utf8(bytes).unwrap();
        assert_eq!(
            text,
            "{\"a\":3.0000000000000004e-1,\"b\":[1.0000000000000000e0,-2.5000000000000000e-300],\"c\":null}\n"
        );
        let back: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(back["a"].as_f64().unwrap(), x);
    }
}
