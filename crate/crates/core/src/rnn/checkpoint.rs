//! Text checkpoint for a model: a header, the mesh section, then one line
//! per tensor and per optimizer cache.
//!
//! ```text
//! model <H> <O> <batch> <epochs> <seed>
//! rates <in> <out> <hidden> <act>
//! rmsprop <decay> <eps> <steps>
//! <mesh section>
//! W_IN re,im,...   B_IN ...   W_OUT ...   B_OUT ...   B_ACT ...
//! RMS_W_IN ...     RMS_B_IN ...           ...         RMS_B_ACT ...
//! ```
//! Complex tensors are written as interleaved real and imaginary parts.

use std::io::{BufRead, Write};

use num_complex::Complex64;

use super::model::{LearningRates, OptimizerState, RnnConfig, RnnModel};
use super::optim::{RmsProp, RmsPropConfig};
use crate::error::Result;
use crate::linalg::ComplexMatrix;
use crate::mesh::{read_mesh_lines, write_mesh};
use crate::textio::{fmt_f64, join_f64, Lines};

const TENSORS: [&str; 11] = [
    "W_IN",
    "B_IN",
    "W_OUT",
    "B_OUT",
    "B_ACT",
    "RMS_W_IN",
    "RMS_B_IN",
    "RMS_PHASES",
    "RMS_W_OUT",
    "RMS_B_OUT",
    "RMS_B_ACT",
];

fn interleave(values: &[Complex64]) -> impl Iterator<Item = f64> + '_ {
    values.iter().flat_map(|z| [z.re, z.im])
}

pub fn write_model<W: Write>(model: &RnnModel, out: &mut W) -> Result<()> {
    let c = model.config();
    writeln!(
        out,
        "model {} {} {} {} {}",
        c.hidden, c.output, c.batch, c.epochs, c.seed
    )?;
    let r = c.rates;
    writeln!(
        out,
        "rates {} {} {} {}",
        fmt_f64(r.input),
        fmt_f64(r.output),
        fmt_f64(r.hidden),
        fmt_f64(r.act)
    )?;
    let opt = model.optimizer();
    writeln!(
        out,
        "rmsprop {} {} {}",
        fmt_f64(c.rmsprop.decay),
        fmt_f64(c.rmsprop.eps),
        opt.steps
    )?;
    write_mesh(model.mesh(), out)?;
    let rows: [(&str, Vec<f64>); 11] = [
        (TENSORS[0], interleave(model.w_in()).collect()),
        (TENSORS[1], interleave(model.b_in()).collect()),
        (TENSORS[2], interleave(model.w_out().as_slice()).collect()),
        (TENSORS[3], interleave(model.b_out()).collect()),
        (TENSORS[4], model.b_act().to_vec()),
        (TENSORS[5], opt.w_in.cache().to_vec()),
        (TENSORS[6], opt.b_in.cache().to_vec()),
        (TENSORS[7], opt.phases.cache().to_vec()),
        (TENSORS[8], opt.w_out.cache().to_vec()),
        (TENSORS[9], opt.b_out.cache().to_vec()),
        (TENSORS[10], opt.b_act.cache().to_vec()),
    ];
    for (name, values) in rows {
        writeln!(out, "{name} {}", join_f64(values))?;
    }
    Ok(())
}

fn split_fields<'a, R: BufRead>(
    lines: &Lines<R>,
    line: &'a str,
    key: &str,
    count: usize,
) -> Result<Vec<&'a str>> {
    let fields: Vec<&str> = line.split_whitespace().collect();
    if fields.first() != Some(&key) || fields.len() != count + 1 {
        return Err(lines.err(format!("expected '{key}' followed by {count} fields")));
    }
    Ok(fields[1..].to_vec())
}

pub fn read_model<R: BufRead>(reader: R) -> Result<RnnModel> {
    let mut lines = Lines::new(reader);
    let line = lines.expect_line("model header")?;
    let f = split_fields(&lines, &line, "model", 5)?;
    let hidden: usize = lines.parse(f[0], "hidden size")?;
    let output: usize = lines.parse(f[1], "output size")?;
    let batch: usize = lines.parse(f[2], "batch size")?;
    let epochs: usize = lines.parse(f[3], "epochs")?;
    let seed: u64 = lines.parse(f[4], "seed")?;

    let line = lines.expect_line("rates")?;
    let f = split_fields(&lines, &line, "rates", 4)?;
    let rates = LearningRates {
        input: lines.parse(f[0], "input rate")?,
        output: lines.parse(f[1], "output rate")?,
        hidden: lines.parse(f[2], "hidden rate")?,
        act: lines.parse(f[3], "activation rate")?,
    };
    let line = lines.expect_line("rmsprop")?;
    let f = split_fields(&lines, &line, "rmsprop", 3)?;
    let rmsprop = RmsPropConfig {
        decay: lines.parse(f[0], "decay")?,
        eps: lines.parse(f[1], "eps")?,
    };
    let steps: u64 = lines.parse(f[2], "step count")?;

    let mesh = read_mesh_lines(&mut lines)?;
    if mesh.n() != hidden {
        return Err(lines.err(format!(
            "mesh has {} ports but hidden size is {hidden}",
            mesh.n()
        )));
    }

    let mut tensors = Vec::with_capacity(TENSORS.len());
    for name in TENSORS {
        let line = lines.expect_line(name)?;
        let (key, rest) = line
            .split_once(char::is_whitespace)
            .unwrap_or((line.as_str(), ""));
        if key != name {
            return Err(lines.err(format!("expected {name}, found '{key}'")));
        }
        tensors.push((lines.parse_f64_list(rest.trim())?, lines.line_no()));
    }
    let expect = [
        2 * hidden,
        2 * hidden,
        2 * output * hidden,
        2 * output,
        hidden,
        2 * hidden,
        2 * hidden,
        mesh.num_phases(),
        2 * output * hidden,
        2 * output,
        hidden,
    ];
    for ((name, (values, line)), len) in TENSORS.iter().zip(&tensors).zip(expect) {
        if values.len() != len {
            return Err(crate::error::Error::Checkpoint {
                line: *line,
                msg: format!("{name} needs {len} values, found {}", values.len()),
            });
        }
    }
    if let Some(extra) = lines.next_line()? {
        return Err(lines.err(format!("unexpected trailing line '{extra}'")));
    }

    let complex = |v: &[f64]| -> Vec<Complex64> {
        v.chunks_exact(2)
            .map(|p| Complex64::new(p[0], p[1]))
            .collect()
    };
    let mut t = tensors.into_iter().map(|(v, _)| v);
    let mut next = || t.next().expect("counted");
    let w_in = complex(&next());
    let b_in = complex(&next());
    let w_out = ComplexMatrix::from_vec(output, hidden, complex(&next()))?;
    let b_out = complex(&next());
    let b_act = next();
    let opt = OptimizerState {
        w_in: RmsProp::from_cache(next()),
        b_in: RmsProp::from_cache(next()),
        phases: RmsProp::from_cache(next()),
        w_out: RmsProp::from_cache(next()),
        b_out: RmsProp::from_cache(next()),
        b_act: RmsProp::from_cache(next()),
        steps,
    };
    let config = RnnConfig {
        hidden,
        output,
        layers: mesh.num_fine_layers(),
        basic_unit: mesh.basic_unit(),
        with_diag: mesh.has_diag(),
        rates,
        rmsprop,
        batch,
        epochs,
        seed,
    };
    config.validate().map_err(|e| lines.err(e.to_string()))?;
    Ok(RnnModel {
        config,
        w_in,
        b_in,
        mesh,
        w_out,
        b_out,
        b_act,
        opt,
    })
}
