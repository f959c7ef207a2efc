//! CSV trajectories and controls.
//!
//! Plants are numbered from 1 in column names. A trajectory file has `N + 1`
//! rows and the columns
//!
//! ```text
//! t, angle{i}, angle{i}_unwrapped, momentum{i},          every plant
//!    px{i}, py{i}, vx{i}, vy{i},                          underwater vehicles
//!    tau{i}, phi{i}_x, phi{i}_y,                          controls (vehicles carry forces)
//!    w1, w2, g{i}_{k}
//! ```
//!
//! in that order: all state columns of all plants, then all control columns,
//! then the accumulator and the constraint values. Controls are blank on the
//! last row. A controls file has `N` rows with `t` and the control columns.
//! Numbers are written with 17 significant digits, which round-trips every `f64`.

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::liegroup::rotation;
use crate::multiplex::{AuxState, JointControl};
use crate::plants::{Ensemble, JointTrajectory, Plant, PlantModel};

fn state_columns(plant: &Plant, i: usize) -> Vec<String> {
    let mut out = vec![format!("angle{i}"), format!("angle{i}_unwrapped"), format!("momentum{i}")];
    if let Plant::UwVehicle(_) = plant {
        out.extend(["px", "py", "vx", "vy"].iter().map(|c| format!("{c}{i}")));
    }
    out
}

fn control_columns(plant: &Plant, i: usize) -> Vec<String> {
    let mut out = vec![format!("tau{i}")];
    if let Plant::UwVehicle(_) = plant {
        out.push(format!("phi{i}_x"));
        out.push(format!("phi{i}_y"));
    }
    out
}

fn all_control_columns(ensemble: &Ensemble) -> Vec<String> {
    ensemble
        .plants()
        .iter()
        .enumerate()
        .flat_map(|(i, p)| control_columns(p, i + 1))
        .collect()
}

/// Column names of a trajectory file.
pub fn trajectory_header(ensemble: &Ensemble) -> Vec<String> {
    let mut out = vec!["t".to_string()];
    for (i, p) in ensemble.plants().iter().enumerate() {
        out.extend(state_columns(p, i + 1));
    }
    out.extend(all_control_columns(ensemble));
    out.push("w1".into());
    out.push("w2".into());
    for (i, p) in ensemble.plants().iter().enumerate() {
        out.extend((1..=p.constraint_dim()).map(|k| format!("g{}_{k}", i + 1)));
    }
    out
}

/// Column names of a controls file.
pub fn controls_header(ensemble: &Ensemble) -> Vec<String> {
    let mut out = vec!["t".to_string()];
    out.extend(all_control_columns(ensemble));
    out
}

fn number(v: f64) -> String {
    format!("{v:.16e}")
}

fn csv_error(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io.to_string()),
        other => Error::Parse(format!("{other:?}")),
    }
}

/// Writes a (possibly partial) trajectory; the number of rows follows `traj.states`.
pub fn write_trajectory<W: Write>(writer: W, ensemble: &Ensemble, traj: &JointTrajectory) -> Result<()> {
    let mut out = csv::Writer::from_writer(writer);
    out.write_record(trajectory_header(ensemble)).map_err(csv_error)?;
    let width = ensemble.layout().total_dim();
    for t in 0..traj.states.len() {
        let mut row = vec![t.to_string()];
        let x = &traj.states[t];
        for i in 0..ensemble.len() {
            row.push(number(traj.angle(t, i)));
            row.push(number(traj.headings[t][i]));
            row.extend(x[ensemble.state_range(i)].iter().map(|v| number(*v)));
        }
        match traj.controls.get(t) {
            Some(u) => row.extend(u.to_flat().into_iter().map(number)),
            None => row.extend(std::iter::repeat_n(String::new(), width)),
        }
        row.extend(traj.aux[t].w.iter().map(|v| number(*v)));
        row.extend(ensemble.constraints(x).into_iter().map(number));
        out.write_record(&row).map_err(csv_error)?;
    }
    out.flush().map_err(|e| Error::Io(e.to_string()))
}

pub fn write_controls<W: Write>(writer: W, ensemble: &Ensemble, controls: &[JointControl]) -> Result<()> {
    let mut out = csv::Writer::from_writer(writer);
    out.write_record(controls_header(ensemble)).map_err(csv_error)?;
    for (t, u) in controls.iter().enumerate() {
        u.check_layout(ensemble.layout())?;
        let mut row = vec![t.to_string()];
        row.extend(u.to_flat().into_iter().map(number));
        out.write_record(&row).map_err(csv_error)?;
    }
    out.flush().map_err(|e| Error::Io(e.to_string()))
}

fn records<R: Read>(reader: R, expected: &[String]) -> Result<Vec<csv::StringRecord>> {
    let mut input = csv::Reader::from_reader(reader);
    let header = input.headers().map_err(csv_error)?.clone();
    if header.iter().ne(expected.iter().map(String::as_str)) {
        return Err(Error::Parse(format!(
            "unexpected header; expected {}",
            expected.join(",")
        )));
    }
    input.records().map(|r| r.map_err(csv_error)).collect()
}

fn parse(field: &str, row: usize, column: &str) -> Result<f64> {
    field
        .trim()
        .parse::<f64>()
        .map_err(|_| Error::Parse(format!("row {row}, column {column}: cannot parse {field:?}")))
}

fn check_step(record: &csv::StringRecord, row: usize) -> Result<()> {
    match record[0].trim().parse::<usize>() {
        Ok(t) if t == row => Ok(()),
        _ => Err(Error::Parse(format!("row {row}: expected t = {row}, found {:?}", &record[0]))),
    }
}

fn parse_controls(
    ensemble: &Ensemble,
    record: &csv::StringRecord,
    header: &[String],
    start: usize,
    row: usize,
) -> Result<JointControl> {
    let width = ensemble.layout().total_dim();
    let flat = (start..start + width)
        .map(|c| parse(&record[c], row, &header[c]))
        .collect::<Result<Vec<_>>>()?;
    JointControl::from_flat(ensemble.layout(), &flat)
}

pub fn read_controls<R: Read>(reader: R, ensemble: &Ensemble) -> Result<Vec<JointControl>> {
    let header = controls_header(ensemble);
    records(reader, &header)?
        .iter()
        .enumerate()
        .map(|(row, rec)| {
            check_step(rec, row)?;
            parse_controls(ensemble, rec, &header, 1, row)
        })
        .collect()
}

/// Reads a complete trajectory file. Rotations are rebuilt from the wrapped angles.
pub fn read_trajectory<R: Read>(reader: R, ensemble: &Ensemble) -> Result<JointTrajectory> {
    let header = trajectory_header(ensemble);
    let rows = records(reader, &header)?;
    if rows.is_empty() {
        return Err(Error::Parse("trajectory file has no rows".into()));
    }
    let state_width: usize = ensemble
        .plants()
        .iter()
        .enumerate()
        .map(|(i, p)| state_columns(p, i + 1).len())
        .sum();
    let control_start = 1 + state_width;
    let aux_start = control_start + ensemble.layout().total_dim();
    let last = rows.len() - 1;
    let mut traj = JointTrajectory {
        rotations: Vec::with_capacity(rows.len()),
        headings: Vec::with_capacity(rows.len()),
        states: Vec::with_capacity(rows.len()),
        aux: Vec::with_capacity(rows.len()),
        controls: Vec::with_capacity(last),
    };
    for (row, rec) in rows.iter().enumerate() {
        check_step(rec, row)?;
        let value = |c: usize| parse(&rec[c], row, &header[c]);
        let mut c = 1;
        let mut rotations = Vec::with_capacity(ensemble.len());
        let mut headings = Vec::with_capacity(ensemble.len());
        let mut state = Vec::with_capacity(ensemble.state_dim());
        for p in ensemble.plants() {
            rotations.push(rotation(value(c)?));
            headings.push(value(c + 1)?);
            for k in 0..p.euclid_dim() {
                state.push(value(c + 2 + k)?);
            }
            c += 2 + p.euclid_dim();
        }
        traj.rotations.push(rotations);
        traj.headings.push(headings);
        traj.states.push(state);
        traj.aux.push(AuxState {
            w: [value(aux_start)?, value(aux_start + 1)?],
        });
        if row < last {
            traj.controls.push(parse_controls(ensemble, rec, &header, control_start, row)?);
        } else if (control_start..aux_start).any(|c| !rec[c].trim().is_empty()) {
            return Err(Error::Parse(format!("row {row}: controls must be blank on the last row")));
        }
    }
    Ok(traj)
}
