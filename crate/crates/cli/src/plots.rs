//! Tabular series for external plotting. Each table has one row per frame;
//! a run without frames (or without truth, for errors) gives a header only.

use std::path::Path;

use hops_core::body::{BodyModel, Vertex};
use hops_core::pipeline::Solution;
use hops_core::sim::ErrorSeries;

use crate::CliError;

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

const VERTICES: [(Vertex, &str); 4] = [
    (Vertex::Root, "root"),
    (Vertex::Head, "head"),
    (Vertex::HandLeft, "hand_left"),
    (Vertex::HandRight, "hand_right"),
];

/// Root, head and hand positions per frame.
pub fn body_table(model: &BodyModel, sol: &Solution) -> Result<Table, CliError> {
    let mut header = vec!["time".to_string()];
    for (_, name) in VERTICES {
        header.extend(["x", "y", "z"].map(|a| format!("{name}_{a}")));
    }
    let mut rows = Vec::with_capacity(sol.times.len());
    for (t, p) in sol.times.iter().zip(&sol.body) {
        let mut row = vec![*t];
        for (v, _) in VERTICES {
            let q = model
                .forward_kinematics(p, v)
                .map_err(|e| CliError::stage("export", e))?;
            row.extend([q.x, q.y, q.z]);
        }
        rows.push(row);
    }
    Ok(Table { header, rows })
}

/// Position and yaw of every object per frame.
pub fn object_table(sol: &Solution) -> Table {
    let mut header = vec!["time".to_string()];
    for o in &sol.objects {
        header.extend(["x", "y", "z", "yaw"].map(|a| format!("{}_{a}", o.object)));
    }
    let rows = sol
        .times
        .iter()
        .enumerate()
        .map(|(i, t)| {
            let mut row = vec![*t];
            for o in &sol.objects {
                let p = &o.poses[i];
                row.extend([p.translation.x, p.translation.y, p.translation.z, p.yaw()]);
            }
            row
        })
        .collect();
    Table { header, rows }
}

pub fn error_table(series: Option<&ErrorSeries>) -> Table {
    let header = ["time", "e_obj", "e_body"].map(String::from).to_vec();
    let rows = series.map_or_else(Vec::new, |s| {
        s.times
            .iter()
            .zip(&s.object)
            .zip(&s.body)
            .map(|((t, o), b)| vec![*t, *o, *b])
            .collect()
    });
    Table { header, rows }
}

pub fn write_csv(path: &Path, table: &Table) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| CliError::io(path, e.into()))?;
    w.write_record(&table.header)
        .map_err(|e| CliError::io(path, e.into()))?;
    for row in &table.rows {
        w.write_record(row.iter().map(|v| v.to_string()))
            .map_err(|e| CliError::io(path, e.into()))?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}
