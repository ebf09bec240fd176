//! Persistence of solved value grids: one flat little-endian `f64` tensor
//! file plus a JSON sidecar describing shapes, axes, tensor offsets and the
//! model the grid was solved for.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::control::{GridMeta, ValueGrid};
use crate::error::{EngineError, Result};

#[derive(Serialize, Deserialize)]
struct TensorInfo {
    name: String,
    /// Offset into the binary file, in f64 units.
    offset: usize,
    len: usize,
}

#[derive(Serialize, Deserialize)]
struct Spacing {
    dt: f64,
    dr: f64,
    dx: f64,
    dd: f64,
}

#[derive(Serialize, Deserialize)]
struct Sidecar {
    steps: usize,
    nr: usize,
    nx: usize,
    nd: usize,
    spacing: Spacing,
    times: Vec<f64>,
    wealth: Vec<f64>,
    stock: Vec<f64>,
    demand: Vec<f64>,
    tensors: Vec<TensorInfo>,
    meta: GridMeta,
}

fn paths(base: &Path) -> (PathBuf, PathBuf) {
    let mut json = base.as_os_str().to_owned();
    json.push(".json");
    let mut bin = base.as_os_str().to_owned();
    bin.push(".bin");
    (PathBuf::from(json), PathBuf::from(bin))
}

/// Writes `{base}.json` and `{base}.bin`.
pub fn save_value_grid(grid: &ValueGrid, base: &Path) -> Result<()> {
    let (json_path, bin_path) = paths(base);
    let tensor_list: [(&str, &[f64]); 6] = [
        ("values", &grid.values),
        ("policy_q", &grid.policy_q),
        ("policy_u", &grid.policy_u),
        ("policy_theta", &grid.policy_theta),
        ("vol_table", &grid.vol_table),
        ("drift_table", &grid.drift_table),
    ];

    let mut tensors = Vec::new();
    let mut offset = 0usize;
    for (name, data) in &tensor_list {
        tensors.push(TensorInfo {
            name: name.to_string(),
            offset,
            len: data.len(),
        });
        offset += data.len();
    }
    let sidecar = Sidecar {
        steps: grid.n_steps(),
        nr: grid.wealth.len(),
        nx: grid.stock.len(),
        nd: grid.demand.len(),
        spacing: Spacing {
            dt: grid.dt(),
            dr: grid.wealth[1] - grid.wealth[0],
            dx: grid.stock[1] - grid.stock[0],
            dd: grid.demand[1] - grid.demand[0],
        },
        times: grid.times.clone(),
        wealth: grid.wealth.clone(),
        stock: grid.stock.clone(),
        demand: grid.demand.clone(),
        tensors,
        meta: grid.meta.clone(),
    };
    let json =
        serde_json::to_string_pretty(&sidecar).map_err(|e| EngineError::Format(e.to_string()))?;
    std::fs::write(&json_path, json)?;

    let mut w = BufWriter::new(File::create(&bin_path)?);
    for (_, data) in &tensor_list {
        for x in *data {
            w.write_all(&x.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Loads a grid written by [`save_value_grid`].
pub fn load_value_grid(base: &Path) -> Result<ValueGrid> {
    let (json_path, bin_path) = paths(base);
    let sidecar: Sidecar = serde_json::from_str(&std::fs::read_to_string(&json_path)?)
        .map_err(|e| EngineError::Format(format!("bad sidecar {}: {e}", json_path.display())))?;

    let mut raw = Vec::new();
    BufReader::new(File::open(&bin_path)?).read_to_end(&mut raw)?;
    if raw.len() % 8 != 0 {
        return Err(EngineError::Format(
            "tensor file length not a multiple of 8".into(),
        ));
    }
    let all: Vec<f64> = raw
        .chunks_exact(8)
        .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
        .collect();

    let fetch = |name: &str| -> Result<Vec<f64>> {
        let info = sidecar
            .tensors
            .iter()
            .find(|t| t.name == name)
            .ok_or_else(|| EngineError::Format(format!("tensor {name} missing from sidecar")))?;
        if info.offset + info.len > all.len() {
            return Err(EngineError::Format(format!(
                "tensor {name} extends past the end of the file"
            )));
        }
        Ok(all[info.offset..info.offset + info.len].to_vec())
    };

    let stride = sidecar.nr * sidecar.nx * sidecar.nd;
    let values = fetch("values")?;
    if values.len() != (sidecar.steps + 1) * stride
        || sidecar.times.len() != sidecar.steps + 1
        || sidecar.wealth.len() != sidecar.nr
        || sidecar.stock.len() != sidecar.nx
        || sidecar.demand.len() != sidecar.nd
    {
        return Err(EngineError::Format(
            "sidecar shapes are inconsistent".into(),
        ));
    }

    Ok(ValueGrid {
        times: sidecar.times,
        wealth: sidecar.wealth,
        stock: sidecar.stock,
        demand: sidecar.demand,
        values,
        policy_q: fetch("policy_q")?,
        policy_u: fetch("policy_u")?,
        policy_theta: fetch("policy_theta")?,
        vol_table: fetch("vol_table")?,
        drift_table: fetch("drift_table")?,
        meta: sidecar.meta,
    })
}
