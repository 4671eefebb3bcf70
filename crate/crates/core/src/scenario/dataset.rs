use std::io::Write;
use std::ops::Range;
use std::path::Path;

use ndarray::{s, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::LoadScenarioSet;
use crate::error::{Error, Result};
use crate::measurement::{phasors_to_features, true_phasors, NoiseSpec, PmuPlacement};
use crate::netmodel::{BranchEnd, Grid};
use crate::par::{self, Execution};
use crate::powerflow::{self, BusState, FlowInjection, ScheduledPower, SolverOptions};
use crate::rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSizes {
    pub train: usize,
    pub validation: usize,
    pub test: usize,
}

impl DatasetSizes {
    pub const DESK: DatasetSizes = DatasetSizes {
        train: 5000,
        validation: 500,
        test: 1500,
    };
    pub const FULL: DatasetSizes = DatasetSizes {
        train: 20000,
        validation: 2000,
        test: 6000,
    };

    pub fn total(&self) -> usize {
        self.train + self.validation + self.test
    }

    /// Scenarios to generate so that ~5 % can fail to converge.
    pub fn oversampled(&self) -> usize {
        (self.total() * 105).div_ceil(100)
    }
}

impl Default for DatasetSizes {
    fn default() -> Self {
        DatasetSizes::DESK
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Range<usize>,
    pub validation: Range<usize>,
    pub test: Range<usize>,
}

impl Split {
    fn from_sizes(sizes: DatasetSizes) -> Split {
        let a = sizes.train;
        let b = a + sizes.validation;
        Split {
            train: 0..a,
            validation: a..b,
            test: b..b + sizes.test,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub model_name: String,
    pub base_power: f64,
    pub seed: u64,
    pub placement: PmuPlacement,
    pub split: Split,
    /// Originating scenario of every row; doubles as the noise-stream sample key.
    pub scenario_ids: Vec<u64>,
    pub dropped_scenarios: Vec<u64>,
    pub noise: Option<NoiseSpec>,
    pub noise_seed: Option<u64>,
}

/// Noiseless PMU features, flow/injection labels and the underlying states.
///
/// Rows are ordered train, validation, test. `states` holds all bus
/// magnitudes (pu) followed by all slack-referenced angles (rad).
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub z: Array2<f64>,
    pub y: Array2<f64>,
    pub states: Array2<f64>,
    pub feature_names: Vec<String>,
    pub target_names: Vec<String>,
    pub meta: DatasetMeta,
}

struct Sample {
    state: BusState,
    y: Vec<f64>,
}

/// Solves every scenario, drops the ones that fail, shuffles the survivors
/// with `seed` and cuts them into train/validation/test.
pub fn build_dataset(
    grid: &Grid,
    scenarios: &LoadScenarioSet,
    placement: &PmuPlacement,
    sizes: DatasetSizes,
    seed: u64,
    exec: Execution,
) -> Result<Dataset> {
    let model = &grid.model;
    model.require_lossless_shunts()?;
    let required = sizes.total();
    if required == 0 || required > scenarios.len() {
        return Err(Error::InvalidParameter(format!(
            "dataset needs {required} samples but only {} scenarios were generated",
            scenarios.len()
        )));
    }
    let nb = model.bus_count();
    let solved: Vec<Option<Sample>> = par::map_indexed(exec, scenarios.len(), |s| {
        let sched = ScheduledPower::scaled(model, &scenarios.bus_multipliers(s, nb));
        let sol = powerflow::solve(model, &grid.admittance, &sched, SolverOptions::default()).ok()?;
        let fi = FlowInjection::evaluate(&sol.state, model).ok()?;
        Some(Sample {
            state: sol.state,
            y: fi.stacked(),
        })
    });
    let mut converged = Vec::new();
    let mut dropped = Vec::new();
    for (s, r) in solved.iter().enumerate() {
        if r.is_some() {
            converged.push(s);
        } else {
            dropped.push(s as u64);
        }
    }
    if !dropped.is_empty() {
        log::warn!(
            "{} of {} scenarios did not converge and were dropped",
            dropped.len(),
            scenarios.len()
        );
    }
    if converged.len() < required {
        return Err(Error::InsufficientScenarios {
            converged: converged.len(),
            required,
        });
    }
    converged.shuffle(&mut rng::seeded(rng::derive(seed, "split")));
    converged.truncate(required);

    let m = grid.target_count();
    let mut y = Array2::zeros((required, m));
    let mut states = Array2::zeros((required, 2 * nb));
    for (row, &s) in converged.iter().enumerate() {
        let sample = solved[s].as_ref().expect("converged");
        y.row_mut(row).assign(&ndarray::aview1(&sample.y));
        states
            .slice_mut(s![row, ..nb])
            .assign(&ndarray::aview1(&sample.state.v_mag));
        states
            .slice_mut(s![row, nb..])
            .assign(&ndarray::aview1(&sample.state.v_ang));
    }
    let meta = DatasetMeta {
        model_name: model.name().to_string(),
        base_power: model.base_power(),
        seed,
        placement: placement.clone(),
        split: Split::from_sizes(sizes),
        scenario_ids: converged.iter().map(|&s| s as u64).collect(),
        dropped_scenarios: dropped,
        noise: None,
        noise_seed: None,
    };
    let z = extract_features(grid, states.view(), placement, exec)?;
    Ok(Dataset {
        z,
        y,
        states,
        feature_names: placement.feature_names(),
        target_names: target_names(grid),
        meta,
    })
}

fn extract_features(
    grid: &Grid,
    states: ArrayView2<f64>,
    placement: &PmuPlacement,
    exec: Execution,
) -> Result<Array2<f64>> {
    let nb = grid.bus_count();
    let n = placement.feature_count();
    let rows = par::try_map_indexed(exec, states.nrows(), |r| {
        let st = states.row(r);
        let state = BusState {
            v_mag: st.slice(s![..nb]).to_vec(),
            v_ang: st.slice(s![nb..]).to_vec(),
        };
        let ph = true_phasors(&state, &grid.admittance, &grid.model, placement)?;
        let mut out = vec![0.0; n];
        phasors_to_features(&ph, &mut out);
        Ok::<_, Error>(out)
    })?;
    let flat: Vec<f64> = rows.into_iter().flatten().collect();
    Ok(Array2::from_shape_vec((states.nrows(), n), flat).expect("row lengths match"))
}

/// Names in target column order: `pf_<branch>_<from>_<to>` / `pt_…` for
/// from-/to-end flows, then `pinj_<bus>`.
pub fn target_names(grid: &Grid) -> Vec<String> {
    let model = &grid.model;
    let mut names: Vec<String> = grid
        .conversion
        .flow_index
        .iter()
        .map(|f| {
            let br = &model.branches()[f.branch];
            let tag = match f.end {
                BranchEnd::From => "pf",
                BranchEnd::To => "pt",
            };
            format!("{tag}_{}_{}_{}", f.branch, br.from_bus, br.to_bus)
        })
        .collect();
    names.extend(model.buses().iter().map(|b| format!("pinj_{}", b.id)));
    names
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.z.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn flow_count(&self) -> usize {
        self.y.ncols() - self.states.ncols() / 2
    }

    pub fn split(&self) -> &Split {
        &self.meta.split
    }

    pub fn placement(&self) -> &PmuPlacement {
        &self.meta.placement
    }

    pub fn state_at(&self, row: usize) -> BusState {
        let nb = self.states.ncols() / 2;
        let st = self.states.row(row);
        BusState {
            v_mag: st.slice(s![..nb]).to_vec(),
            v_ang: st.slice(s![nb..]).to_vec(),
        }
    }

    /// Same samples, features re-extracted from the stored states for another placement.
    pub fn with_placement(&self, grid: &Grid, placement: &PmuPlacement, exec: Execution) -> Result<Dataset> {
        let z = extract_features(grid, self.states.view(), placement, exec)?;
        let mut meta = self.meta.clone();
        meta.placement = placement.clone();
        Ok(Dataset {
            z,
            y: self.y.clone(),
            states: self.states.clone(),
            feature_names: placement.feature_names(),
            target_names: self.target_names.clone(),
            meta,
        })
    }

    /// Rows `range` of features, labels and states.
    pub fn rows(&self, range: Range<usize>) -> (ArrayView2<'_, f64>, ArrayView2<'_, f64>, ArrayView2<'_, f64>) {
        (
            self.z.slice(s![range.clone(), ..]),
            self.y.slice(s![range.clone(), ..]),
            self.states.slice(s![range, ..]),
        )
    }

    /// Sample keys of rows `range` for the noise streams.
    pub fn sample_keys(&self, range: Range<usize>) -> &[u64] {
        &self.meta.scenario_ids[range]
    }

    /// Largest `|injections − A·flows|` over all rows, MW.
    pub fn conservation_gap(&self, grid: &Grid) -> f64 {
        let mb = grid.flow_count();
        self.y
            .axis_iter(Axis(0))
            .map(|row| {
                let row = row.to_vec();
                let inj = grid.conversion.injections_from_flows(&row[..mb]);
                inj.iter()
                    .zip(&row[mb..])
                    .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()))
            })
            .fold(0.0, f64::max)
    }

    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_matrix(&dir.join("features.csv"), &self.feature_names, self.z.view())?;
        write_matrix(&dir.join("targets.csv"), &self.target_names, self.y.view())?;
        let nb = self.states.ncols() / 2;
        let state_names: Vec<String> = (0..nb)
            .map(|i| format!("vm_{i}"))
            .chain((0..nb).map(|i| format!("va_{i}")))
            .collect();
        write_matrix(&dir.join("states.csv"), &state_names, self.states.view())?;
        let path = dir.join("meta.json");
        let text = serde_json::to_string_pretty(&self.meta).map_err(|e| Error::format(&path, e))?;
        std::fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))
    }

    pub fn read(dir: impl AsRef<Path>) -> Result<Dataset> {
        let dir = dir.as_ref();
        let path = dir.join("meta.json");
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let meta: DatasetMeta = serde_json::from_str(&text).map_err(|e| Error::format(&path, e))?;
        let (feature_names, z) = read_matrix(&dir.join("features.csv"))?;
        let (target_names, y) = read_matrix(&dir.join("targets.csv"))?;
        let (_, states) = read_matrix(&dir.join("states.csv"))?;
        if z.nrows() != y.nrows() || y.nrows() != states.nrows() || meta.scenario_ids.len() != y.nrows() {
            return Err(Error::format(dir, "dataset files disagree on row count"));
        }
        Ok(Dataset {
            z,
            y,
            states,
            feature_names,
            target_names,
            meta,
        })
    }
}

pub(crate) fn write_matrix(path: &Path, header: &[String], data: ArrayView2<f64>) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    let io = |e| Error::io(path, e);
    writeln!(w, "{}", header.join(",")).map_err(io)?;
    for row in data.rows() {
        let mut first = true;
        for x in row {
            if !first {
                w.write_all(b",").map_err(io)?;
            }
            first = false;
            write!(w, "{x}").map_err(io)?;
        }
        w.write_all(b"\n").map_err(io)?;
    }
    w.flush().map_err(io)
}

pub(crate) fn read_matrix(path: &Path) -> Result<(Vec<String>, Array2<f64>)> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| Error::format(path, e))?;
    let header: Vec<String> = rdr
        .headers()
        .map_err(|e| Error::format(path, e))?
        .iter()
        .map(str::to_string)
        .collect();
    let mut data = Vec::new();
    let mut rows = 0;
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::format(path, e))?;
        for field in rec.iter() {
            data.push(field.parse::<f64>().map_err(|e| Error::format(path, e))?);
        }
        rows += 1;
    }
    let m = Array2::from_shape_vec((rows, header.len()), data).map_err(|e| Error::format(path, e))?;
    Ok((header, m))
}
