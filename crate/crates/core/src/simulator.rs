//! Closed-form synthetic building-energy model used as the high-fidelity
//! reference ("ground truth") for the surrogates.
//!
//! All outputs are annual energies in MWh. The `max(0, ·)` kinks on heating
//! and cooling and the fuel-mix switch at 0.5 make the fuel-split outputs
//! deliberately harder to emulate than the smooth ones.

use std::thread;
use std::time::Duration;

use ndarray::{Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::design_space::{lhs_sample, Dataset, DesignSpace, Parameter};
use crate::error::{Error, Result};

pub const INPUT_NAMES: [&str; 10] = [
    "u_wall", "u_roof", "u_win", "wwr", "ach", "gains", "hrv", "shgc", "pv_frac", "fuel_mix",
];

pub const OUTPUT_NAMES: [&str; 6] = [
    "heating_demand",
    "cooling_demand",
    "heating_gas",
    "heating_elec",
    "fans",
    "pv_generation",
];

/// Outputs whose targets are smooth functions of the inputs.
pub const SMOOTH_OUTPUTS: [&str; 3] = ["heating_demand", "cooling_demand", "pv_generation"];
/// Outputs split by the discontinuous fuel-mix switch.
pub const FUEL_SPLIT_OUTPUTS: [&str; 2] = ["heating_gas", "heating_elec"];

const BOUNDS: [(f64, f64, &str); 10] = [
    (0.1, 1.0, "W/m2K"),
    (0.1, 0.6, "W/m2K"),
    (0.8, 3.0, "W/m2K"),
    (0.1, 0.9, "-"),
    (0.1, 1.5, "1/h"),
    (5.0, 25.0, "W/m2"),
    (0.0, 0.9, "-"),
    (0.2, 0.8, "-"),
    (0.0, 0.5, "-"),
    (0.0, 1.0, "-"),
];

/// The default 10-dimensional design space.
pub fn default_space() -> DesignSpace {
    DesignSpace::new(
        INPUT_NAMES
            .iter()
            .zip(BOUNDS)
            .map(|(name, (lo, hi, unit))| Parameter::new(*name, lo, hi, unit))
            .collect(),
    )
    .expect("built-in space is valid")
}

pub fn output_names() -> Vec<String> {
    OUTPUT_NAMES.iter().map(|s| s.to_string()).collect()
}

/// Physical unit of every output.
pub fn output_unit(_name: &str) -> &'static str {
    "MWh/yr"
}

/// Whether a larger value of the output is preferable (only PV generation).
pub fn higher_is_better(name: &str) -> bool {
    name == "pv_generation"
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BuildingParams {
    pub u_wall: f64,
    pub u_roof: f64,
    pub u_win: f64,
    pub wwr: f64,
    pub ach: f64,
    pub gains: f64,
    pub hrv: f64,
    pub shgc: f64,
    pub pv_frac: f64,
    pub fuel_mix: f64,
}

impl BuildingParams {
    /// Values in [`INPUT_NAMES`] order.
    pub fn from_slice(v: &[f64]) -> Result<Self> {
        if v.len() != INPUT_NAMES.len() {
            return Err(Error::DimensionMismatch {
                context: "building parameters",
                expected: INPUT_NAMES.len(),
                got: v.len(),
            });
        }
        Ok(Self {
            u_wall: v[0],
            u_roof: v[1],
            u_win: v[2],
            wwr: v[3],
            ach: v[4],
            gains: v[5],
            hrv: v[6],
            shgc: v[7],
            pv_frac: v[8],
            fuel_mix: v[9],
        })
    }

    pub fn to_array(&self) -> [f64; 10] {
        [
            self.u_wall,
            self.u_roof,
            self.u_win,
            self.wwr,
            self.ach,
            self.gains,
            self.hrv,
            self.shgc,
            self.pv_frac,
            self.fuel_mix,
        ]
    }

    pub fn midpoint() -> Self {
        Self::from_slice(&default_space().midpoint()).expect("ten parameters")
    }

    pub fn validate(&self) -> Result<()> {
        for ((name, (lo, hi, _)), v) in INPUT_NAMES.iter().zip(BOUNDS).zip(self.to_array()) {
            if !(v >= lo && v <= hi) {
                return Err(Error::OutOfBounds {
                    name: name.to_string(),
                    value: v,
                    lower: lo,
                    upper: hi,
                });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BuildingConstants {
    /// wall area, m²
    pub a_wall: f64,
    /// roof area, m²
    pub a_roof: f64,
    /// floor area, m²
    pub a_floor: f64,
    /// heated volume, m³
    pub volume: f64,
    /// heating degree hours, Kh
    pub hdh: f64,
    /// cooling degree hours, Kh
    pub cdh: f64,
    pub heating_hours: f64,
    pub cooling_hours: f64,
    /// solar irradiation on the facade, kWh/m²yr
    pub solar: f64,
    /// specific PV yield, kWh/m²yr
    pub pv_yield: f64,
}

impl Default for BuildingConstants {
    fn default() -> Self {
        Self {
            a_wall: 800.0,
            a_roof: 600.0,
            a_floor: 1800.0,
            volume: 6000.0,
            hdh: 90_000.0,
            cdh: 20_000.0,
            heating_hours: 3000.0,
            cooling_hours: 1500.0,
            solar: 350.0,
            pv_yield: 180.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimOutputs {
    pub heating_demand: f64,
    pub cooling_demand: f64,
    pub heating_gas: f64,
    pub heating_elec: f64,
    pub fans: f64,
    pub pv_generation: f64,
}

impl SimOutputs {
    pub fn to_array(&self) -> [f64; 6] {
        [
            self.heating_demand,
            self.cooling_demand,
            self.heating_gas,
            self.heating_elec,
            self.fans,
            self.pv_generation,
        ]
    }
}

const GAS_EFFICIENCY: f64 = 0.92;
const HEAT_PUMP_COP: f64 = 3.0;

pub fn simulate(p: &BuildingParams, c: &BuildingConstants) -> Result<SimOutputs> {
    p.validate()?;
    let ua = c.a_wall * (1.0 - p.wwr) * p.u_wall + c.a_wall * p.wwr * p.u_win + c.a_roof * p.u_roof;
    let inf = 0.33 * p.ach * c.volume * (1.0 - p.hrv);
    let solar = c.solar * c.a_wall * p.wwr * p.shgc;
    let q_heat = ((ua + inf) * c.hdh * 1e-3
        - 0.6 * solar
        - 0.8 * p.gains * c.a_floor * c.heating_hours * 1e-3)
        .max(0.0);
    let q_cool = ((ua + inf) * c.cdh * 1e-3 * 0.3 + 0.4 * solar
        + p.gains * c.a_floor * c.cooling_hours * 1e-3
        - 50.0 * (1.0 - p.wwr) * c.a_wall)
        .max(0.0);
    let (gas, elec) = if p.fuel_mix > 0.5 {
        (
            q_heat * p.fuel_mix / GAS_EFFICIENCY,
            q_heat * (1.0 - p.fuel_mix) / HEAT_PUMP_COP,
        )
    } else {
        (0.0, q_heat / HEAT_PUMP_COP)
    };
    let fans = (0.02 * q_cool + 0.01 * q_heat) * (1.0 + 0.5 * p.ach);
    let pv = c.pv_yield * c.a_roof * p.pv_frac;
    Ok(SimOutputs {
        heating_demand: q_heat / 1000.0,
        cooling_demand: q_cool / 1000.0,
        heating_gas: gas / 1000.0,
        heating_elec: elec / 1000.0,
        fans: fans / 1000.0,
        pv_generation: pv / 1000.0,
    })
}

/// Simulator handle with optional artificial per-run latency.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Simulator {
    pub constants: BuildingConstants,
    #[serde(with = "duration_ms")]
    pub latency: Duration,
}

impl Simulator {
    pub fn new(constants: BuildingConstants) -> Self {
        Self {
            constants,
            latency: Duration::ZERO,
        }
    }

    pub fn with_latency(mut self, latency: Duration) -> Self {
        self.latency = latency;
        self
    }

    pub fn run(&self, p: &BuildingParams) -> Result<SimOutputs> {
        if !self.latency.is_zero() {
            thread::sleep(self.latency);
        }
        simulate(p, &self.constants)
    }

    pub fn run_row(&self, x: &ArrayView1<f64>) -> Result<SimOutputs> {
        self.run(&BuildingParams::from_slice(&x.to_vec())?)
    }
}

mod duration_ms {
    use std::time::Duration;

    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u64(d.as_millis() as u64)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        Ok(Duration::from_millis(u64::deserialize(d)?))
    }
}

/// Row-wise [`simulate`] over inputs in [`INPUT_NAMES`] order.
pub fn simulate_batch(x: &ArrayView2<f64>, sim: &Simulator) -> Result<Array2<f64>> {
    let mut out = Array2::zeros((x.nrows(), OUTPUT_NAMES.len()));
    for (i, row) in x.outer_iter().enumerate() {
        let y = sim.run_row(&row).map_err(|e| Error::Row {
            row: i,
            source: Box::new(e),
        })?;
        out.row_mut(i).assign(&ArrayView1::from(&y.to_array()));
    }
    Ok(out)
}

/// Column order mapping from `space` onto [`INPUT_NAMES`].
fn building_columns(space: &DesignSpace) -> Result<Vec<usize>> {
    let names = space.names();
    if names.len() != INPUT_NAMES.len() {
        return Err(Error::InvalidSpace(format!(
            "building simulator needs {} parameters, space has {}",
            INPUT_NAMES.len(),
            names.len()
        )));
    }
    INPUT_NAMES
        .iter()
        .map(|n| {
            names.iter().position(|m| m == n).ok_or_else(|| {
                Error::InvalidSpace(format!("design space lacks building parameter `{n}`"))
            })
        })
        .collect()
}

/// LHS design over `space` evaluated by the simulator.
pub fn generate_dataset(space: &DesignSpace, n: usize, seed: u64, sim: &Simulator) -> Result<Dataset> {
    space.validate()?;
    let cols = building_columns(space)?;
    let x = if n == 0 {
        Array2::zeros((0, space.dim()))
    } else {
        lhs_sample(space, n, seed)?
    };
    let ordered = x.select(ndarray::Axis(1), &cols);
    let y = simulate_batch(&ordered.view(), sim)?;
    Dataset::new(x, y, space.names(), output_names())?.with_space(space.clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn sim() -> Simulator {
        Simulator::default()
    }

    #[test]
    fn midpoint_matches_hand_evaluation() {
        // Independent evaluation of the closed form:
        // UA = 1190, inf = 871.2, solar = 70000
        let out = simulate(&BuildingParams::midpoint(), &BuildingConstants::default()).unwrap();
        assert_relative_eq!(out.heating_demand, 78.708, max_relative = 1e-12);
        assert_relative_eq!(out.cooling_demand, 60.8672, max_relative = 1e-12);
        assert_eq!(out.heating_gas, 0.0);
        assert_relative_eq!(out.heating_elec, 26.236, max_relative = 1e-12);
        assert_relative_eq!(out.fans, 2.8061936, max_relative = 1e-12);
        assert_relative_eq!(out.pv_generation, 27.0, max_relative = 1e-12);
    }

    #[test]
    fn zero_pv_fraction_means_no_generation() {
        let mut p = BuildingParams::midpoint();
        p.pv_frac = 0.0;
        assert_eq!(simulate(&p, &Default::default()).unwrap().pv_generation, 0.0);
    }

    #[test]
    fn heat_recovery_never_increases_heating() {
        let mut p = BuildingParams::midpoint();
        let mut last = f64::INFINITY;
        for k in 0..=9 {
            p.hrv = 0.1 * k as f64;
            let q = simulate(&p, &Default::default()).unwrap().heating_demand;
            assert!(q <= last);
            last = q;
        }
    }

    #[test]
    fn fuel_split_accounting() {
        let c = BuildingConstants::default();
        for fm in [0.2, 0.5, 0.51, 0.9] {
            let mut p = BuildingParams::midpoint();
            p.fuel_mix = fm;
            let o = simulate(&p, &c).unwrap();
            let q = o.heating_demand;
            let expect = if fm > 0.5 {
                q * fm / GAS_EFFICIENCY + q * (1.0 - fm) / HEAT_PUMP_COP
            } else {
                q / HEAT_PUMP_COP
            };
            assert_relative_eq!(o.heating_gas + o.heating_elec, expect, max_relative = 1e-12);
        }
    }

    #[test]
    fn out_of_bounds_names_field() {
        let mut p = BuildingParams::midpoint();
        p.u_wall = 2.0;
        match simulate(&p, &Default::default()) {
            Err(Error::OutOfBounds { name, .. }) => assert_eq!(name, "u_wall"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn empty_dataset_keeps_header() {
        let ds = generate_dataset(&default_space(), 0, 1, &sim()).unwrap();
        assert_eq!(ds.len(), 0);
        assert_eq!(ds.input_names.len(), 10);
        assert_eq!(ds.output_names, output_names());
    }

    #[test]
    fn batch_equals_row_by_row() {
        let space = default_space();
        let x = lhs_sample(&space, 20, 4).unwrap();
        let y = simulate_batch(&x.view(), &sim()).unwrap();
        for (xr, yr) in x.outer_iter().zip(y.outer_iter()) {
            let o = sim().run_row(&xr).unwrap().to_array();
            assert_eq!(yr.to_vec(), o.to_vec());
        }
    }

    #[test]
    fn dataset_row_zero_composes_lhs_and_simulate() {
        let space = default_space();
        let ds = generate_dataset(&space, 100, 1, &sim()).unwrap();
        let x0 = lhs_sample(&space, 100, 1).unwrap().row(0).to_owned();
        let y0 = simulate(
            &BuildingParams::from_slice(x0.as_slice().unwrap()).unwrap(),
            &BuildingConstants::default(),
        )
        .unwrap();
        assert_eq!(ds.x.row(0), x0);
        assert_eq!(ds.y.row(0).to_vec(), y0.to_array().to_vec());
    }

    #[test]
    fn reordered_space_maps_by_name() {
        let mut space = default_space();
        space.params.reverse();
        let ds = generate_dataset(&space, 5, 2, &sim()).unwrap();
        for (xr, yr) in ds.x.outer_iter().zip(ds.y.outer_iter()) {
            let mut v = xr.to_vec();
            v.reverse();
            let o = simulate(&BuildingParams::from_slice(&v).unwrap(), &Default::default()).unwrap();
            assert_eq!(yr.to_vec(), o.to_array().to_vec());
        }
    }

    #[test]
    fn batch_error_carries_row_index() {
        let mut x = lhs_sample(&default_space(), 3, 0).unwrap();
        x[[2, 4]] = 9.0;
        match simulate_batch(&x.view(), &sim()) {
            Err(Error::Row { row: 2, source }) => {
                assert!(matches!(*source, Error::OutOfBounds { ref name, .. } if name == "ach"))
            }
            other => panic!("unexpected {other:?}"),
        }
    }
}
